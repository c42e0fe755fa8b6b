"""Operator console modelled on a host-attached debug utility.

Commands run as sideband requests issued from the controller node of card 0,
and each one advances virtual time just far enough to complete.  Targets on
the controller's own card go over the Ring Bus; everything else goes over
NetTunnel.
"""

from __future__ import annotations

import shlex
import sys
from pathlib import Path
from typing import TextIO

from .errors import IncSimError
from .sideband import REG_BOOT_CMD, REG_BUILD_ID, BOOT_MAGIC, BroadcastWrite, Read, Write, wait
from .system import System
from .topology import Coord, NodeRole, card_of

HELP = """commands:
  rd <node> <addr>            read one word (node as x,y,z or xyz)
  wr <node> <addr> <word>     write one word
  rdall <card> <addr>         Ring Bus read of addr on every node of a card (index or x,y,z)
  bwr <addr> <word>           broadcast write to every node
  load <file> <addr>          broadcast a file image to every node
  boot                        broadcast the boot command
  info                        system configuration
  run <us>                    advance virtual time
  quit"""


def _int(text: str) -> int:
    return int(text, 0)


class Sandbox:
    def __init__(self, system: System):
        self.system = system
        self.host = system.topo.nodes_with_role(NodeRole.PCIE_CONTROLLER)[0]

    def _node(self, text: str) -> Coord:
        return self.system.topo.check(Coord.parse(text))

    def _card(self, text: str) -> Coord:
        cards = self.system.topo.cards()
        if "," in text:
            card = Coord.parse(text)
            if card not in cards:
                raise ValueError(f"no card {text}")
            return card
        return cards[int(text)]

    def _access(self, op):
        system = self.system
        if card_of(op.target) == card_of(self.host):
            req = system.ring_access(self.host, op)
        else:
            req = system.tunnel_access(self.host, op)
        wait(system.sim, req)
        return req

    def execute(self, line: str) -> str | None:
        """Run one command line; returns the text to print, or None on quit."""
        words = shlex.split(line, comments=True)
        if not words:
            return ""
        cmd, args = words[0].lower(), words[1:]
        system = self.system
        try:
            if cmd in ("quit", "exit"):
                return None
            if cmd == "help":
                return HELP
            if cmd == "rd" and len(args) == 2:
                node, addr = self._node(args[0]), _int(args[1])
                req = self._access(Read(node, addr))
                return f"{node} [{addr:#010x}] = {req.value:#010x} ({req.value})"
            if cmd == "wr" and len(args) == 3:
                node, addr, word = self._node(args[0]), _int(args[1]), _int(args[2])
                self._access(Write(node, addr, word))
                return f"{node} [{addr:#010x}] <- {word & 0xFFFFFFFF:#010x}"
            if cmd == "rdall" and len(args) == 2:
                card, addr = self._card(args[0]), _int(args[1])
                rows = system.read_all(card, addr)
                return "\n".join(f"{node} [{addr:#010x}] = {value:#010x}" for node, value in rows)
            if cmd == "bwr" and len(args) == 2:
                addr, word = _int(args[0]), _int(args[1])
                req = system.tunnel_access(self.host, BroadcastWrite(addr, word))
                wait(system.sim, req)
                return f"broadcast [{addr:#010x}] <- {word & 0xFFFFFFFF:#010x} on {len(req.applied)} nodes"
            if cmd == "load" and len(args) == 2:
                data = Path(args[0]).read_bytes()
                addr = _int(args[1])
                reqs = system.tunnel.block_write(self.host, addr, data)
                wait(system.sim, reqs)
                return f"loaded {len(data)} bytes at {addr:#010x} on {system.topo.node_count} nodes ({len(reqs)} packets)"
            if cmd == "boot" and not args:
                req = system.tunnel_access(self.host, BroadcastWrite(REG_BOOT_CMD, BOOT_MAGIC))
                wait(system.sim, req)
                return f"boot command written on {len(req.applied)} nodes"
            if cmd == "info" and not args:
                cfg = system.config
                build = system.memories[self.host].read(REG_BUILD_ID)
                return (f"dims {'x'.join(map(str, cfg.dims))}  cards {cfg.cards}  nodes {system.topo.node_count}\n"
                        f"build id {build:#010x}  virtual time {system.now()} ns")
            if cmd == "run" and len(args) == 1:
                system.sim.run_until(system.now() + int(float(args[0]) * 1000))
                return f"virtual time {system.now()} ns"
        except (IncSimError, ValueError, IndexError, OSError) as exc:
            return f"error: {exc}"
        return f"error: bad command {line.strip()!r}\n{HELP}"

    def repl(self, stdin: TextIO = sys.stdin, stdout: TextIO = sys.stdout, prompt: bool = True) -> int:
        errors = 0
        while True:
            if prompt:
                stdout.write("sandbox> ")
                stdout.flush()
            line = stdin.readline()
            if not line:
                break
            out = self.execute(line)
            if out is None:
                break
            if out:
                stdout.write(out + "\n")
                if out.startswith("error:"):
                    errors += 1
        return errors
