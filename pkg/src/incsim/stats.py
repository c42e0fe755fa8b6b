"""Stats JSON report (schema 1).

Every number is either an integer or a float rounded to 6 decimals, and keys
come out in a fixed order, so two runs with the same seed produce identical
bytes.
"""

from __future__ import annotations

import json
import math

from .router import Protocol
from .system import System
from .topology import PORTS

SCHEMA = 1


def percentile(values: list[int], q: float) -> int | None:
    """Nearest-rank percentile; None for an empty sample."""
    if not values:
        return None
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100 * len(ordered)))
    return ordered[rank - 1]


def latency_summary(values: list[int]) -> dict:
    if not values:
        return {"count": 0, "mean": None, "p50": None, "p99": None, "max": None}
    return {
        "count": len(values),
        "mean": round(sum(values) / len(values), 6),
        "p50": percentile(values, 50),
        "p99": percentile(values, 99),
        "max": max(values),
    }


def _protocol_name(p: int) -> str:
    return Protocol(p).name if p in Protocol._value2member_map_ else f"reserved_{p}"


def build_report(system: System, workload: dict | None = None) -> dict:
    net = system.network
    now = system.sim.now()

    protocols = {}
    for p in sorted(net.protocol_stats):
        st = net.protocol_stats[p]
        protocols[_protocol_name(p)] = {
            "injected": st.injected,
            "delivered": st.delivered,
            "latency_ns": latency_summary(st.latencies),
        }

    links = []
    for (node, port), link in net.links.items():
        if link.wire.bytes_carried == 0:
            continue
        links.append({
            "src": list(node),
            "dst": list(link.spec.dst),
            "port": PORTS[port].label,
            "bytes": link.wire.bytes_carried,
            "busy_fraction": round(link.wire.busy_ns / now, 6) if now else 0.0,
            "credit_stall_ns": link.credit_stall_ns,
        })

    bf = system.bridge_channels
    bf_lat = [v for ch in bf for v in ch.stats.latencies]
    bridge = {
        "channels": len(bf),
        "words_sent": sum(ch.stats.pushed for ch in bf),
        "words_received": sum(len(ch.stats.latencies) for ch in bf),
        "packets_sent": sum(ch.stats.packets_sent for ch in bf),
        "backpressure_events": sum(ch.stats.backpressure for ch in bf),
        "max_reorder_occupancy": max((ch.stats.max_reorder for ch in bf), default=0),
        "latency_ns": latency_summary(bf_lat),
    }

    stacks = list(system.nodes.values())
    pm_lat = [v for s in stacks for v in s.target.stats.latencies]
    postmaster = {
        "packets_sent": sum(s.initiator.stats.packets for s in stacks),
        "bytes_sent": sum(s.initiator.stats.bytes for s in stacks),
        "packets_received": sum(s.target.stats.records for s in stacks),
        "bytes_received": sum(s.target.stats.bytes for s in stacks),
        "backpressure_events": sum(s.initiator.stats.backpressure for s in stacks),
        "target_refusals": sum(s.target.stats.refused for s in stacks),
        "latency_ns": latency_summary(pm_lat),
    }

    eth_lat = [v for s in stacks for v in s.eth.latencies]
    ethernet = {
        "frames_sent": sum(s.eth.stats.frames_sent for s in stacks),
        "bytes_sent": sum(s.eth.stats.bytes_sent for s in stacks),
        "frames_received": sum(s.eth.stats.frames_received for s in stacks),
        "bytes_received": sum(s.eth.stats.bytes_received for s in stacks),
        "delivery_events": sum(s.eth.stats.delivery_events for s in stacks),
        "backpressure_events": sum(s.eth.stats.ring_full for s in stacks),
        "reassembly_timeouts": sum(s.eth.reassembly_timeouts(now) for s in stacks),
        "latency_ns": latency_summary(eth_lat),
    }

    dropped = sum(s.demux.dropped_unknown for s in stacks)
    report = {
        "schema": SCHEMA,
        "system": {
            "dims": list(system.config.dims),
            "nodes": system.topo.node_count,
            "links": len(system.topo.links),
            "seed": system.sim.seed,
        },
        "sim": {"end_ns": now, "events": system.sim.events_processed},
        "protocols": protocols,
        "dropped": dropped,
        "channels": {"bridge_fifo": bridge, "postmaster": postmaster, "ethernet": ethernet},
        "queues": {
            "max_router_queue": max(net.max_pending.values(), default=0),
            "injection_backpressure": net.injection_backpressure,
            "in_fabric_at_end": not net.quiescent(),
        },
        "links": links,
    }
    if workload is not None:
        report["workload"] = workload
    return report


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"
