"""Discrete-event simulator of the IBM Neural Computer interconnect."""

from .engine import LatencyModel, Simulator, packet_latency
from .system import SimParams, System
from .topology import Coord, SystemConfig, Topology, build_topology, preset

__version__ = "0.1.0"

__all__ = [
    "Coord",
    "LatencyModel",
    "SimParams",
    "Simulator",
    "System",
    "SystemConfig",
    "Topology",
    "build_topology",
    "packet_latency",
    "preset",
]
