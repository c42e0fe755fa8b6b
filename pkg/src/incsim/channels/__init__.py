from .bridge_fifo import BridgeFifoChannel
from .ethernet import EthInterface, Gateway, Mode, send_external
from .mux import MAX_BRIDGE_CHANNELS, PacketDemux, PacketMux
from .postmaster import PostmasterInitiator, PostmasterTarget

__all__ = [
    "BridgeFifoChannel",
    "EthInterface",
    "Gateway",
    "Mode",
    "send_external",
    "MAX_BRIDGE_CHANNELS",
    "PacketDemux",
    "PacketMux",
    "PostmasterInitiator",
    "PostmasterTarget",
]
