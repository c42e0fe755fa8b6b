"""Exception hierarchy for the simulator.

Blocked transmissions, backpressure and empty FIFOs are ordinary outcomes and
are reported through return values. Exceptions are reserved for misuse and
for internal invariant violations.
"""


class IncSimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(IncSimError):
    pass


class InvalidExtent(ConfigError):
    pass


class OutOfBounds(IncSimError):
    pass


class OddExtent(IncSimError):
    pass


class NotCardOrigin(IncSimError):
    pass


class TimeTravel(IncSimError):
    pass


class InternalInvariantViolation(IncSimError):
    """A simulator bug: some conserved quantity went out of range."""


class OverFree(IncSimError):
    pass


class Unroutable(IncSimError):
    pass


class PayloadTooLarge(IncSimError):
    pass


class ChannelExhausted(IncSimError):
    pass


class ZeroLength(IncSimError):
    pass


class UnknownTarget(IncSimError):
    pass


class FrameTooLarge(IncSimError):
    pass


class NotGateway(IncSimError):
    pass


class OffCardTarget(IncSimError):
    pass


class UnalignedAddress(IncSimError):
    pass


class WorkloadError(IncSimError):
    pass


class InvalidHeader(IncSimError):
    pass
