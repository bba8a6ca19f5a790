"""Exception types shared across the package."""


class HfcError(Exception):
    """Base class for all package errors."""


# lti core
class ZeroDenominator(HfcError):
    pass


class PoleOnGrid(HfcError):
    pass


class ImproperSystem(HfcError):
    pass


class TustinSingularity(HfcError):
    pass


class NonFiniteInput(HfcError):
    pass


# analysis
class DegreeOutOfRange(HfcError):
    pass


class NoFeasibleFilter(HfcError):
    pass


class UnstableResult(HfcError):
    pass


class WeightFitFailure(HfcError):
    pass


class UnstableComposition(HfcError):
    pass


# simulation
class BufferUnderrun(HfcError):
    pass


class ChannelMissing(HfcError):
    pass


class NoSteadyState(HfcError):
    pass


class NoResponse(HfcError):
    pass


class UnsortedSchedule(HfcError):
    pass


class NumericalDivergence(HfcError):
    def __init__(self, t, channel, value):
        super().__init__(f"non-finite or runaway value {value!r} in {channel} at t={t:.6g} s")
        self.t = t
        self.channel = channel
        self.value = value


class ValidationError(HfcError):
    """Bad scenario input. `path` points at the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message
