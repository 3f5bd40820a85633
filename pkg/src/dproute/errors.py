"""Exception types shared across the package."""


class TopologyError(ValueError):
    pass


class ParseError(TopologyError):
    pass


class DisconnectedError(TopologyError):
    pass


class SelfLoopError(TopologyError):
    pass


class UnknownSwitch(KeyError):
    pass


class UnknownDomain(KeyError):
    pass


class UnknownLink(KeyError):
    pass


class PartitionInfeasible(ValueError):
    pass


class WidthMismatch(ValueError):
    pass


class TruncatedHeader(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


class StackUnderflow(RuntimeError):
    """Raised only when the stack sentinel invariant was broken upstream."""


class MissingRules(KeyError):
    pass


class PolicyError(ValueError):
    pass


class IncompatibleTraversal(PolicyError):
    pass


class DegreeTooHigh(PolicyError):
    pass


class ZeroWeightSum(PolicyError):
    pass
