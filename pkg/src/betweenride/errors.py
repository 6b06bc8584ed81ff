"""Exception types raised across the package."""


class BetweenRideError(Exception):
    """Base class for all user-facing errors."""


class InvalidEdge(BetweenRideError):
    pass


class InvalidParams(BetweenRideError):
    pass


class DisconnectedGraph(BetweenRideError):
    def __init__(self, message, component=()):
        super().__init__(message)
        self.component = tuple(component)


class UnknownEdge(BetweenRideError):
    pass


class AssumptionViolated(BetweenRideError):
    """The network fails the local-maxima scan; run enforce_local_maxima first."""

    def __init__(self, message, edges=()):
        super().__init__(message)
        self.edges = tuple(edges)


class NonFiniteParams(InvalidParams):
    pass


class CycleDetected(BetweenRideError):
    """Following next pointers revisited a node. Indicates a solver bug."""

    def __init__(self, message, cycle=()):
        super().__init__(message)
        self.cycle = tuple(cycle)


class CyclicPolicy(BetweenRideError):
    def __init__(self, message, cycle=()):
        super().__init__(message)
        self.cycle = tuple(cycle)


class Unreachable(BetweenRideError):
    pass


class NotAPath(BetweenRideError):
    pass


class MalformedXml(BetweenRideError):
    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class EmptyExtract(BetweenRideError):
    pass


class InvalidGrid(BetweenRideError):
    pass


class FormatError(BetweenRideError):
    """A serialized file does not match the expected schema."""
