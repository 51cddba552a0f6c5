"""Exception hierarchy shared by all modules."""


class BwshareError(Exception):
    """Base class for every error raised by this package."""


class TopologyError(BwshareError, ValueError):
    pass


class EmptyRoute(TopologyError):
    pass


class NonpositiveCapacity(TopologyError):
    pass


class NonBinaryEntry(TopologyError):
    pass


class DimensionMismatch(BwshareError, ValueError):
    pass


class InvalidInput(BwshareError, ValueError):
    pass


class TooManyAtoms(BwshareError, ValueError):
    pass


class TooManyRoutes(BwshareError, ValueError):
    pass


class NonConvergence(BwshareError, RuntimeError):
    """An iterative solver hit its iteration cap above tolerance."""


# The simulator and fluid solver surface allocator failures under this name.
AllocatorFailure = NonConvergence


class InvalidScenario(BwshareError, ValueError):
    pass


class SchemaError(InvalidScenario):
    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class SemanticError(InvalidScenario):
    pass


class AtomBudgetExceeded(BwshareError, RuntimeError):
    pass


class NotInP(BwshareError, ValueError):
    pass


class EmptyCriticalSet(BwshareError, ValueError):
    pass
