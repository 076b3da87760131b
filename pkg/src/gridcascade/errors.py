"""Exception types raised across the package."""


class GridCascadeError(Exception):
    """Base class for all package errors."""


class MalformedCase(GridCascadeError):
    pass


class InvalidDroop(GridCascadeError, ValueError):
    pass


class InvalidInertia(GridCascadeError, ValueError):
    pass


class SingularTopology(GridCascadeError):
    pass


class NoGeneration(GridCascadeError):
    pass


class SolverFailure(GridCascadeError):
    pass


class InitFailure(GridCascadeError):
    pass


class NumericalDivergence(GridCascadeError):
    pass


class EmptySet(GridCascadeError, ValueError):
    pass


class BadAlpha(GridCascadeError, ValueError):
    pass


class EmptyStudy(GridCascadeError):
    pass


class ScenarioMismatch(GridCascadeError):
    pass
