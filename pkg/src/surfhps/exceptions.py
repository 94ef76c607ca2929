"""Exception types raised by the surface solver library."""


class SurfaceSolverError(Exception):
    """Base class for all library errors."""


class InvalidOrderError(SurfaceSolverError, ValueError):
    """A polynomial order outside the valid range was requested."""


class MeshError(SurfaceSolverError):
    """Base class for mesh construction and ingestion errors."""


class AmbiguousMeshError(MeshError):
    """An element side coincides with more than one other side."""


class NonconformingMeshError(MeshError):
    """Two element sides partially coincide but do not share all nodes."""


class MultipleComponentsError(MeshError):
    """The element adjacency graph is disconnected."""


class MeshParseError(MeshError):
    """A mesh file is malformed. Carries line/element diagnostics."""

    def __init__(self, message, line=None, element=None):
        if line is not None:
            message = f"line {line}: {message}"
        if element is not None:
            message = f"element {element}: {message}"
        super().__init__(message)
        self.line = line
        self.element = element


class DegenerateElementError(SurfaceSolverError):
    """An element's metric tensor is singular at some node."""


class CoefficientEvaluationError(SurfaceSolverError):
    """A coefficient callback returned a non-finite value."""


class SingularLeafError(SurfaceSolverError):
    """The interior block of an element operator is numerically singular."""


class SingularMergeError(SurfaceSolverError):
    """An interface matrix below the top level is numerically singular."""


class ShapeMismatchError(SurfaceSolverError, ValueError):
    """Input data does not match the mesh or factorization dimensions."""


class StaleFactorizationError(SurfaceSolverError):
    """A cached factorization does not match the requested implicit operator."""


class DivergenceError(SurfaceSolverError):
    """A time integration produced non-finite state."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class TangencyError(SurfaceSolverError):
    """A vector field violates the surface tangency tolerance."""


class BoundaryDataError(SurfaceSolverError):
    """Boundary data is required (open mesh) or must be absent (closed mesh)."""


class FactorizationCacheError(SurfaceSolverError):
    """A serialized factorization file is invalid or inconsistent."""
