"""Exception and warning types."""


class MultivirusError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MultivirusError, ValueError):
    """Arrays whose shapes do not agree with the system they belong to."""


class PreconditionError(MultivirusError, ValueError):
    """An input violates the hypothesis an operation relies on."""


class ReducibleMatrixError(PreconditionError):
    """A virus spread graph is not strongly connected."""

    def __init__(self, virus, message=None):
        self.virus = virus
        super().__init__(
            message
            or f"virus {virus}: infection matrix is reducible (spread graph not strongly connected)"
        )


class IntegrationBlowupError(MultivirusError, FloatingPointError):
    """Non-finite values appeared during time stepping."""

    def __init__(self, t, dt):
        self.t = t
        self.dt = dt
        super().__init__(f"non-finite state at t={t:.6g} with dt={dt:.3g}")


class NoEpidemicEquilibriumError(MultivirusError, ValueError):
    """Requested an endemic equilibrium for a subcritical virus."""


class ConvergenceError(MultivirusError, RuntimeError):
    """An iterative solver stalled; ``last`` holds the final iterate."""

    def __init__(self, message, last=None):
        self.last = last
        super().__init__(message)


class ScenarioError(MultivirusError, ValueError):
    """Scenario file failed to parse or validate.

    ``field`` is a dotted path into the document, ``line`` the 1-based line
    where the problem was located (when known).
    """

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(field)
        if line is not None:
            where.append(f"line {line}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class StepSizeWarning(UserWarning):
    """State repair exceeded the clamp tolerance; dt is probably too large."""
