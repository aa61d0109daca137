"""Exception hierarchy shared by all engines and the experiment runner."""


class IonAnnealError(Exception):
    """Base class for every error raised by this package."""


class SolverFailure(IonAnnealError):
    """An iterative solver did not converge within its iteration cap."""


class ChainUnstableError(IonAnnealError):
    """A transverse mode has non-positive squared frequency (zigzag transition)."""


class DegenerateSpectrumError(IonAnnealError):
    """Two mode frequencies coincide, so mode ordering is ambiguous."""


class NoDominantModeError(IonAnnealError):
    """No mode lies on the requested side of the beatnote."""


class OnResonanceError(IonAnnealError):
    """The beatnote coincides with a mode frequency."""


class DegenerateModeError(IonAnnealError):
    """A dominant-mode component vanishes, so its sign is undefined."""


class StepSizeUnderflowError(IonAnnealError):
    """The adaptive integrator could not meet the tolerance at time ``t``."""

    def __init__(self, t, message=None):
        self.t = t
        super().__init__(message or f"step size underflow at t = {t:.6e} s")


class KrylovAccuracyError(IonAnnealError):
    """The Krylov subspace cap was reached before the residual met tolerance."""


class EngineCapacityError(IonAnnealError):
    """The requested system is too large for the selected engine."""


class ConfigError(IonAnnealError, ValueError):
    """Invalid experiment configuration; the message names the offending field."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
