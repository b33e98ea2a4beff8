class RuelleError(Exception):
    """Base exception for python_ruelle errors."""

    pass


class SimulationDivergedError(RuelleError):
    """Raised when an integrated state stops being finite."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class SeriesTooShortError(RuelleError):
    """Raised when a series has no sample pair at the requested lag."""

    pass


class EmptyEstimateError(RuelleError):
    """Raised when no transition pair lands inside the partition domain."""

    pass


class CountingError(RuelleError):
    """Raised when there's an error aggregating transition counts."""

    pass


class ConvergenceError(RuelleError):
    """Raised when an iterative solver stops before reaching its tolerance."""

    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class DegenerateSpectrumError(RuelleError):
    """Raised when a cluster of eigenvalues cannot be biorthonormalized."""

    def __init__(self, message: str, cluster=None):
        super().__init__(message)
        self.cluster = cluster


class LogSingularityError(RuelleError):
    """Raised when an eigenvalue is zero and has no resonance."""

    pass


class InsufficientSpectrumError(RuelleError):
    """Raised when too few resonances are available for a quantity."""

    pass


class SingularLorentzianError(RuelleError):
    """Raised when a weighted resonance sits on the imaginary axis."""

    pass


class InsufficientDataError(RuelleError):
    """Raised when no box collects enough samples."""

    pass


class DomainExitError(RuelleError):
    """Raised when a reduced trajectory leaves the usable boxes."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class PipelineError(RuelleError):
    """Raised when a pipeline stage fails."""

    def __init__(self, message: str, stage: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
