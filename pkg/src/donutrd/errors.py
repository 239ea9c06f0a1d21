"""Exception hierarchy shared by every module of the package."""


class DonutRDError(Exception):
    """Base class for all domain errors raised by donutrd."""


class SchemaError(DonutRDError, ValueError):
    """An input table is missing a required column."""


class EmptyCohortError(DonutRDError, ValueError):
    """No valid rows survived validation."""


class EmptySideError(DonutRDError, ValueError):
    """One side of the threshold has no observations."""


class DataError(DonutRDError, ValueError):
    """A fill or observation record is internally inconsistent."""


class UnsupportedFillError(DonutRDError, ValueError):
    """A fill has a days-supplied value other than 30 or 90."""


class IdentifiabilityError(DonutRDError, ValueError):
    """The polynomial design is rank deficient."""

    def __init__(self, message, side=None):
        if side is not None:
            message = f"[{side}] {message}"
        super().__init__(message)
        self.side = side


class EmptyWindowError(DonutRDError, ValueError):
    """All kernel weights on a side are zero."""

    def __init__(self, message, side=None):
        if side is not None:
            message = f"[{side}] {message}"
        super().__init__(message)
        self.side = side


class WeakFirstStageError(DonutRDError, ValueError):
    """The first-stage jump does not clear the weak-stage floor."""


class DegenerateInferenceError(DonutRDError, ValueError):
    """Zero standard error combined with a nonzero bias bound."""


class DegenerateBaselineError(DonutRDError, ValueError):
    """A pre-threshold baseline is not strictly positive."""


class UndefinedElasticityError(DonutRDError, ValueError):
    """The price change is zero so the elasticity is undefined."""


class UnstableBootstrapError(DonutRDError, RuntimeError):
    """Too many bootstrap replicates failed."""


class CalibrationError(DonutRDError, ValueError):
    """Simulation parameters force clamping of most draws."""


class ConfigError(DonutRDError, ValueError):
    """A run configuration is malformed or inconsistent."""
