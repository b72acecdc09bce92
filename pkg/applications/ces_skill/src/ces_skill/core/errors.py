class CesSkillError(Exception):
    """Root of every error raised by the package."""

    exit_code = 3


class ValidationError(CesSkillError, ValueError):
    """Input files or cells violate a parse rule or an invariant."""

    exit_code = 2


class DuplicateKeyError(ValidationError):
    pass


class MissingDataError(ValidationError):
    """A required group, year, lag or window is not available."""


class ConfigError(CesSkillError, ValueError):
    exit_code = 2


class DomainError(CesSkillError, ValueError):
    """An argument lies outside the domain of the closed-form expressions."""


class NumericalOverflowError(CesSkillError, OverflowError):
    pass


class EstimationError(CesSkillError, RuntimeError):
    pass


class ShapleyEvaluationError(CesSkillError, RuntimeError):
    def __init__(self, subset: frozenset[str], cause: Exception):
        self.subset = subset
        super().__init__(
            f"Evaluator failed on factor subset {sorted(subset)}: {cause}"
        )
