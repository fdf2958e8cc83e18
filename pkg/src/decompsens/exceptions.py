"""Exception hierarchy shared by every stage of the analysis pipeline."""


class DecompError(Exception):
    """Base class for all errors raised by decompsens."""


class DataError(DecompError):
    """Input data violates a schema or domain rule."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class CellCountError(DataError):
    """A (group, exposure) cell is empty or too small to fit a model."""


class FitError(DecompError):
    """Base class for propensity-model fitting failures."""

    def __init__(self, message, model=None):
        self.model = model
        if model is not None:
            message = f"{model}: {message}"
        super().__init__(message)


class SeparationError(FitError):
    """Complete or quasi-complete separation; the MLE does not exist."""


class SingularDesignError(FitError):
    """Weighted normal equations (or an OLS design) are singular."""


class ConstantResponseError(FitError):
    """The binary response has no variation."""


class BootstrapError(DecompError):
    """Too many bootstrap replicates failed."""
