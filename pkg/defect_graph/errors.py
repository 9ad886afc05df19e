'''
Exception hierarchy shared by every module.

Validation problems (bad files, bad configs, CLI misuse) exit with code 2,
everything else that goes wrong at runtime exits with code 1.
'''

from __future__ import annotations


class DefectGraphError(Exception):
    """Base class for all library errors."""
    exit_code = 1


class ValidationError(DefectGraphError, ValueError):
    """Input failed validation (unresolved ids, bad enum values, bad counts)."""
    exit_code = 2


class SchemaError(ValidationError):
    """A required column is missing from an input table."""

    def __init__(self, column: str, path: str | None = None) -> None:
        where = f" in {path}" if path else ""
        super().__init__(f"missing column '{column}'{where}")
        self.column = column
        self.path = path


class ParseError(ValidationError):
    """A cell could not be parsed; carries the 0-based data row index."""

    def __init__(self, message: str, row: int | None = None) -> None:
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class ConfigError(ValidationError):
    pass


class UsageError(ValidationError):
    pass


class ShapeError(DefectGraphError, ValueError):
    pass


class SamplingError(DefectGraphError, RuntimeError):
    pass


class NumericError(DefectGraphError, RuntimeError):
    pass


class TrainingError(NumericError):
    pass


class OptimizerError(NumericError):
    pass


class GradCheckError(NumericError):
    pass


class EvaluationError(DefectGraphError, ValueError):
    pass


class AnalysisError(DefectGraphError, ValueError):
    pass


class ExperimentInterrupted(DefectGraphError):
    """A campaign stopped early. `report` holds the finished repetitions."""

    def __init__(self, report, cause: BaseException) -> None:
        super().__init__(f"experiment stopped after {len(report.runs)} run(s): {cause}")
        self.report = report
        self.cause = cause
        if isinstance(cause, DefectGraphError):
            self.exit_code = cause.exit_code


class RepetitionFailed(DefectGraphError):
    """One repetition job raised. `completed` holds the results that finished."""

    def __init__(self, index: int, completed: list, cause: BaseException) -> None:
        super().__init__(f"repetition {index} failed: {cause}")
        self.index = index
        self.completed = completed
        self.cause = cause
        if isinstance(cause, DefectGraphError):
            self.exit_code = cause.exit_code
