"""Exception types shared across the package.

Every error carries an ``exit_code`` so the CLI can map failures onto its
stable contract: 2 for user/config errors, 3 for I/O, 4 for numerical failure.
"""


class DKError(Exception):
    exit_code = 2


class ConfigError(DKError):
    pass


class InvalidConfig(ConfigError):
    pass


class InvalidSpec(ConfigError):
    pass


class IoError(DKError):
    exit_code = 3


class MissingFile(IoError):
    pass


class MissingColumn(DKError):
    pass


class NonNumericCell(DKError):
    def __init__(self, row, col, value=None):
        self.row = row
        self.col = col
        msg = f"non-numeric value {value!r} at row {row}, column {col!r}"
        super().__init__(msg)


class EmptyAfterCleaning(DKError):
    pass


class LabelOutOfRange(DKError):
    pass


class UnknownFactor(DKError):
    pass


class TooFewRows(DKError):
    pass


class EmptySplit(DKError):
    pass


class DimensionMismatch(DKError):
    pass


class TooManyFactors(DKError):
    pass


class EmptySourceSet(DKError):
    pass


class InvalidK(DKError):
    pass


class LengthMismatch(DKError):
    pass


class NotAPermutation(DKError):
    pass


class EmptyCounts(DKError):
    pass


class EmptyInput(DKError):
    pass


class FactorMismatch(DKError):
    pass


class SchemaVersionMismatch(DKError):
    pass


class CorruptArtifact(DKError):
    pass


class NumericalError(DKError):
    exit_code = 4


class NonFiniteLoss(NumericalError):
    pass


class NonFiniteGradient(NumericalError):
    pass


class OracleFailure(NumericalError):
    pass


class StageError(DKError):
    """Wraps a failure inside the experiment pipeline with fold/stage context."""

    def __init__(self, fold, stage, cause, model=None):
        self.fold = fold
        self.stage = stage
        self.model = model
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 2)
        where = f"fold {fold}, stage {stage}"
        if model is not None:
            where += f", model {model}"
        super().__init__(f"[{where}] {type(cause).__name__}: {cause}")


class EmptyGroupWarning(UserWarning):
    pass
