"""Exception hierarchy shared by every stage of the workbench."""


class SACMError(Exception):
    """Base class; ``exit_code`` is what the command line returns."""

    exit_code = 2


class ValidationError(SACMError, ValueError):
    exit_code = 2


class InsufficientCombinations(ValidationError):
    pass


class InvalidFlag(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class TokenOutOfRange(ValidationError):
    pass


class SequenceTooLong(ValidationError):
    pass


class PatchOutOfRange(ValidationError):
    pass


class IncompleteSweep(ValidationError):
    pass


class SetSizeMismatch(ValidationError):
    pass


class LabelMismatch(ValidationError):
    pass


class UnmatchedPrompts(ValidationError):
    pass


class ProvenanceMismatch(ValidationError):
    """Config digests disagree between pipeline stages."""


class DegenerateProbability(SACMError, ArithmeticError):
    exit_code = 3


class DivergenceDetected(SACMError, ArithmeticError):
    exit_code = 3


class IoFailure(SACMError, OSError):
    exit_code = 4


class CorruptCheckpoint(IoFailure):
    pass
