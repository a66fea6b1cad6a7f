"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps the two top-level families onto exit codes: ``DataError`` -> 3,
``ModelError`` -> 4.
"""


class EncMineError(Exception):
    """Base class for all package errors."""


class DataError(EncMineError):
    pass


class ModelError(EncMineError):
    pass


# capture-io
class BadMagic(DataError):
    pass


class Truncated(DataError):
    pass


class SpecInvalid(DataError):
    pass


# enc-filter
class NotEncrypted(DataError):
    pass


# feature-engine / tensorizer
class EmptyEncView(DataError):
    pass


class EmptySeries(DataError):
    pass


class MissingOperand(DataError):
    pass


class ManifestMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class ShapeError(ModelError):
    pass


# learners / framework
class DegenerateLabels(ModelError):
    pass


class TooFewRecords(ModelError):
    pass


class NotDifferentiable(ModelError):
    pass


class VersionMismatch(ModelError):
    pass


class DigestMismatch(ModelError):
    pass


# evaluation
class LengthMismatch(DataError):
    pass


class RangeError(DataError):
    pass


class SingleClass(DataError):
    pass


# labeling
class ConflictingRule(DataError):
    pass


class UncoveredCapture(DataError):
    pass
