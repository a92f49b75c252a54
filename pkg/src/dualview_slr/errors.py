"""Exception hierarchy shared by the data, model and evaluation layers."""


class DualViewError(Exception):
    """Base class. ``category`` is the machine-readable tag the CLI prints."""

    category = "error"


class StructuralError(DualViewError):
    category = "structural"


class IntegrityError(DualViewError):
    category = "integrity"


class FormatError(DualViewError):
    category = "format"


class ShapeError(DualViewError):
    category = "shape"


class ConfigurationError(DualViewError):
    category = "configuration"


class NumericError(DualViewError):
    category = "numeric"


class AlignmentError(DualViewError):
    category = "alignment"
