"""Exception hierarchy shared across the package."""


class AttrVRError(Exception):
    """Base class for all package-specific errors."""


class GeometryError(AttrVRError):
    """Pattern frame / image shape mismatch."""


class ValidationError(AttrVRError):
    """Bad argument or malformed input data."""


class NumericError(AttrVRError):
    """Numerically undefined result (zero norms, non-finite loss, ...)."""


class SchemaError(ValidationError):
    """Attribute bank or config file violates its schema."""


class GenerationError(AttrVRError):
    """Attribute generation produced no usable candidates."""


class TransportError(AttrVRError):
    """Text-generation client failed after retries."""


class StateError(AttrVRError):
    """Operation called before its prerequisites were established."""
