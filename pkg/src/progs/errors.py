"""Exception types shared across the codec."""


class FormatError(ValueError):
    """Malformed, truncated or unsupported file or stream."""


class SymbolRangeError(ValueError):
    """A quantized symbol does not fit the signed 16-bit alphabet."""


class StructuralOverflowError(ValueError):
    """A parent index does not fit the 20-bit structural field."""
