"""Exception types shared across the toolkit.

Every error raised by the library derives from VoltexError so callers can
catch the whole family.  The CLI maps these onto exit codes: data-shaped
problems exit 2, budget/config problems exit 3.
"""


class VoltexError(Exception):
    """Base class for all toolkit errors."""


class IoError(VoltexError):
    """File could not be read or written."""


class FormatError(VoltexError):
    """File content violates its declared format (bad magic, truncation, ...)."""


class ManifestError(VoltexError):
    """Volume manifest is missing keys or has unparseable values."""


class SizeMismatch(VoltexError):
    """Raw payload length disagrees with the declared dimensions."""


class WindowError(VoltexError):
    """Invalid intensity window (low >= high)."""


class SpecError(VoltexError):
    """Filter/operation spec incompatible with the data (e.g. window > image)."""


class RangeError(VoltexError):
    """Gray value outside the declared level range."""


class HistogramError(VoltexError):
    """Degenerate histogram (zero total count)."""


class ThresholdError(VoltexError):
    """Threshold vector is not strictly increasing inside [1, L-1]."""


class BudgetError(VoltexError):
    """Exhaustive search would exceed the configured combination budget."""


class ConfigError(VoltexError):
    """Invalid run configuration."""


class DimError(VoltexError):
    """Tensor dimensions do not match the model contract."""


class LabelError(VoltexError):
    """Class label outside the supported range."""


class DegenerateError(VoltexError):
    """Metric undefined for these counts (zero denominator or one-class data)."""


class EmptyGlcmError(VoltexError):
    """Co-occurrence matrix has no pairs; descriptors are undefined."""
