"""Exception types raised across the package.

Everything derives from VolpropError so callers can catch the whole family
with one clause. Each class is deliberately small; the message carries the
specifics (offending path, tensor name, dotted config key, ...).
"""


class VolpropError(Exception):
    """Base class for all package errors."""


# --- volume grid / file IO ---

class IoFailure(VolpropError):
    """File could not be read or written (missing, truncated, permissions)."""


class MalformedHeader(VolpropError):
    """The file header violates the supported format contract."""


class UnsupportedDatatype(VolpropError):
    """Voxel datatype outside the supported set (uint8, int16, float32)."""


class DimensionMismatch(VolpropError):
    """Array shapes disagree where they must match."""


class EmptyRoi(VolpropError):
    """Crop region contains no voxels."""


# --- masks / prompts ---

class EmptyMask(VolpropError):
    """A mask that must contain foreground is empty."""


class ExtentTooSmall(VolpropError):
    """Structure spans too few slices for the requested prompt layout."""


class EmptyPrompts(VolpropError):
    """Propagation was asked to run without any prompt."""


# --- memory bank ---

class SlotOverflow(VolpropError):
    """More memory entries selected than temporal embedding slots exist."""


class InsufficientCandidates(VolpropError):
    """Not enough eligible cases to fill the requested split."""


# --- metrics ---

class BothEmpty(VolpropError):
    """Both operands of a metric are empty; the value is undefined."""


class EitherEmpty(VolpropError):
    """One operand of a distance metric is empty; the value is undefined."""


class ZeroVector(VolpropError):
    """Cosine similarity is undefined for a zero-length vector."""


# --- preprocessing ---

class TileTooSmall(VolpropError):
    """A contrast-equalization tile has fewer than 2 pixels."""


# --- configuration / CLI ---

class ConfigInvalid(VolpropError):
    """Configuration value or key violates the schema."""


class ManifestMissing(VolpropError):
    """Dataset manifest path does not exist or is unreadable."""


class GridInvalid(VolpropError):
    """Ablation grid description is malformed."""


class NoResults(VolpropError):
    """Report generation found no completed runs."""


# --- backends ---

class BackendFailure(VolpropError):
    """Inference backend failed while processing a slice."""


class MissingGraph(VolpropError):
    """Serialized model graph files are absent from the model directory."""


class SignatureMismatch(VolpropError):
    """Model graph input/output signature disagrees with the expected one."""


class RuntimeUnavailable(VolpropError):
    """The inference runtime needed by this backend is not importable."""
