"""Exception taxonomy shared across the library.

Every failure mode that callers are expected to branch on gets its own
class here; modules raise these instead of bare ValueError so the CLI can
map them onto exit codes uniformly.
"""

from __future__ import annotations


class VidmemError(Exception):
    """Base class for all library errors."""


class SourceUnavailable(VidmemError):
    """Stream source missing: bad path, or no external video decoder on PATH."""


class DecodeError(VidmemError):
    """A single frame failed to decode. Recoverable: callers skip the frame."""


class ShapeMismatch(VidmemError):
    """Two rasters that must share a shape do not."""


class DegenerateImage(VidmemError):
    """Image too small for the requested operation (e.g. below window size)."""


class EmptyText(VidmemError):
    """Text embedding requested for an empty/whitespace-only string."""


class DimensionMismatch(VidmemError):
    """Embedding dimensionality disagrees with the store manifest."""


class ZeroVector(VidmemError):
    """A zero vector reached an operation that requires direction."""


class BackendUnavailable(VidmemError):
    """Remote embedding/model backend could not be reached."""


class RateLimited(VidmemError):
    """Backend asked us to back off; retried with exponential delay."""


class VideoRejected(VidmemError):
    """Backend refused a video block; caller resends frames only."""


class DanglingReference(VidmemError):
    """A document refers to moment ids that are not in the store."""


class VersionMismatch(VidmemError):
    """Persisted store carries an incompatible format version or dimension."""


class CorruptManifest(VidmemError):
    """Store directory exists but its manifest cannot be parsed."""


class CorruptStore(VidmemError):
    """Store payload files are inconsistent with the manifest."""


class SchemaError(VidmemError):
    """A structured model output failed strict validation.

    Attributes:
        path: dotted location of the offending field ("" for document-level).
        reason: human-readable cause.
    """

    def __init__(self, reason: str, path: str = ""):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}" if path else reason)


class NoAnchorFound(VidmemError):
    """Anchor resolution produced no confirmed candidate."""


class OccurrenceOutOfRange(VidmemError):
    """Fewer confirmed anchor occurrences than the requested index."""


class UnresolvableRef(VidmemError):
    """An evidence reference points outside the recorded turns."""


class WriterUnavailable(VidmemError):
    """Document writer role failed; event kept with placeholder summary."""


class PlannerUnavailable(VidmemError):
    """Planner role failed twice in a row."""


class ClipFailed(VidmemError):
    """Video clip extraction failed (bad span, missing encoder, bad exit)."""


class ConfigError(VidmemError):
    """Config file unreadable or contains unknown/invalid keys."""
