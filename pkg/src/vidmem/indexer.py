"""Online keyframe indexing: adaptive dedup gating and event segmentation.

The dedup gate keeps one reference embedding and a single buffered
candidate frame. While incoming frames stay within the adaptive distance
threshold of the reference they replace the buffered candidate; the first
frame to exceed the threshold commits the buffered endpoint as a moment
and becomes the new reference. The threshold is re-derived on every step
from a bounded history of observed distances via Otsu's method, with a
fixed fallback until the history is informative.

Event segmentation watches the distances between consecutive committed
moments: a strict local peak above a relaxed Otsu threshold of that
second history starts a new event, and any event is force-closed rather
than allowed to span more than the configured maximum duration. Peak
confirmation needs the following moment's distance, so it is deferred by
exactly one commit; nothing ever looks ahead of committed data.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import IndexerConfig
from .embedding import cosine_distance
from .errors import WriterUnavailable
from .frames import Frame


def uniform_indices(n: int, k: int) -> list[int]:
    """Up to k indices spread uniformly over range(n), endpoints included."""
    if n <= 0 or k <= 0:
        return []
    if n <= k:
        return list(range(n))
    if k == 1:
        return [0]
    return [round(i * (n - 1) / (k - 1)) for i in range(k)]


class DistanceHistory:
    """Bounded ring of distance observations feeding the Otsu threshold."""

    def __init__(self, capacity: int = 512, min_samples: int = 32):
        self.capacity = capacity
        self.min_samples = min_samples
        self._ring: deque[float] = deque(maxlen=capacity)

    def push(self, value: float) -> None:
        self._ring.append(float(value))

    def values(self) -> list[float]:
        return list(self._ring)

    def __len__(self) -> int:
        return len(self._ring)


def otsu_threshold(
    history,
    fallback: float,
    *,
    bins: int = 64,
    min_samples: Optional[int] = None,
) -> float:
    """Data-driven split of a distance history into near/far classes.

    Values are bucketed into ``bins`` equal-width bins over [min, max] and
    the bin boundary maximizing the classic inter-class variance is
    returned. The fallback is returned while the history is shorter than
    ``min_samples`` or completely degenerate (max == min, i.e. zero
    variance). Ties resolve to the smallest boundary.
    """
    if isinstance(history, DistanceHistory):
        vals = history.values()
        if min_samples is None:
            min_samples = history.min_samples
    else:
        vals = list(history)
        if min_samples is None:
            min_samples = 32
    n = len(vals)
    if n < min_samples:
        return float(fallback)
    arr = np.asarray(vals, dtype=np.float64)
    vmin = float(arr.min())
    vmax = float(arr.max())
    if vmax == vmin:
        return float(fallback)
    width = (vmax - vmin) / bins
    idx = np.minimum(
        np.floor((arr - vmin) / width).astype(np.intp), bins - 1
    )
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    centers = vmin + (np.arange(bins, dtype=np.float64) + 0.5) * width
    weight_cum = np.cumsum(counts)
    mass_cum = np.cumsum(counts * centers)
    total_mass = float(mass_cum[-1])
    best_k = -1
    best_var = -1.0
    for k in range(1, bins):
        w0 = float(weight_cum[k - 1])
        w1 = n - w0
        if w0 == 0.0 or w1 == 0.0:
            continue
        mu0 = float(mass_cum[k - 1]) / w0
        mu1 = (total_mass - float(mass_cum[k - 1])) / w1
        var = w0 * w1 * (mu0 - mu1) ** 2
        if var > best_var:
            best_var = var
            best_k = k
    if best_k < 0:
        return float(fallback)
    return vmin + best_k * width


@dataclass
class MomentDraft:
    """A committed moment before the store assigns its id."""

    t_rel: float
    t_abs: Optional[float]
    d_prev: Optional[float]
    embedding: np.ndarray
    pixels: np.ndarray


@dataclass
class IndexEvent:
    """Outcome of feeding one frame to the dedup gate.

    kind: "first" (first frame, committed immediately), "buffered"
    (quasi-static, candidate replaced) or "committed" (threshold
    exceeded, a moment was produced).
    """

    kind: str
    moment: Optional[MomentDraft] = None
    distance: Optional[float] = None
    threshold: Optional[float] = None


@dataclass
class _Buffered:
    frame: Frame
    embedding: np.ndarray
    committed: bool


class DedupIndexer:
    """Adaptive-threshold dedup gate over embedded frames (stage 3).

    Feed frames in stream order with ``update``; call ``flush`` at stream
    close to commit a still-pending buffered candidate. Processing a
    prefix of a stream yields exactly the same commits as processing the
    full stream up to that point (no lookahead).
    """

    def __init__(self, config: Optional[IndexerConfig] = None):
        self.config = config or IndexerConfig()
        self.history = DistanceHistory(
            self.config.history_capacity, self.config.min_samples
        )
        self.ref_embedding: Optional[np.ndarray] = None
        self.buffer: Optional[_Buffered] = None
        self.last_committed_embedding: Optional[np.ndarray] = None
        self.frames_seen = 0
        self.moments_committed = 0

    @property
    def fallback_distance(self) -> float:
        return 1.0 - self.config.fallback_dedup_similarity

    def _commit(self, frame: Frame, embedding: np.ndarray) -> MomentDraft:
        d_prev = None
        if self.last_committed_embedding is not None:
            d_prev = cosine_distance(embedding, self.last_committed_embedding)
        self.last_committed_embedding = embedding
        self.moments_committed += 1
        return MomentDraft(
            t_rel=frame.t_rel,
            t_abs=frame.t_abs,
            d_prev=d_prev,
            embedding=embedding,
            pixels=frame.pixels,
        )

    def update(self, frame: Frame, embedding: np.ndarray) -> IndexEvent:
        """Advance the gate by one filtered frame."""
        self.frames_seen += 1
        if self.ref_embedding is None:
            self.ref_embedding = embedding
            moment = self._commit(frame, embedding)
            return IndexEvent(kind="first", moment=moment)

        d_c = cosine_distance(embedding, self.ref_embedding)
        self.history.push(d_c)
        threshold = otsu_threshold(
            self.history,
            fallback=self.fallback_distance,
            bins=self.config.otsu_bins,
        )
        if d_c <= threshold:
            self.buffer = _Buffered(frame, embedding, committed=False)
            return IndexEvent(kind="buffered", distance=d_c, threshold=threshold)

        # threshold exceeded: commit the buffered endpoint if one is
        # pending, otherwise the triggering frame itself
        if self.buffer is not None and not self.buffer.committed:
            moment = self._commit(self.buffer.frame, self.buffer.embedding)
            self.buffer = _Buffered(frame, embedding, committed=False)
        else:
            moment = self._commit(frame, embedding)
            self.buffer = _Buffered(frame, embedding, committed=True)
        self.ref_embedding = embedding
        return IndexEvent(
            kind="committed", moment=moment, distance=d_c, threshold=threshold
        )

    def flush(self) -> Optional[MomentDraft]:
        """Commit the pending buffered candidate at stream close, if any."""
        if self.buffer is not None and not self.buffer.committed:
            moment = self._commit(self.buffer.frame, self.buffer.embedding)
            self.buffer = _Buffered(
                self.buffer.frame, self.buffer.embedding, committed=True
            )
            return moment
        return None


class EventSegmenter:
    """Groups committed moments into events, online.

    ``push`` one (t_rel, d_prev) per committed moment in order; it returns
    the runs that became final because a boundary was confirmed. ``finish``
    resolves the trailing peak candidate (edge rule: a missing neighbour
    counts as satisfied) and closes the open run.
    """

    def __init__(self, config: Optional[IndexerConfig] = None):
        self.config = config or IndexerConfig()
        self.event_history = DistanceHistory(
            self.config.history_capacity, self.config.min_samples
        )
        self.times: list[float] = []
        self.dists: list[Optional[float]] = []
        self.open_start = 0
        self.boundaries: list[int] = []
        self.count = 0

    @property
    def fallback_distance(self) -> float:
        return 1.0 - self.config.fallback_event_similarity

    def _relaxed_threshold(self) -> float:
        return self.config.relax_factor * otsu_threshold(
            self.event_history,
            fallback=self.fallback_distance,
            bins=self.config.otsu_bins,
        )

    def _is_peak(self, j: int, right: Optional[float]) -> bool:
        v = self.dists[j]
        if v is None:
            return False
        left = self.dists[j - 1] if j >= 1 else None
        if left is not None and not v > left:
            return False
        if right is not None and not v > right:
            return False
        return v > self._relaxed_threshold()

    def _close(self, boundary: int) -> tuple[int, int]:
        run = (self.open_start, boundary - 1)
        self.open_start = boundary
        self.boundaries.append(boundary)
        return run

    def push(self, t_rel: float, d_prev: Optional[float]) -> list[tuple[int, int]]:
        i = self.count
        self.count += 1
        self.times.append(t_rel)
        self.dists.append(d_prev)
        if d_prev is not None:
            self.event_history.push(d_prev)

        closed: list[tuple[int, int]] = []
        # the arrival of moment i supplies the right neighbour that peak
        # candidate i-1 was waiting for
        j = i - 1
        if j >= 1 and j > self.open_start and self._is_peak(j, right=d_prev):
            closed.append(self._close(j))
        if (
            i > self.open_start
            and t_rel - self.times[self.open_start]
            > self.config.max_event_duration_s
        ):
            closed.append(self._close(i))
        return closed

    def finish(self) -> list[tuple[int, int]]:
        """Resolve the trailing candidate and close the final run."""
        closed: list[tuple[int, int]] = []
        if self.count == 0:
            return closed
        j = self.count - 1
        if j >= 1 and j > self.open_start and self._is_peak(j, right=None):
            closed.append(self._close(j))
        closed.append((self.open_start, self.count - 1))
        self.open_start = self.count
        return closed


def detect_event_boundaries(
    moments: Sequence, config: Optional[IndexerConfig] = None
) -> list[int]:
    """Boundary indices (event starts, excluding 0) for an ordered moment
    sequence. Each element needs ``t_rel`` and ``d_prev`` attributes; the
    scan is the same incremental one the online path uses.
    """
    seg = EventSegmenter(config)
    for m in moments:
        seg.push(m.t_rel, m.d_prev)
    seg.finish()
    return list(seg.boundaries)


@dataclass
class EventDraft:
    """A finalized event run before store insertion."""

    moment_indices: list[int]      # indices into the committed sequence
    start_t: float
    end_t: float
    start_abs: Optional[float]
    end_abs: Optional[float]
    summary: str
    unsummarized: bool
    representative_indices: list[int]


def finalize_event(
    run: Sequence,
    writer,
    config: Optional[IndexerConfig] = None,
) -> EventDraft:
    """Turn a closed run of committed moments into an event document.

    ``run`` is the ordered list of moment objects (needs t_rel, t_abs and
    an index/identity position given by enumeration). ``writer`` is a
    callable(info dict) -> summary text; info carries the time range and
    the representative positions (uniform, capped). A writer failure
    produces a deterministic placeholder summary flagged unsummarized so
    the event can be rewritten later.
    """
    cfg = config or IndexerConfig()
    if not run:
        raise ValueError("cannot finalize an empty run")
    reps = uniform_indices(len(run), cfg.event_writer_max_frames)
    start = run[0]
    end = run[-1]
    info = {
        "start_t": start.t_rel,
        "end_t": end.t_rel,
        "start_abs": start.t_abs,
        "end_abs": end.t_abs,
        "moment_count": len(run),
        "representatives": reps,
    }
    try:
        summary = writer(info)
        unsummarized = False
        if not summary or not str(summary).strip():
            raise WriterUnavailable("writer returned empty summary")
    except WriterUnavailable:
        summary = (
            f"(pending description) interval {start.t_rel:.1f}s to "
            f"{end.t_rel:.1f}s holding {len(run)} moments"
        )
        unsummarized = True
    return EventDraft(
        moment_indices=list(range(len(run))),
        start_t=start.t_rel,
        end_t=end.t_rel,
        start_abs=start.t_abs,
        end_abs=end.t_abs,
        summary=str(summary),
        unsummarized=unsummarized,
        representative_indices=reps,
    )
