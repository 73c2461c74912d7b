"""Synthetic benchmark streams with known ground truth.

A stream is a sequence of segments. In the default mosaic mode (segments
given as a count) each segment renders a distinct block mosaic (bright
blocks on a dark floor, positions drawn from the segment's own seeded
generator) plus per-frame uniform pixel noise, so consecutive frames
inside a segment differ only by noise while segment changes rearrange the
whole layout. Mid-segment, a rectangular patch appears; even segments
carry a saturated query patch (on, then off again) whose dominant channel
is the only thing in the stream bright enough to reach the top histogram
bin, odd segments carry a neutral bright patch that stays until the
segment ends.

Segments may instead be listed explicitly as flat color fields with their
own durations and noise amplitudes. Flat frames have zero sharpness, so
such streams are meant to drive the indexer directly rather than pass the
filter cascade; with noise amplitude 0 every frame of a segment is
byte-identical, which is what the replay and buffering tests want.

Ground truth is therefore exact: segment cut times are event boundaries,
patch toggles are committed moments inside events, and each query patch is
findable by a token chosen to collide with its saturated-channel histogram
dimension under the stub text hasher.

Numeric margins (measured; deterministic textures make them stable to
about 1e-3 across seeds): patch-toggle cosine distances land in
0.14..0.20, above the 0.12 dedup fallback and well below segment-cut
distances of 0.26..0.40; the first segment's patch sits at 0.140, under
the 0.16 relaxed event bar it alone is exposed to, and every later toggle
has a cut peak as one neighbour so it can never be a strict local maximum
itself.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .config import EngineConfig
from .frames import Frame

GRID = 16
FLOOR = (28, 32, 36)
BRIGHTS = (
    (170, 150, 110),
    (150, 110, 170),
    (110, 170, 150),
    (180, 120, 90),
    (120, 90, 180),
    (90, 180, 120),
)
# query tokens hash to the histogram dimension of the patch's saturated
# channel (R/G/B top bin = dims 263/271/279) with positive sign, so the
# stub text embedder scores exactly the frames showing that patch; fracs
# are tuned so every toggle commits (> 0.12) yet stays under the relaxed
# event bar of 0.16 where exposed and far below cut distances (>= 0.26)
QUERY_PATCHES = (
    ("redmarker104", (255, 160, 160), 0.12),
    ("greenmarker142", (160, 255, 160), 0.12),
    ("bluemarker56", (160, 160, 255), 0.14),
)
DISTRACTOR_COLOR = (208, 208, 208)
DISTRACTOR_FRAC = 0.12


@dataclass(frozen=True)
class PlantedPatch:
    segment: int
    color: tuple[int, int, int]
    frac: float = 0.2           # fraction of frame area covered
    start_frac: float = 0.4     # turn-on point within the segment
    end_frac: float = 0.7       # turn-off point within the segment
    token: str = ""             # query token; empty for distractors


@dataclass(frozen=True)
class SegmentSpec:
    """One explicit flat-color segment."""

    duration_s: float
    color: tuple[int, int, int]
    noise_amplitude: Optional[int] = None  # None -> stream default


def default_patches(segments: int) -> tuple[PlantedPatch, ...]:
    patches = []
    q = 0
    for seg in range(segments):
        if seg % 2 == 0:
            token, color, frac = QUERY_PATCHES[q % len(QUERY_PATCHES)]
            q += 1
            patches.append(
                PlantedPatch(segment=seg, color=color, frac=frac, token=token)
            )
        else:
            # distractors persist to segment end, so their only toggle sits
            # directly after a cut peak and can never read as a boundary,
            # even as the trailing candidate of the stream
            patches.append(
                PlantedPatch(
                    segment=seg,
                    color=DISTRACTOR_COLOR,
                    frac=DISTRACTOR_FRAC,
                    end_frac=1.0,
                )
            )
    return tuple(patches)


@dataclass(frozen=True)
class SynthSpec:
    """Either a mosaic stream (segments = count) or explicit flat
    segments (segments = tuple of SegmentSpec)."""

    segments: int | tuple[SegmentSpec, ...] = 6
    segment_duration_s: float = 100.0
    height: int = 96
    width: int = 128
    noise_amplitude: int = 12
    seed: int = 0
    block_bright_p: float = 0.3
    patches: Optional[tuple[PlantedPatch, ...]] = None

    def segment_count(self) -> int:
        if isinstance(self.segments, int):
            return self.segments
        return len(self.segments)

    def segment_spans(self) -> list[tuple[float, float]]:
        """(start_t, duration_s) for each segment; durations > 0."""
        if isinstance(self.segments, int):
            return [
                (i * self.segment_duration_s, self.segment_duration_s)
                for i in range(self.segments)
            ]
        spans = []
        t = 0.0
        for seg in self.segments:
            if seg.duration_s <= 0:
                raise ValueError("segment durations must be positive")
            spans.append((t, seg.duration_s))
            t += seg.duration_s
        return spans

    def resolved_patches(self) -> tuple[PlantedPatch, ...]:
        if self.patches is not None:
            return self.patches
        if isinstance(self.segments, int):
            return default_patches(self.segments)
        return ()

    def duration_s(self) -> float:
        return sum(d for _, d in self.segment_spans())

    def boundaries(self) -> list[float]:
        return [start for start, _ in self.segment_spans()[1:]]

    def query_targets(self) -> list[tuple[str, float, float]]:
        """(token, t_on, t_off) for every query patch."""
        spans = self.segment_spans()
        out = []
        for p in self.resolved_patches():
            base, dur = spans[p.segment]
            if p.token:
                out.append(
                    (
                        p.token,
                        base + p.start_frac * dur,
                        base + p.end_frac * dur,
                    )
                )
        return out


def _base_texture(spec: SynthSpec, seg: int) -> np.ndarray:
    # the patch zone (top-left quadrant) stays at floor color on every
    # layout, and the bright-block count is exact rather than binomial, so
    # the signal a patch introduces is the same for every seed and segment
    # instead of depending on what it happens to cover
    rng = np.random.default_rng(spec.seed * 1000 + seg)
    half = GRID // 2
    free = [
        (i, j)
        for i in range(GRID)
        for j in range(GRID)
        if not (i < half and j < half)
    ]
    count = int(round(spec.block_bright_p * len(free)))
    chosen = rng.choice(len(free), size=count, replace=False)
    mask = np.zeros((GRID, GRID), dtype=bool)
    for c in chosen:
        mask[free[c]] = True
    px = np.zeros((spec.height, spec.width, 3), dtype=np.float64)
    px[:] = FLOOR
    bh = spec.height // GRID
    bw = spec.width // GRID
    color = BRIGHTS[seg % len(BRIGHTS)]
    for i in range(GRID):
        for j in range(GRID):
            if mask[i, j]:
                px[i * bh : (i + 1) * bh, j * bw : (j + 1) * bw] = color
    return px


def _apply_patch(px: np.ndarray, patch: PlantedPatch) -> np.ndarray:
    out = px.copy()
    h, w = px.shape[0], px.shape[1]
    ph = int(round(h * np.sqrt(patch.frac)))
    pw = int(round(w * np.sqrt(patch.frac)))
    out[:ph, :pw] = patch.color
    return out


def _segment_base(spec: SynthSpec, seg: int) -> np.ndarray:
    if isinstance(spec.segments, int):
        return _base_texture(spec, seg)
    px = np.zeros((spec.height, spec.width, 3), dtype=np.float64)
    px[:] = spec.segments[seg].color
    return px


def _segment_amp(spec: SynthSpec, seg: int) -> int:
    if isinstance(spec.segments, int):
        return spec.noise_amplitude
    override = spec.segments[seg].noise_amplitude
    return spec.noise_amplitude if override is None else override


def synth_stream(
    spec: SynthSpec,
    base_fps: float = 0.5,
    epoch: Optional[float] = None,
) -> Iterator[Frame]:
    """Render the stream. Same spec + fps -> identical frames."""
    period = 1.0 / base_fps
    spans = spec.segment_spans()
    starts = [s for s, _ in spans]
    total = spec.duration_s()
    noise_rng = np.random.default_rng(spec.seed)
    bases = {}
    patch_by_seg = {p.segment: p for p in spec.resolved_patches()}
    idx = 0
    seg = 0
    while True:
        t = idx * period
        if t >= total:
            return
        while seg + 1 < len(starts) and t >= starts[seg + 1]:
            seg += 1
        if seg not in bases:
            bases[seg] = _segment_base(spec, seg)
        px = bases[seg]
        patch = patch_by_seg.get(seg)
        if patch is not None:
            start, dur = spans[seg]
            frac_in = (t - start) / dur
            if patch.start_frac <= frac_in < patch.end_frac:
                px = _apply_patch(px, patch)
        amp = _segment_amp(spec, seg)
        if amp > 0:
            noise = noise_rng.integers(
                -amp, amp + 1, size=(spec.height, spec.width, 3)
            )
            pixels = np.clip(px + noise, 0, 255).astype(np.uint8)
        else:
            pixels = px.astype(np.uint8)
        yield Frame(
            pixels=pixels,
            frame_index=idx,
            t_rel=t,
            t_abs=None if epoch is None else epoch + t,
        )
        idx += 1


# ----------------------------------------------------------------- metrics


def boundary_metrics(
    predicted: list[float], truth: list[float], tolerance_s: float
) -> dict:
    """Greedy one-to-one matching of predicted boundary times to truth."""
    remaining = list(truth)
    matched = 0
    for p in sorted(predicted):
        best = None
        for i, g in enumerate(remaining):
            if abs(p - g) <= tolerance_s and (
                best is None or abs(p - g) < abs(remaining[best] - p)
            ):
                best = i
        if best is not None:
            remaining.pop(best)
            matched += 1
    recall = matched / len(truth) if truth else 1.0
    precision = matched / len(predicted) if predicted else 1.0
    return {
        "matched": matched,
        "recall": recall,
        "precision": precision,
        "predicted": len(predicted),
        "truth": len(truth),
    }


def eval_index(store, spec: SynthSpec, base_fps: float) -> dict:
    """Compare the indexed structure against the stream recipe ground truth."""
    tol = 1.0 / base_fps
    predicted = [e.start_t for e in store.events if e.start_t > 0.0]
    metrics = boundary_metrics(predicted, spec.boundaries(), tol)
    object_found = []
    for token, t_on, t_off in spec.query_targets():
        hit = any(
            t_on - tol <= m.t_rel <= t_off + tol for m in store.moments
        )
        object_found.append({"token": token, "found": hit})
    return {
        "boundaries": metrics,
        "objects": object_found,
        "moments": len(store.moments),
        "events": len(store.events),
    }


# ------------------------------------------------------------------- bench

# reference operating points for the default configuration; the month
# figure is the kept-frame share when one frame every two seconds is
# indexed for ~30 days of mostly-static scenes with occasional changes
BASELINES = {
    "month_scale_kept_share": 0.0006,
    "smoke_kept_share": 0.05,
}

PRESETS = {
    "smoke": 6,
    "hour": 36,
    "day": 864,
    "month": 25920,
}


def spec_from_dict(data: dict) -> SynthSpec:
    """Build a SynthSpec from parsed JSON; unknown keys are errors."""
    from .errors import ConfigError

    if not isinstance(data, dict):
        raise ConfigError("synth spec must be a JSON object")
    work = dict(data)
    kwargs = {}
    if "segments" in work:
        raw = work.pop("segments")
        if isinstance(raw, int):
            kwargs["segments"] = raw
        elif isinstance(raw, list):
            segs = []
            for item in raw:
                extra = set(item) - {"duration_s", "color", "noise_amplitude"}
                if extra:
                    raise ConfigError(
                        f"unknown segment keys: {sorted(extra)}"
                    )
                segs.append(
                    SegmentSpec(
                        duration_s=float(item["duration_s"]),
                        color=tuple(int(c) for c in item["color"]),
                        noise_amplitude=item.get("noise_amplitude"),
                    )
                )
            kwargs["segments"] = tuple(segs)
        else:
            raise ConfigError("segments must be a count or a list")
    if "patches" in work:
        raw = work.pop("patches")
        patches = []
        for item in raw or []:
            allowed = {
                "segment", "color", "frac", "start_frac", "end_frac", "token"
            }
            extra = set(item) - allowed
            if extra:
                raise ConfigError(f"unknown patch keys: {sorted(extra)}")
            item = dict(item)
            item["color"] = tuple(int(c) for c in item["color"])
            patches.append(PlantedPatch(**item))
        kwargs["patches"] = tuple(patches)
    simple = {
        "segment_duration_s": float,
        "height": int,
        "width": int,
        "noise_amplitude": int,
        "seed": int,
        "block_bright_p": float,
    }
    for key, cast in simple.items():
        if key in work:
            kwargs[key] = cast(work.pop(key))
    if work:
        raise ConfigError(f"unknown synth spec keys: {sorted(work)}")
    return SynthSpec(**kwargs)


def run_bench(
    preset: str = "smoke",
    seed: int = 0,
    config: Optional[EngineConfig] = None,
    gateway=None,
    with_queries: bool = True,
    spec: Optional[SynthSpec] = None,
) -> dict:
    """Index a synthetic stream, score it against ground truth, and (by
    default) run retrieval queries for every planted object and event."""
    from .agent import run_retrieval
    from .frames import StreamSpec, open_source
    from .gateway import ModelGateway, StubBackend
    from .pipeline import MemoryPipeline

    if spec is None:
        if preset not in PRESETS:
            raise ValueError(
                f"unknown preset {preset!r}; pick one of {sorted(PRESETS)}"
            )
        spec = SynthSpec(segments=PRESETS[preset], seed=seed)
    cfg = config or EngineConfig()
    gw = gateway or ModelGateway(StubBackend(), cfg.gateway)
    pipeline = MemoryPipeline(config=cfg, gateway=gw)
    started = time.perf_counter()
    frames = open_source(StreamSpec(source=spec, base_fps=cfg.base_fps))
    stats = pipeline.run(frames)
    index_elapsed = time.perf_counter() - started

    report = {
        "preset": preset,
        "seed": seed,
        "stats": stats,
        "kept_share": (
            stats["moments"] / stats["frames_ingested"]
            if stats["frames_ingested"]
            else 0.0
        ),
        "index": eval_index(pipeline.store, spec, cfg.base_fps),
        "baselines": dict(BASELINES),
        "index_elapsed_s": round(index_elapsed, 3),
    }

    if with_queries:
        store = pipeline.store
        tol = 1.0 / cfg.base_fps
        clock = lambda: 0.0  # noqa: E731 - deterministic traces
        object_hits = []
        for token, t_on, t_off in spec.query_targets():
            answer = run_retrieval(
                token, store, gw, pipeline.embedder, cfg, clock=clock
            )
            ref = answer.best_ref
            hit = bool(
                ref
                and ref["kind"] == "frame"
                and t_on - tol <= ref["t_start"] <= t_off + tol
            )
            object_hits.append({"token": token, "hit": hit})
        event_hits = []
        for event in store.events:
            goal = f"event from {event.start_t:.1f}s"
            answer = run_retrieval(
                goal, store, gw, pipeline.embedder, cfg, clock=clock
            )
            ref = answer.best_ref
            hit = bool(
                ref
                and ref["kind"] == "event"
                and ref["id"] == event.event_id
            )
            event_hits.append({"event_id": event.event_id, "hit": hit})
        report["object_queries"] = {
            "hits": sum(1 for o in object_hits if o["hit"]),
            "total": len(object_hits),
            "detail": object_hits,
        }
        report["event_queries"] = {
            "hits": sum(1 for e in event_hits if e["hit"]),
            "total": len(event_hits),
            "detail": event_hits,
        }
    report["elapsed_s"] = round(time.perf_counter() - started, 3)
    return report
