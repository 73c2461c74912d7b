"""Age-tiered memory store for moments, events and summary documents.

All three record kinds share one embedding matrix; each record carries
the row index of its vector. Pixel payloads (JPEG) exist only for
moments and are progressively thinned and recompressed by the retention
policy as records age across tiers -- embeddings and metadata are never
dropped, so retrieval over old material keeps working after its pixels
are gone.

A store can be purely in-memory or attached to a directory. Attached
stores append every insert durably before returning; retention and
``persist`` rewrite the record files to reflect dropped pixels.
"""

from __future__ import annotations

import io
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from PIL import Image

from .config import EngineConfig, TierPolicy
from .embedding import cosine_distance
from .errors import (
    CorruptManifest,
    CorruptStore,
    DanglingReference,
    DimensionMismatch,
    NoAnchorFound,
    OccurrenceOutOfRange,
    VersionMismatch,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

# compression severity order; a moment's pixels only ever move up
_TIER_RANK = {None: 0, "recent": 0, "mid": 1, "long": 2}


@dataclass
class Moment:
    moment_id: int
    t_rel: float
    t_abs: Optional[float]
    d_prev: Optional[float]
    embedding_row: int
    width: int
    height: int
    jpeg: Optional[bytes] = None
    pixels_dropped: bool = False
    pixels_tier: Optional[str] = None


@dataclass
class Event:
    event_id: int
    moment_ids: list[int]
    start_t: float
    end_t: float
    start_abs: Optional[float]
    end_abs: Optional[float]
    summary: str
    embedding_row: int
    unsummarized: bool = False


@dataclass
class SummaryDocument:
    doc_id: int
    start_t: float
    end_t: float
    time_mode: str
    granularity_s: float
    structure_label: Optional[str]
    text: str
    embedding_row: int


@dataclass
class Candidate:
    """One search hit, uniform across frames and documents."""

    kind: str          # "frame" | "event" | "summary"
    ident: int
    score: float
    t_start: float
    t_end: float
    text: str = ""
    pixels_available: bool = False
    structure_label: Optional[str] = None

    def ref(self) -> tuple[str, int]:
        return (self.kind, self.ident)


@dataclass
class TierReport:
    name: str
    assigned: int = 0
    pixels_kept: int = 0
    dropped_now: int = 0
    recompressed_now: int = 0


@dataclass
class RetentionReport:
    now: float
    tiers: list[TierReport] = field(default_factory=list)

    @property
    def total_dropped_now(self) -> int:
        return sum(t.dropped_now for t in self.tiers)

    @property
    def total_pixels_kept(self) -> int:
        return sum(t.pixels_kept for t in self.tiers)


def encode_jpeg(pixels: np.ndarray, quality: int) -> bytes:
    img = Image.fromarray(np.ascontiguousarray(pixels))
    if img.mode not in ("RGB", "L"):
        img = img.convert("RGB")
    buf = io.BytesIO()
    img.save(buf, format="JPEG", quality=int(quality))
    return buf.getvalue()


def decode_jpeg(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("RGB"))


def _recompress(data: bytes, max_side: int, quality: int) -> bytes:
    with Image.open(io.BytesIO(data)) as img:
        img = img.convert("RGB")
        w, h = img.size
        side = max(w, h)
        if side > max_side:
            scale = max_side / side
            img = img.resize(
                (max(1, round(w * scale)), max(1, round(h * scale))),
                Image.LANCZOS,
            )
        buf = io.BytesIO()
        img.save(buf, format="JPEG", quality=int(quality))
        return buf.getvalue()


class MemoryStore:
    """Records, embeddings, pixels, retention and persistence."""

    def __init__(
        self,
        dim: int,
        config: Optional[EngineConfig] = None,
        directory: Optional[str] = None,
        epoch: Optional[float] = None,
    ):
        self.dim = int(dim)
        self.config = config or EngineConfig()
        self.epoch = epoch
        self.directory = None
        self.moments: list[Moment] = []
        self.events: list[Event] = []
        self.summaries: list[SummaryDocument] = []
        self.frames_ingested = 0
        self._rows: list[np.ndarray] = []
        self._lock = threading.RLock()
        if directory is not None:
            self.attach(directory)

    # ---------------------------------------------------------------- layout

    def _manifest_path(self) -> str:
        return os.path.join(self.directory, "manifest.json")

    def _frames_dir(self) -> str:
        return os.path.join(self.directory, "frames")

    def _frame_path(self, moment_id: int) -> str:
        return os.path.join(self._frames_dir(), f"{moment_id}.jpg")

    def attach(self, directory: str) -> None:
        """Bind to a directory; subsequent inserts are durable."""
        with self._lock:
            self.directory = directory
            os.makedirs(self._frames_dir(), exist_ok=True)
            self._write_manifest()
            if self.moments or self.events or self.summaries:
                self.persist()

    # ---------------------------------------------------------------- insert

    def _add_row(self, embedding: np.ndarray) -> int:
        vec = np.asarray(embedding, dtype=np.float32).reshape(-1)
        if vec.shape[0] != self.dim:
            raise DimensionMismatch(
                f"expected dim {self.dim}, got {vec.shape[0]}"
            )
        self._rows.append(vec)
        if self.directory is not None:
            with open(os.path.join(self.directory, "embeddings.f32"), "ab") as f:
                f.write(vec.tobytes())
                f.flush()
                os.fsync(f.fileno())
        return len(self._rows) - 1

    def _append_record(self, filename: str, record: dict) -> None:
        if self.directory is None:
            return
        path = os.path.join(self.directory, filename)
        with open(path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")
            f.flush()
            os.fsync(f.fileno())

    def insert_moment(
        self,
        t_rel: float,
        embedding: np.ndarray,
        pixels: Optional[np.ndarray] = None,
        jpeg: Optional[bytes] = None,
        t_abs: Optional[float] = None,
        d_prev: Optional[float] = None,
    ) -> Moment:
        with self._lock:
            if pixels is not None and jpeg is None:
                jpeg = encode_jpeg(pixels, self.config.store.base_jpeg_quality)
            if pixels is not None:
                height, width = pixels.shape[0], pixels.shape[1]
            elif jpeg is not None:
                with Image.open(io.BytesIO(jpeg)) as img:
                    width, height = img.size
            else:
                width = height = 0
            row = self._add_row(embedding)
            moment = Moment(
                moment_id=len(self.moments),
                t_rel=float(t_rel),
                t_abs=None if t_abs is None else float(t_abs),
                d_prev=None if d_prev is None else float(d_prev),
                embedding_row=row,
                width=width,
                height=height,
                jpeg=jpeg,
                pixels_dropped=jpeg is None,
            )
            self.moments.append(moment)
            if self.directory is not None:
                if jpeg is not None:
                    with open(self._frame_path(moment.moment_id), "wb") as f:
                        f.write(jpeg)
                        f.flush()
                        os.fsync(f.fileno())
                self._append_record("moments.jsonl", self._moment_record(moment))
            return moment

    def insert_event(
        self,
        moment_ids: Sequence[int],
        summary: str,
        embedding: np.ndarray,
        unsummarized: bool = False,
    ) -> Event:
        with self._lock:
            ids = [int(m) for m in moment_ids]
            if not ids:
                raise DanglingReference("event needs at least one moment")
            for mid in ids:
                if mid < 0 or mid >= len(self.moments):
                    raise DanglingReference(f"moment {mid} does not exist")
            first = self.moments[ids[0]]
            last = self.moments[ids[-1]]
            row = self._add_row(embedding)
            event = Event(
                event_id=len(self.events),
                moment_ids=ids,
                start_t=first.t_rel,
                end_t=last.t_rel,
                start_abs=first.t_abs,
                end_abs=last.t_abs,
                summary=str(summary),
                embedding_row=row,
                unsummarized=bool(unsummarized),
            )
            self.events.append(event)
            self._append_record("events.jsonl", self._event_record(event))
            return event

    def insert_summary(
        self,
        start_t: float,
        end_t: float,
        text: str,
        embedding: np.ndarray,
        granularity_s: float,
        time_mode: str = "relative",
        structure_label: Optional[str] = None,
    ) -> SummaryDocument:
        with self._lock:
            row = self._add_row(embedding)
            doc = SummaryDocument(
                doc_id=len(self.summaries),
                start_t=float(start_t),
                end_t=float(end_t),
                time_mode=str(time_mode),
                granularity_s=float(granularity_s),
                structure_label=structure_label,
                text=str(text),
                embedding_row=row,
            )
            self.summaries.append(doc)
            self._append_record("summaries.jsonl", self._summary_record(doc))
            return doc

    # ---------------------------------------------------------------- access

    def get_embedding(self, row: int) -> np.ndarray:
        return self._rows[row]

    def get_frame_pixels(self, moment_id: int) -> Optional[np.ndarray]:
        m = self.moments[moment_id]
        if m.jpeg is None:
            return None
        return decode_jpeg(m.jpeg)

    def moment_span(self) -> tuple[float, float]:
        if not self.moments:
            return (0.0, 0.0)
        return (self.moments[0].t_rel, self.moments[-1].t_rel)

    # ---------------------------------------------------------------- search

    def _score_rows(self, rows: list[int], query: np.ndarray) -> np.ndarray:
        if not rows:
            return np.zeros(0, dtype=np.float64)
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.dim:
            raise DimensionMismatch(
                f"query dim {q.shape[0]} != store dim {self.dim}"
            )
        mat = np.stack([self._rows[r] for r in rows]).astype(np.float64)
        return mat @ q

    @staticmethod
    def _rank(cands: list[Candidate]) -> list[Candidate]:
        return sorted(cands, key=lambda c: (-c.score, c.t_start, c.ident))

    def search_frames(
        self,
        query: np.ndarray,
        top_k: int = 10,
        threshold: float = 0.0,
        time_range: Optional[tuple[float, float]] = None,
    ) -> list[Candidate]:
        with self._lock:
            pool = self.moments
            if time_range is not None:
                lo, hi = time_range
                pool = [m for m in pool if lo <= m.t_rel <= hi]
            scores = self._score_rows([m.embedding_row for m in pool], query)
            cands = [
                Candidate(
                    kind="frame",
                    ident=m.moment_id,
                    score=float(s),
                    t_start=m.t_rel,
                    t_end=m.t_rel,
                    pixels_available=m.jpeg is not None,
                )
                for m, s in zip(pool, scores)
                if s >= threshold
            ]
            return self._rank(cands)[: max(0, int(top_k))]

    def search_documents(
        self,
        query: np.ndarray,
        sources: Sequence[str] = ("event", "summary"),
        top_k: int = 10,
        threshold: float = 0.0,
        time_range: Optional[tuple[float, float]] = None,
        structure_label: Optional[str] = None,
        granularity_s: Optional[float] = None,
    ) -> list[Candidate]:
        with self._lock:
            cands: list[Candidate] = []
            if "event" in sources:
                pool = self.events
                if time_range is not None:
                    lo, hi = time_range
                    pool = [e for e in pool if e.end_t >= lo and e.start_t <= hi]
                scores = self._score_rows([e.embedding_row for e in pool], query)
                for e, s in zip(pool, scores):
                    if s >= threshold:
                        cands.append(
                            Candidate(
                                kind="event",
                                ident=e.event_id,
                                score=float(s),
                                t_start=e.start_t,
                                t_end=e.end_t,
                                text=e.summary,
                            )
                        )
            if "summary" in sources:
                pool2 = self.summaries
                if time_range is not None:
                    lo, hi = time_range
                    pool2 = [
                        d for d in pool2 if d.end_t >= lo and d.start_t <= hi
                    ]
                if structure_label is not None:
                    pool2 = [
                        d for d in pool2 if d.structure_label == structure_label
                    ]
                if granularity_s is not None:
                    pool2 = [
                        d for d in pool2 if d.granularity_s == granularity_s
                    ]
                scores = self._score_rows([d.embedding_row for d in pool2], query)
                for d, s in zip(pool2, scores):
                    if s >= threshold:
                        cands.append(
                            Candidate(
                                kind="summary",
                                ident=d.doc_id,
                                score=float(s),
                                t_start=d.start_t,
                                t_end=d.end_t,
                                text=d.text,
                                structure_label=d.structure_label,
                            )
                        )
            return self._rank(cands)[: max(0, int(top_k))]

    # ---------------------------------------------------------------- anchor

    def resolve_anchor(
        self,
        query_embedding: np.ndarray,
        occurrence: int = 1,
        top_k: int = 20,
        inspect_k: int = 0,
        before_s: float = 0.0,
        after_s: float = 0.0,
        adjudicator: Optional[Callable[[Candidate], bool]] = None,
    ) -> tuple[float, float]:
        """Locate the occurrence-th accepted document match, in time order,
        and return its window expanded by the before/after margins.

        With ``inspect_k`` > 0 and an adjudicator, the top inspect_k hits
        (by score) are verified and only accepted ones remain eligible;
        otherwise every hit is eligible.
        """
        hits = self.search_documents(query_embedding, top_k=top_k)
        if not hits:
            raise NoAnchorFound("no document candidates for anchor")
        if inspect_k > 0 and adjudicator is not None:
            eligible = [c for c in hits[: int(inspect_k)] if adjudicator(c)]
            if not eligible:
                raise NoAnchorFound("no candidate passed verification")
        else:
            eligible = hits
        eligible = sorted(eligible, key=lambda c: (c.t_start, c.ident))
        occ = int(occurrence)
        if occ < 1 or occ > len(eligible):
            raise OccurrenceOutOfRange(
                f"occurrence {occ} of {len(eligible)} accepted matches"
            )
        chosen = eligible[occ - 1]
        return (chosen.t_start - float(before_s), chosen.t_end + float(after_s))

    # ------------------------------------------------------------- retention

    def _time_basis(self, m: Moment) -> float:
        return m.t_abs if m.t_abs is not None else m.t_rel

    def _tier_for_age(self, age: float) -> TierPolicy:
        for tier in self.config.tiers:
            if tier.max_age_s is None or age <= tier.max_age_s:
                return tier
        return self.config.tiers[-1]

    def apply_retention(self, now: Optional[float] = None) -> RetentionReport:
        """Thin and recompress pixels by age tier.

        Tier per moment comes from its age at ``now``; within each tier a
        greedy minimum-gap walk over all moments in time order selects the
        pixel keepers. The global first and last moments plus every
        long-tier moment referenced by an event are kept regardless.
        Non-selected moments lose pixels permanently; the walk itself
        ignores current pixel state, so reapplying at the same ``now`` is
        a no-op.
        """
        with self._lock:
            if now is None:
                if self.moments:
                    now = max(self._time_basis(m) for m in self.moments)
                else:
                    now = 0.0
            report = RetentionReport(now=float(now))
            tier_reports = {
                t.name: TierReport(name=t.name) for t in self.config.tiers
            }
            if not self.moments:
                report.tiers = list(tier_reports.values())
                return report

            assignment: dict[int, TierPolicy] = {}
            for m in self.moments:
                age = max(0.0, float(now) - self._time_basis(m))
                tier = self._tier_for_age(age)
                assignment[m.moment_id] = tier
                tier_reports[tier.name].assigned += 1

            keep: set[int] = set()
            last_kept_t: dict[str, Optional[float]] = {
                t.name: None for t in self.config.tiers
            }
            for m in sorted(self.moments, key=lambda m: (m.t_rel, m.moment_id)):
                tier = assignment[m.moment_id]
                prev = last_kept_t[tier.name]
                if prev is None or m.t_rel - prev >= tier.min_gap_s:
                    keep.add(m.moment_id)
                    last_kept_t[tier.name] = m.t_rel

            # forced keeps overlay the walk without shifting its anchors
            event_linked: set[int] = set()
            for e in self.events:
                event_linked.update(e.moment_ids)
            long_name = self.config.tiers[-1].name
            for m in self.moments:
                if (
                    assignment[m.moment_id].name == long_name
                    and m.moment_id in event_linked
                ):
                    keep.add(m.moment_id)
            keep.add(self.moments[0].moment_id)
            keep.add(self.moments[-1].moment_id)

            for m in self.moments:
                tier = assignment[m.moment_id]
                rep = tier_reports[tier.name]
                if m.moment_id not in keep:
                    if m.jpeg is not None:
                        rep.dropped_now += 1
                    m.jpeg = None
                    m.pixels_dropped = True
                    continue
                if m.jpeg is None:
                    continue
                rep.pixels_kept += 1
                if (
                    tier.max_side_px is not None
                    and _TIER_RANK[tier.name] > _TIER_RANK[m.pixels_tier]
                ):
                    m.jpeg = _recompress(
                        m.jpeg, tier.max_side_px, tier.jpeg_quality
                    )
                    m.pixels_tier = tier.name
                    rep.recompressed_now += 1
            report.tiers = list(tier_reports.values())
            if self.directory is not None:
                self.persist()
            return report

    # ------------------------------------------------------------ persistence

    def _moment_record(self, m: Moment) -> dict:
        return {
            "moment_id": m.moment_id,
            "t_rel": m.t_rel,
            "t_abs": m.t_abs,
            "d_prev": m.d_prev,
            "embedding_row": m.embedding_row,
            "width": m.width,
            "height": m.height,
            "pixels_dropped": m.pixels_dropped,
            "pixels_tier": m.pixels_tier,
        }

    def _event_record(self, e: Event) -> dict:
        return {
            "event_id": e.event_id,
            "moment_ids": e.moment_ids,
            "start_t": e.start_t,
            "end_t": e.end_t,
            "start_abs": e.start_abs,
            "end_abs": e.end_abs,
            "summary": e.summary,
            "embedding_row": e.embedding_row,
            "unsummarized": e.unsummarized,
        }

    def _summary_record(self, d: SummaryDocument) -> dict:
        return {
            "doc_id": d.doc_id,
            "start_t": d.start_t,
            "end_t": d.end_t,
            "time_mode": d.time_mode,
            "granularity_s": d.granularity_s,
            "structure_label": d.structure_label,
            "text": d.text,
            "embedding_row": d.embedding_row,
        }

    def _write_manifest(self) -> None:
        manifest = {
            "format_version": FORMAT_VERSION,
            "dim": self.dim,
            "epoch": self.epoch,
            "config": self.config.snapshot(),
            "counters": {
                "moments": len(self.moments),
                "events": len(self.events),
                "summaries": len(self.summaries),
                "embedding_rows": len(self._rows),
                "frames_ingested": self.frames_ingested,
            },
        }
        tmp = self._manifest_path() + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self._manifest_path())

    def persist(self, directory: Optional[str] = None) -> str:
        """Write the full store state; attaches ``directory`` if given."""
        with self._lock:
            if directory is not None:
                self.directory = directory
            if self.directory is None:
                raise ValueError("no directory to persist into")
            os.makedirs(self._frames_dir(), exist_ok=True)
            with open(
                os.path.join(self.directory, "embeddings.f32"), "wb"
            ) as f:
                for row in self._rows:
                    f.write(row.tobytes())
            for name, records in (
                ("moments.jsonl", [self._moment_record(m) for m in self.moments]),
                ("events.jsonl", [self._event_record(e) for e in self.events]),
                (
                    "summaries.jsonl",
                    [self._summary_record(d) for d in self.summaries],
                ),
            ):
                with open(
                    os.path.join(self.directory, name), "w", encoding="utf-8"
                ) as f:
                    for rec in records:
                        f.write(json.dumps(rec, sort_keys=True) + "\n")
            for m in self.moments:
                path = self._frame_path(m.moment_id)
                if m.jpeg is not None:
                    with open(path, "wb") as f:
                        f.write(m.jpeg)
                elif os.path.exists(path):
                    os.remove(path)
            self._write_manifest()
            return self.directory

    @classmethod
    def load(
        cls, directory: str, config: Optional[EngineConfig] = None
    ) -> "MemoryStore":
        manifest_path = os.path.join(directory, "manifest.json")
        if not os.path.exists(manifest_path):
            raise CorruptManifest(f"missing manifest at {manifest_path}")
        try:
            with open(manifest_path, "r", encoding="utf-8") as f:
                manifest = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise CorruptManifest(f"unreadable manifest: {exc}") from exc
        version = manifest.get("format_version")
        if version != FORMAT_VERSION:
            raise VersionMismatch(
                f"store format {version!r}, reader supports {FORMAT_VERSION}"
            )
        dim = manifest.get("dim")
        if not isinstance(dim, int) or dim <= 0:
            raise CorruptManifest(f"bad dim in manifest: {dim!r}")

        store = cls(dim=dim, config=config, epoch=manifest.get("epoch"))
        counters = manifest.get("counters", {})
        store.frames_ingested = int(counters.get("frames_ingested", 0))

        emb_path = os.path.join(directory, "embeddings.f32")
        raw = b""
        if os.path.exists(emb_path):
            with open(emb_path, "rb") as f:
                raw = f.read()
        if len(raw) % (dim * 4) != 0:
            raise CorruptStore(
                f"embeddings.f32 length {len(raw)} is not a multiple of "
                f"{dim * 4}"
            )
        flat = np.frombuffer(raw, dtype="<f4")
        n_rows = len(raw) // (dim * 4)
        store._rows = [
            flat[i * dim : (i + 1) * dim].copy() for i in range(n_rows)
        ]

        def read_records(name: str) -> list[dict]:
            path = os.path.join(directory, name)
            out: list[dict] = []
            if not os.path.exists(path):
                return out
            with open(path, "r", encoding="utf-8") as f:
                for ln, line in enumerate(f):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        out.append(json.loads(line))
                    except json.JSONDecodeError as exc:
                        raise CorruptStore(
                            f"{name} line {ln + 1}: {exc}"
                        ) from exc
            return out

        try:
            for rec in read_records("moments.jsonl"):
                row = rec["embedding_row"]
                if row >= n_rows:
                    raise CorruptStore(
                        f"moment {rec['moment_id']} references embedding row "
                        f"{row} beyond {n_rows}"
                    )
                jpeg = None
                if not rec["pixels_dropped"]:
                    fpath = os.path.join(
                        directory, "frames", f"{rec['moment_id']}.jpg"
                    )
                    if os.path.exists(fpath):
                        with open(fpath, "rb") as f:
                            jpeg = f.read()
                    else:
                        logger.warning(
                            "frame file missing for moment %s; treating "
                            "pixels as dropped",
                            rec["moment_id"],
                        )
                store.moments.append(
                    Moment(
                        moment_id=rec["moment_id"],
                        t_rel=rec["t_rel"],
                        t_abs=rec["t_abs"],
                        d_prev=rec["d_prev"],
                        embedding_row=row,
                        width=rec["width"],
                        height=rec["height"],
                        jpeg=jpeg,
                        pixels_dropped=jpeg is None,
                        pixels_tier=rec["pixels_tier"],
                    )
                )
            for rec in read_records("events.jsonl"):
                if rec["embedding_row"] >= n_rows:
                    raise CorruptStore(
                        f"event {rec['event_id']} references embedding row "
                        f"{rec['embedding_row']} beyond {n_rows}"
                    )
                store.events.append(
                    Event(
                        event_id=rec["event_id"],
                        moment_ids=list(rec["moment_ids"]),
                        start_t=rec["start_t"],
                        end_t=rec["end_t"],
                        start_abs=rec["start_abs"],
                        end_abs=rec["end_abs"],
                        summary=rec["summary"],
                        embedding_row=rec["embedding_row"],
                        unsummarized=rec["unsummarized"],
                    )
                )
            for rec in read_records("summaries.jsonl"):
                if rec["embedding_row"] >= n_rows:
                    raise CorruptStore(
                        f"summary {rec['doc_id']} references embedding row "
                        f"{rec['embedding_row']} beyond {n_rows}"
                    )
                store.summaries.append(
                    SummaryDocument(
                        doc_id=rec["doc_id"],
                        start_t=rec["start_t"],
                        end_t=rec["end_t"],
                        time_mode=rec["time_mode"],
                        granularity_s=rec["granularity_s"],
                        structure_label=rec["structure_label"],
                        text=rec["text"],
                        embedding_row=rec["embedding_row"],
                    )
                )
        except KeyError as exc:
            raise CorruptStore(f"record missing field {exc}") from exc

        store.directory = directory
        return store
