"""End-to-end ingestion: filter -> embed -> dedup gate -> events -> store.

This is the plumbing the CLI and the benchmark run; each stage keeps its
own module and this file only wires them together in stream order.
"""

from __future__ import annotations

import logging
import os
import tempfile
from typing import Iterable, Optional

from .config import EngineConfig
from .embedding import embed_frame, embed_text, make_backend
from .errors import (
    BackendUnavailable,
    ClipFailed,
    RateLimited,
    WriterUnavailable,
)
from .filters import filter_frame
from .frames import Frame
from .gateway import (
    ModelGateway,
    StubBackend,
    extract_clip,
    prepare_image,
    write_event_document,
)
from .indexer import DedupIndexer, EventSegmenter, finalize_event
from .store import Event, MemoryStore, Moment

logger = logging.getLogger(__name__)


class MemoryPipeline:
    """Feeds a frame stream through the full write path."""

    def __init__(
        self,
        config: Optional[EngineConfig] = None,
        store: Optional[MemoryStore] = None,
        embedder=None,
        gateway: Optional[ModelGateway] = None,
        directory: Optional[str] = None,
        epoch: Optional[float] = None,
        clip_source: Optional[str] = None,
    ):
        self.config = config or EngineConfig()
        self.embedder = embedder or make_backend(self.config.embedding)
        self.store = store or MemoryStore(
            dim=self.embedder.dim,
            config=self.config,
            directory=directory,
            epoch=epoch,
        )
        self.gateway = gateway or ModelGateway(
            StubBackend(), self.config.gateway
        )
        self.clip_source = clip_source
        self.dedup = DedupIndexer(self.config.indexer)
        self.segmenter = EventSegmenter(self.config.indexer)
        self.last_kept: Optional[Frame] = None
        self.committed: list[Moment] = []
        self.rejected: dict[str, int] = {}
        self.frames_kept = 0
        self.events_written = 0
        self._closed = False

    # ----------------------------------------------------------------- feed

    def process_frame(self, frame: Frame) -> dict:
        """One frame in; returns what happened at every stage."""
        self.store.frames_ingested += 1
        verdict = filter_frame(frame, self.last_kept, self.config.filters)
        out = {
            "verdict": verdict,
            "index_event": None,
            "moment": None,
            "events": [],
        }
        if not verdict.keep:
            self.rejected[verdict.reason] = (
                self.rejected.get(verdict.reason, 0) + 1
            )
            return out
        self.frames_kept += 1
        self.last_kept = frame
        embedding = embed_frame(frame, self.embedder)
        index_event = self.dedup.update(frame, embedding)
        out["index_event"] = index_event
        if index_event.moment is not None:
            out["moment"], out["events"] = self._commit(index_event.moment)
        return out

    def _commit(self, draft) -> tuple[Moment, list[Event]]:
        moment = self.store.insert_moment(
            t_rel=draft.t_rel,
            embedding=draft.embedding,
            pixels=draft.pixels,
            t_abs=draft.t_abs,
            d_prev=draft.d_prev,
        )
        self.committed.append(moment)
        runs = self.segmenter.push(moment.t_rel, moment.d_prev)
        events = [self._finalize_run(run) for run in runs]
        return moment, events

    # --------------------------------------------------------------- events

    def _event_clip(self, start_t: float, end_t: float) -> Optional[bytes]:
        if self.clip_source is None:
            return None
        tmp = tempfile.NamedTemporaryFile(suffix=".mp4", delete=False)
        tmp.close()
        try:
            extract_clip(self.clip_source, start_t, end_t, tmp.name)
            with open(tmp.name, "rb") as f:
                return f.read()
        except ClipFailed as exc:
            logger.warning("event clip unavailable (%s); using frames only", exc)
            return None
        finally:
            os.unlink(tmp.name)

    def _finalize_run(self, run: tuple[int, int]) -> Event:
        moments = self.committed[run[0] : run[1] + 1]

        def writer(info: dict) -> str:
            frames = []
            for idx in info["representatives"]:
                jpeg = moments[idx].jpeg
                if jpeg is not None:
                    frames.append(
                        prepare_image(jpeg, self.config.gateway).data
                    )
            clip = self._event_clip(info["start_t"], info["end_t"])
            try:
                return write_event_document(
                    self.gateway,
                    start_t=info["start_t"],
                    end_t=info["end_t"],
                    frames=frames,
                    start_abs=info["start_abs"],
                    end_abs=info["end_abs"],
                    clip=clip,
                )
            except (BackendUnavailable, RateLimited) as exc:
                raise WriterUnavailable(str(exc)) from exc

        draft = finalize_event(moments, writer, self.config.indexer)
        embedding = embed_text(draft.summary, self.embedder)
        event = self.store.insert_event(
            [m.moment_id for m in moments],
            draft.summary,
            embedding,
            unsummarized=draft.unsummarized,
        )
        self.events_written += 1
        return event

    # ---------------------------------------------------------------- close

    def close(self) -> dict:
        """Flush the dedup buffer, close trailing events, refresh disk."""
        if self._closed:
            return self.stats()
        self._closed = True
        draft = self.dedup.flush()
        if draft is not None:
            self._commit(draft)
        for run in self.segmenter.finish():
            self._finalize_run(run)
        if self.store.directory is not None:
            self.store.persist()
        return self.stats()

    def run(self, frames: Iterable[Frame]) -> dict:
        for frame in frames:
            self.process_frame(frame)
        return self.close()

    def stats(self) -> dict:
        return {
            "frames_ingested": self.store.frames_ingested,
            "frames_kept": self.frames_kept,
            "rejected": dict(sorted(self.rejected.items())),
            "moments": len(self.store.moments),
            "events": len(self.store.events),
            "summaries": len(self.store.summaries),
        }
