"""Bounded agentic retrieval over the memory store.

The loop alternates planner calls with tool execution for at most a
fixed number of turns. Every planner reply must validate against the
wire schemas; one repair attempt is made per turn, after which the loop
degrades deterministically (a permissive search on the first turn, a
forced answer later). Search results feed a context transcript the
planner sees next turn; refs into that transcript let later turns
inspect or cite earlier evidence. The loop also stops itself when two
consecutive non-inspecting turns return the same candidate set.

All clock reads go through an injectable callable so a scripted backend
yields byte-identical traces across runs.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .config import AgentConfig, EngineConfig
from .embedding import embed_text
from .errors import (
    NoAnchorFound,
    OccurrenceOutOfRange,
    SchemaError,
    UnresolvableRef,
)
from .gateway import (
    MessagePayload,
    ModelGateway,
    adjudicate_anchor,
    inspect_frames,
    load_prompt,
    prepare_image,
    write_summary_document,
)
from .indexer import uniform_indices
from .schemas import (
    AnchorSpec,
    AnchorVerdict,
    AnswerAction,
    EvidenceRef,
    InspectAction,
    PlannerAction,
    QuerySpec,
    SearchAction,
    SummarizeAction,
    TimeRange,
    parse_json_object,
    validate_action,
    validate_routing,
)
from .store import Candidate, MemoryStore, SummaryDocument

logger = logging.getLogger(__name__)

REPAIR_SUFFIX = (
    "\n\nYour previous reply was rejected: {reason}{where}\n"
    "Reply with ONLY one valid JSON object."
)


@dataclass
class TurnRecord:
    turn_idx: int           # 1-based
    kind: str               # search | inspect | summarize | answer
    thought: str
    detail: str
    results: list[Candidate] = field(default_factory=list)
    inspection: Optional[str] = None
    notes: list[str] = field(default_factory=list)
    at: float = 0.0

    def ref_set(self) -> frozenset:
        return frozenset(c.ref() for c in self.results)

    def to_dict(self) -> dict:
        return {
            "turn_idx": self.turn_idx,
            "kind": self.kind,
            "thought": self.thought,
            "detail": self.detail,
            "results": [
                {
                    "kind": c.kind,
                    "id": c.ident,
                    "score": round(c.score, 6),
                    "t_start": c.t_start,
                    "t_end": c.t_end,
                }
                for c in self.results
            ],
            "inspection": self.inspection,
            "notes": list(self.notes),
            "at": self.at,
        }


@dataclass
class GroundedAnswer:
    text: str
    sufficiency: bool
    best_ref: Optional[dict]
    turns: list[TurnRecord]
    trace: dict
    session_recap: Optional[str] = None

    def trace_json(self) -> str:
        return json.dumps(self.trace, sort_keys=True)


class RetrievalAgent:
    """One goal, one bounded loop, one grounded answer."""

    def __init__(
        self,
        store: MemoryStore,
        gateway: ModelGateway,
        embedder,
        config: Optional[EngineConfig] = None,
        clock: Callable[[], float] = time.time,
    ):
        self.store = store
        self.gateway = gateway
        self.embedder = embedder
        self.config = config or EngineConfig()
        self.agent_cfg: AgentConfig = self.config.agent
        self.clock = clock

    # ------------------------------------------------------------ rendering

    def _available_structures(self) -> str:
        labels = sorted(
            {
                d.structure_label
                for d in self.store.summaries
                if d.structure_label
            }
        )
        return ", ".join(labels) if labels else "(none)"

    def _render_context(self, turns: Sequence[TurnRecord]) -> str:
        if not turns:
            return "(nothing yet)"
        lines: list[str] = []
        for t in turns:
            lines.append(
                f"- turn {t.turn_idx}: {t.kind} {t.detail} -> "
                f"{len(t.results)} results"
            )
            shown = t.results[:8]
            for i, c in enumerate(shown):
                span = (
                    f"t={c.t_start:.1f}s"
                    if c.t_start == c.t_end
                    else f"t={c.t_start:.1f}s..{c.t_end:.1f}s"
                )
                snippet = f' "{c.text[:80]}"' if c.text else ""
                lines.append(
                    f"  [{i}] {c.kind} id={c.ident} {span} "
                    f"score={c.score:.3f}{snippet}"
                )
            if len(t.results) > len(shown):
                lines.append(f"  ... and {len(t.results) - len(shown)} more")
            if t.inspection:
                lines.append(f"  inspection: {t.inspection[:200]}")
            for note in t.notes:
                lines.append(f"  note: {note}")
        return "\n".join(lines)

    def _state_prompt(self, goal: str, turns: Sequence[TurnRecord]) -> str:
        template = load_prompt("planner_state")
        remaining = self.agent_cfg.turn_budget - len(turns)
        return template.format(
            goal=goal,
            available_summary_structures=self._available_structures(),
            context=self._render_context(turns),
            remaining_turns=remaining,
        )

    # ------------------------------------------------------------- planning

    def _plan_turn(
        self, goal: str, turns: list[TurnRecord]
    ) -> tuple[PlannerAction, bool]:
        """Returns (action, forced). forced means the planner failed twice
        and the loop substituted a deterministic action."""
        state = self._state_prompt(goal, turns)
        raw = self.gateway.call_role("planner", MessagePayload(text=state))
        try:
            return validate_action(raw), False
        except SchemaError as first_err:
            where = f" (at {first_err.path})" if first_err.path else ""
            repair = state + REPAIR_SUFFIX.format(
                reason=first_err.reason, where=where
            )
            raw2 = self.gateway.call_role(
                "planner", MessagePayload(text=repair)
            )
            try:
                return validate_action(raw2), False
            except SchemaError:
                if not turns:
                    # very first turn: fall back to a permissive search so
                    # the session still gathers evidence
                    return (
                        SearchAction(
                            action="search",
                            queries=[
                                QuerySpec(
                                    q=goal,
                                    top_k=self.agent_cfg.permissive_top_k,
                                    inspect_k=self.agent_cfg.permissive_inspect_k,
                                    threshold=0.0,
                                )
                            ],
                            sources=["frame", "event", "summary"],
                            thought=(
                                "planner output invalid twice; running a "
                                "permissive search"
                            ),
                        ),
                        True,
                    )
                return (
                    AnswerAction(
                        action="answer",
                        response=self._fallback_answer_text(turns),
                        best_ref=None,
                        thought=(
                            "planner output invalid twice; answering with "
                            "best available evidence"
                        ),
                    ),
                    True,
                )

    # ----------------------------------------------------------- refs/times

    def _resolve_ref(
        self, ref: EvidenceRef, turns: Sequence[TurnRecord]
    ) -> Candidate:
        if ref.turn_idx < 1 or ref.turn_idx > len(turns):
            raise UnresolvableRef(f"turn_idx {ref.turn_idx} out of range")
        record = turns[ref.turn_idx - 1]
        if ref.result_idx < 0 or ref.result_idx >= len(record.results):
            raise UnresolvableRef(
                f"result_idx {ref.result_idx} out of range for turn "
                f"{ref.turn_idx}"
            )
        return record.results[ref.result_idx]

    def _anchor_adjudicator(
        self, anchor: AnchorSpec
    ) -> Optional[Callable[[Candidate], bool]]:
        if anchor.inspect_k <= 0:
            return None

        def _judge(candidate: Candidate) -> bool:
            frames = self._frames_for_candidate(candidate, cap=4)
            window = f"{candidate.t_start:.1f}s to {candidate.t_end:.1f}s"
            reply = adjudicate_anchor(
                self.gateway,
                target_event=anchor.target_event,
                verification_prompt=anchor.verification_prompt
                or anchor.target_event,
                candidate_hint=anchor.candidate_hint or "",
                candidate_window=window,
                frames=frames,
            )
            try:
                verdict = AnchorVerdict.model_validate(
                    parse_json_object(reply)
                )
            except SchemaError:
                return False
            return bool(verdict.match)

        return _judge

    def _resolve_anchor_window(
        self, anchor: AnchorSpec
    ) -> tuple[float, float]:
        emb = embed_text(anchor.target_event, self.embedder)
        return self.store.resolve_anchor(
            emb,
            occurrence=anchor.occurrence_index,
            top_k=anchor.top_k,
            inspect_k=anchor.inspect_k,
            before_s=anchor.before_seconds,
            after_s=anchor.after_seconds,
            adjudicator=self._anchor_adjudicator(anchor),
        )

    def _resolve_time_range(
        self, tr: Optional[TimeRange]
    ) -> Optional[tuple[float, float]]:
        """TimeRange -> concrete [lo, hi] in relative seconds, or None for
        unrestricted. Anchor failures propagate to the caller."""
        if tr is None or tr.is_empty():
            return None
        span_lo, span_hi = self.store.moment_span()
        if tr.anchor is not None:
            return self._resolve_anchor_window(tr.anchor)
        if tr.start_anchor is not None or tr.end_anchor is not None:
            lo = span_lo
            hi = span_hi
            if tr.start_anchor is not None:
                lo = self._resolve_anchor_window(tr.start_anchor)[0]
            if tr.end_anchor is not None:
                hi = self._resolve_anchor_window(tr.end_anchor)[1]
            return (lo, hi)
        lo = tr.min_time if tr.min_time is not None else span_lo
        hi = tr.max_time if tr.max_time is not None else span_hi
        if tr.time_mode == "absolute":
            if self.store.epoch is None:
                logger.warning(
                    "absolute time_range but store has no epoch; "
                    "treating values as relative"
                )
            else:
                if tr.min_time is not None:
                    lo = tr.min_time - self.store.epoch
                if tr.max_time is not None:
                    hi = tr.max_time - self.store.epoch
        return (float(lo), float(hi))

    # ------------------------------------------------------------- evidence

    def _moments_in_window(
        self, window: Optional[tuple[float, float]], with_pixels: bool = True
    ):
        out = []
        for m in self.store.moments:
            if window is not None and not (
                window[0] <= m.t_rel <= window[1]
            ):
                continue
            if with_pixels and m.jpeg is None:
                continue
            out.append(m)
        return out

    def _frames_for_candidate(
        self, candidate: Candidate, cap: int
    ) -> list[bytes]:
        moments: list = []
        if candidate.kind == "frame":
            m = self.store.moments[candidate.ident]
            moments = [m] if m.jpeg is not None else []
        elif candidate.kind == "event":
            event = self.store.events[candidate.ident]
            pool = [
                self.store.moments[mid]
                for mid in event.moment_ids
                if self.store.moments[mid].jpeg is not None
            ]
            moments = [pool[i] for i in uniform_indices(len(pool), cap)]
        else:
            pool = self._moments_in_window(
                (candidate.t_start, candidate.t_end)
            )
            moments = [pool[i] for i in uniform_indices(len(pool), cap)]
        return [
            prepare_image(m.jpeg, self.gateway.config).data for m in moments
        ]

    def _frames_for_moments(self, moments, cap: int) -> tuple[list[bytes], list[float]]:
        picked = [moments[i] for i in uniform_indices(len(moments), cap)]
        frames = [
            prepare_image(m.jpeg, self.gateway.config).data for m in picked
        ]
        return frames, [m.t_rel for m in picked]

    # ---------------------------------------------------------------- tools

    def _execute_search(
        self, action: SearchAction, turns: list[TurnRecord]
    ) -> TurnRecord:
        record = TurnRecord(
            turn_idx=len(turns) + 1,
            kind="search",
            thought=action.thought,
            detail="queries=" + str([q.q for q in action.queries]),
            at=self.clock(),
        )
        try:
            window = self._resolve_time_range(action.time_range)
        except (NoAnchorFound, OccurrenceOutOfRange) as exc:
            record.notes.append(
                f"anchor attempt failed ({exc}); explicitly change the method"
            )
            return record

        sources = list(action.sources or ["frame", "event", "summary"])
        structure_label = None
        granularity = None
        if action.summary_filter is not None:
            # a summary filter narrows the whole search to summary docs
            sources = ["summary"]
            structure_label = action.summary_filter.summary_structure
            granularity = action.summary_filter.granularity_seconds

        visual_embedding = None
        if action.visual_ref is not None:
            try:
                cand = self._resolve_ref(action.visual_ref, turns)
                row = self._embedding_row_for(cand)
                visual_embedding = self.store.get_embedding(row)
            except UnresolvableRef as exc:
                record.notes.append(
                    f"visual_ref unresolvable ({exc}); using query text"
                )

        merged: dict[tuple[str, int], Candidate] = {}
        for query in action.queries:
            if visual_embedding is not None:
                emb = visual_embedding
            else:
                emb = embed_text(query.q, self.embedder)
            hits: list[Candidate] = []
            if "frame" in sources:
                hits.extend(
                    self.store.search_frames(
                        emb,
                        top_k=query.top_k,
                        threshold=query.threshold,
                        time_range=window,
                    )
                )
            doc_sources = [s for s in sources if s in ("event", "summary")]
            if doc_sources:
                hits.extend(
                    self.store.search_documents(
                        emb,
                        sources=doc_sources,
                        top_k=query.top_k,
                        threshold=query.threshold,
                        time_range=window,
                        structure_label=structure_label,
                        granularity_s=granularity,
                    )
                )
            for c in hits:
                key = c.ref()
                if key not in merged or c.score > merged[key].score:
                    merged[key] = c
        record.results = sorted(
            merged.values(), key=lambda c: (-c.score, c.t_start, c.ident)
        )

        inspect_k = max((q.inspect_k for q in action.queries), default=0)
        if inspect_k > 0:
            frame_moments = [
                self.store.moments[c.ident]
                for c in record.results[:inspect_k]
                if c.kind == "frame"
                and self.store.moments[c.ident].jpeg is not None
            ]
            frame_moments = frame_moments[: self.agent_cfg.inspect_frame_cap]
            if frame_moments:
                frames, times = self._frames_for_moments(
                    frame_moments, self.agent_cfg.inspect_frame_cap
                )
                prompt = action.inspection_prompt or "Describe these frames."
                record.inspection = inspect_frames(
                    self.gateway, prompt, frames, times
                )
            else:
                record.notes.append("no frame pixels available to inspect")
        return record

    def _embedding_row_for(self, candidate: Candidate) -> int:
        if candidate.kind == "frame":
            return self.store.moments[candidate.ident].embedding_row
        if candidate.kind == "event":
            return self.store.events[candidate.ident].embedding_row
        return self.store.summaries[candidate.ident].embedding_row

    def _execute_inspect(
        self, action: InspectAction, turns: list[TurnRecord]
    ) -> TurnRecord:
        record = TurnRecord(
            turn_idx=len(turns) + 1,
            kind="inspect",
            thought=action.thought,
            detail=f'prompt="{action.prompt[:60]}"',
            at=self.clock(),
        )
        moments = []
        base_score: dict[int, float] = {}
        if action.ref is not None:
            try:
                cand = self._resolve_ref(action.ref, turns)
            except UnresolvableRef as exc:
                record.notes.append(f"ref unresolvable ({exc})")
                return record
            if cand.kind == "frame":
                m = self.store.moments[cand.ident]
                moments = [m] if m.jpeg is not None else []
                base_score[cand.ident] = cand.score
            elif cand.kind == "event":
                event = self.store.events[cand.ident]
                moments = [
                    self.store.moments[mid]
                    for mid in event.moment_ids
                    if self.store.moments[mid].jpeg is not None
                ]
            else:
                moments = self._moments_in_window(
                    (cand.t_start, cand.t_end)
                )
        else:
            try:
                window = self._resolve_time_range(action.time_range)
            except (NoAnchorFound, OccurrenceOutOfRange) as exc:
                record.notes.append(
                    f"anchor attempt failed ({exc}); explicitly change "
                    f"the method"
                )
                return record
            moments = self._moments_in_window(window)
        picked = [
            moments[i] for i in uniform_indices(len(moments), action.max_frames)
        ]
        if not picked:
            record.notes.append("no frame pixels available to inspect")
            return record
        frames, times = self._frames_for_moments(picked, action.max_frames)
        record.inspection = inspect_frames(
            self.gateway, action.prompt, frames, times
        )
        record.results = [
            Candidate(
                kind="frame",
                ident=m.moment_id,
                score=base_score.get(m.moment_id, 0.0),
                t_start=m.t_rel,
                t_end=m.t_rel,
                pixels_available=True,
            )
            for m in picked
        ]
        return record

    def _execute_summarize(
        self, action: SummarizeAction, turns: list[TurnRecord]
    ) -> TurnRecord:
        record = TurnRecord(
            turn_idx=len(turns) + 1,
            kind="summarize",
            thought=action.thought,
            detail=f"granularity={action.granularity_seconds:.0f}s",
            at=self.clock(),
        )
        try:
            window = self._resolve_time_range(action.time_range)
        except (NoAnchorFound, OccurrenceOutOfRange) as exc:
            record.notes.append(
                f"anchor attempt failed ({exc}); explicitly change the method"
            )
            return record
        if window is None:
            window = self.store.moment_span()
        time_mode = (
            action.time_range.time_mode if action.time_range else "relative"
        )
        docs = summarize_window(
            self.store,
            self.gateway,
            self.embedder,
            window[0],
            window[1],
            granularity_s=action.granularity_seconds,
            focus=action.prompt,
            time_mode=time_mode,
            structure_label=action.summary_structure,
        )
        record.results = [
            Candidate(
                kind="summary",
                ident=d.doc_id,
                score=0.0,
                t_start=d.start_t,
                t_end=d.end_t,
                text=d.text,
                structure_label=d.structure_label,
            )
            for d in docs
        ]
        return record

    # --------------------------------------------------------------- answer

    def _global_best(
        self, turns: Sequence[TurnRecord]
    ) -> Optional[tuple[TurnRecord, int, Candidate]]:
        best = None
        for t in turns:
            for idx, c in enumerate(t.results):
                key = (-c.score, t.turn_idx, c.t_start, c.ident)
                if best is None or key < best[0]:
                    best = (key, t, idx, c)
        if best is None:
            return None
        return best[1], best[2], best[3]

    def _fallback_answer_text(self, turns: Sequence[TurnRecord]) -> str:
        found = self._global_best(turns)
        if found is None:
            return "No supporting evidence was found in memory."
        _, _, c = found
        if c.text:
            return f"Best available evidence: {c.text}"
        return f"Best available evidence: frame at {c.t_start:.1f}s"

    def _make_best_ref(
        self,
        turns: Sequence[TurnRecord],
        ref: Optional[EvidenceRef],
    ) -> Optional[dict]:
        candidate = None
        turn_idx = result_idx = None
        if ref is not None:
            try:
                candidate = self._resolve_ref(ref, turns)
                turn_idx, result_idx = ref.turn_idx, ref.result_idx
            except UnresolvableRef:
                candidate = None
        if candidate is None:
            found = self._global_best(turns)
            if found is None:
                return None
            t, idx, candidate = found
            turn_idx, result_idx = t.turn_idx, idx
        return {
            "turn_idx": turn_idx,
            "result_idx": result_idx,
            "kind": candidate.kind,
            "id": candidate.ident,
            "score": round(candidate.score, 6),
            "t_start": candidate.t_start,
            "t_end": candidate.t_end,
            "text": candidate.text,
        }

    # ----------------------------------------------------------------- loop

    def run(self, goal: str, summarize_session: bool = False) -> GroundedAnswer:
        turns: list[TurnRecord] = []
        answer_text: Optional[str] = None
        answer_ref: Optional[EvidenceRef] = None
        sufficiency = False
        force_answer = False

        while len(turns) < self.agent_cfg.turn_budget:
            if force_answer:
                action: PlannerAction = AnswerAction(
                    action="answer",
                    response=self._fallback_answer_text(turns),
                    best_ref=None,
                    thought=(
                        "results stopped improving; answering with best "
                        "available evidence"
                    ),
                )
                forced = True
            else:
                action, forced = self._plan_turn(goal, turns)

            if isinstance(action, AnswerAction):
                record = TurnRecord(
                    turn_idx=len(turns) + 1,
                    kind="answer",
                    thought=action.thought,
                    detail="",
                    at=self.clock(),
                )
                turns.append(record)
                answer_text = action.response
                answer_ref = action.best_ref
                sufficiency = not forced
                break

            if isinstance(action, SearchAction):
                record = self._execute_search(action, turns)
            elif isinstance(action, InspectAction):
                record = self._execute_inspect(action, turns)
            else:
                record = self._execute_summarize(action, turns)
            turns.append(record)

            # stagnation: two consecutive turns with no inspection and an
            # unchanged candidate set mean another search will not help
            if (
                len(turns) >= 2
                and turns[-1].kind in ("search", "inspect")
                and turns[-2].kind in ("search", "inspect")
                and turns[-1].inspection is None
                and turns[-2].inspection is None
                and turns[-1].ref_set() == turns[-2].ref_set()
            ):
                force_answer = True

        if answer_text is None:
            # budget exhausted without an answer action
            answer_text = self._fallback_answer_text(turns)
            sufficiency = False

        best_ref = self._make_best_ref(turns, answer_ref)
        trace = {
            "goal": goal,
            "turn_budget": self.agent_cfg.turn_budget,
            "turns": [t.to_dict() for t in turns],
            "answer": {
                "text": answer_text,
                "sufficiency": sufficiency,
                "best_ref": best_ref,
            },
        }
        answer = GroundedAnswer(
            text=answer_text,
            sufficiency=sufficiency,
            best_ref=best_ref,
            turns=turns,
            trace=trace,
        )
        if summarize_session:
            answer.session_recap = self._session_recap(goal, answer)
        return answer

    def _session_recap(self, goal: str, answer: GroundedAnswer) -> str:
        lines = [f"Goal: {goal}"]
        for t in answer.turns:
            lines.append(
                f"turn {t.turn_idx}: {t.kind} ({len(t.results)} results)"
            )
        lines.append(f"Answer: {answer.text}")
        payload = MessagePayload(text="\n".join(lines))
        return self.gateway.call_role("session_summariser", payload)


# ------------------------------------------------------------ entry points


def run_retrieval(
    goal: str,
    store: MemoryStore,
    gateway: ModelGateway,
    embedder,
    config: Optional[EngineConfig] = None,
    clock: Callable[[], float] = time.time,
    summarize_session: bool = False,
) -> GroundedAnswer:
    agent = RetrievalAgent(store, gateway, embedder, config, clock)
    return agent.run(goal, summarize_session=summarize_session)


def summarize_window(
    store: MemoryStore,
    gateway: ModelGateway,
    embedder,
    start_t: float,
    end_t: float,
    granularity_s: float,
    focus: str,
    time_mode: str = "relative",
    structure_label: Optional[str] = None,
    frames_per_window: int = 8,
) -> list[SummaryDocument]:
    """Materialize one summary document per granularity window."""
    docs: list[SummaryDocument] = []
    if end_t < start_t:
        return docs
    lo = float(start_t)
    while lo < end_t or (lo == start_t and end_t == start_t):
        hi = min(lo + granularity_s, end_t)
        events = [
            e
            for e in store.events
            if e.end_t >= lo and e.start_t <= hi
        ]
        event_documents = [e.summary for e in events]
        pool = [
            m
            for m in store.moments
            if lo <= m.t_rel <= hi and m.jpeg is not None
        ]
        picked = [pool[i] for i in uniform_indices(len(pool), frames_per_window)]
        frames = [
            prepare_image(m.jpeg, gateway.config).data for m in picked
        ]
        text = write_summary_document(
            gateway,
            start_t=lo,
            end_t=hi,
            time_mode=time_mode,
            granularity_s=granularity_s,
            focus=focus,
            event_documents=event_documents,
            frames=frames,
            summary_structure=structure_label,
        )
        emb = embed_text(text, embedder)
        docs.append(
            store.insert_summary(
                start_t=lo,
                end_t=hi,
                text=text,
                embedding=emb,
                granularity_s=granularity_s,
                time_mode=time_mode,
                structure_label=structure_label,
            )
        )
        if hi >= end_t:
            break
        lo = hi
    return docs


def route_request(
    request: str,
    store: MemoryStore,
    gateway: ModelGateway,
    embedder,
    config: Optional[EngineConfig] = None,
    clock: Callable[[], float] = time.time,
) -> dict:
    """Top-level dispatch: answer directly, retrieve, or summarize.

    Returns a dict with 'mode' plus mode-specific fields so callers (CLI,
    tests) can render it without poking at internals.
    """
    payload = MessagePayload(text=request)
    raw = gateway.call_role("router", payload)
    try:
        decision = validate_routing(raw)
    except SchemaError as first_err:
        where = f" (at {first_err.path})" if first_err.path else ""
        repair = request + REPAIR_SUFFIX.format(
            reason=first_err.reason, where=where
        )
        raw2 = gateway.call_role("router", MessagePayload(text=repair))
        try:
            decision = validate_routing(raw2)
        except SchemaError:
            # degrade to treating the raw request as a retrieval question
            answer = run_retrieval(
                request, store, gateway, embedder, config, clock
            )
            return {
                "mode": "retrieve",
                "question": request,
                "answer": answer,
                "routing_fallback": True,
            }

    if decision.type == "final":
        return {"mode": "final", "text": decision.text}
    if decision.name == "retrieve":
        answer = run_retrieval(
            decision.args.question, store, gateway, embedder, config, clock
        )
        return {
            "mode": "retrieve",
            "question": decision.args.question,
            "answer": answer,
        }
    args = decision.args
    span_hi = store.moment_span()[1]
    max_time = args.max_time if args.max_time is not None else span_hi
    docs = summarize_window(
        store,
        gateway,
        embedder,
        start_t=args.min_time,
        end_t=max_time,
        granularity_s=args.granularity_seconds,
        focus=args.prompt,
        time_mode=args.time_mode,
        structure_label=args.summary_structure,
    )
    return {
        "mode": "summarize",
        "min_time": args.min_time,
        "max_time": max_time,
        "granularity_seconds": args.granularity_seconds,
        "documents": docs,
    }
