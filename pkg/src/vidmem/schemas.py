"""Wire schemas for the routing and planning loops.

Every model forbids unknown fields; a planner or router reply that does
not parse into exactly one of these shapes is a SchemaError carrying the
offending path, which the calling loop surfaces in its repair prompt.
"""

from __future__ import annotations

import json
import re
from typing import Literal, Optional, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    model_validator,
)

from .errors import SchemaError

MAX_STRUCTURE_LABEL = 64
MAX_VERIFICATION_PROMPT = 400
WEEK_SECONDS = 604800.0
DAY_SECONDS = 86400.0


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ------------------------------------------------------------------ routing


class RetrieveArgs(StrictModel):
    question: str = Field(min_length=1)


class SummarizeArgs(StrictModel):
    min_time: float = Field(ge=0)
    max_time: Optional[float] = None
    time_mode: Literal["relative", "absolute"]
    granularity_seconds: float = Field(gt=0, le=DAY_SECONDS)
    prompt: str = Field(min_length=1)
    summary_structure: Optional[str] = Field(
        default=None, max_length=MAX_STRUCTURE_LABEL
    )

    @model_validator(mode="after")
    def _ordered(self):
        if self.max_time is not None and self.max_time < self.min_time:
            raise ValueError("max_time must be >= min_time")
        return self


class FinalRouting(StrictModel):
    type: Literal["final"]
    text: str = Field(min_length=1)


class RetrieveRouting(StrictModel):
    type: Literal["tool"]
    name: Literal["retrieve"]
    args: RetrieveArgs


class SummarizeRouting(StrictModel):
    type: Literal["tool"]
    name: Literal["summarize"]
    args: SummarizeArgs


RoutingDecision = Union[FinalRouting, RetrieveRouting, SummarizeRouting]


# ------------------------------------------------------------------ planner


class EvidenceRef(StrictModel):
    turn_idx: int = Field(ge=1)      # 1-based
    result_idx: int = Field(ge=0)    # 0-based


class AnchorSpec(StrictModel):
    target_event: str = Field(min_length=1)
    verification_prompt: Optional[str] = Field(
        default=None, max_length=MAX_VERIFICATION_PROMPT
    )
    candidate_hint: Optional[str] = None
    before_seconds: float = Field(default=0.0, ge=0, le=WEEK_SECONDS)
    after_seconds: float = Field(default=0.0, ge=0, le=WEEK_SECONDS)
    top_k: int = Field(default=20, ge=1, le=50)
    inspect_k: int = Field(default=0, ge=0, le=20)
    occurrence_index: int = Field(default=1, ge=1, le=100)

    @model_validator(mode="after")
    def _clip(self):
        if self.inspect_k > self.top_k:
            object.__setattr__(self, "inspect_k", self.top_k)
        return self


class TimeRange(StrictModel):
    min_time: Optional[float] = None
    max_time: Optional[float] = None
    time_mode: Literal["relative", "absolute"] = "relative"
    anchor: Optional[AnchorSpec] = None
    start_anchor: Optional[AnchorSpec] = None
    end_anchor: Optional[AnchorSpec] = None

    @model_validator(mode="after")
    def _coherent(self):
        if self.anchor is not None and (
            self.start_anchor is not None or self.end_anchor is not None
        ):
            raise ValueError(
                "time_range cannot mix anchor with start_anchor/end_anchor"
            )
        if (
            self.min_time is not None
            and self.max_time is not None
            and self.max_time < self.min_time
        ):
            raise ValueError("max_time must be >= min_time")
        return self

    def is_empty(self) -> bool:
        return (
            self.min_time is None
            and self.max_time is None
            and self.anchor is None
            and self.start_anchor is None
            and self.end_anchor is None
        )


class QuerySpec(StrictModel):
    q: str = Field(min_length=1)
    top_k: int = Field(ge=1, le=200)
    inspect_k: int = Field(ge=0, le=50)
    threshold: float = Field(default=0.65, ge=0)

    @model_validator(mode="after")
    def _clip(self):
        if self.inspect_k > self.top_k:
            object.__setattr__(self, "inspect_k", self.top_k)
        return self


class SummaryFilter(StrictModel):
    summary_structure: Optional[str] = Field(
        default=None, max_length=MAX_STRUCTURE_LABEL
    )
    granularity_seconds: Optional[float] = Field(
        default=None, gt=0, le=DAY_SECONDS
    )


Source = Literal["frame", "event", "summary"]


class SearchAction(StrictModel):
    action: Literal["search"]
    queries: list[QuerySpec] = Field(min_length=1)
    time_range: Optional[TimeRange] = None
    sources: Optional[list[Source]] = None
    summary_filter: Optional[SummaryFilter] = None
    visual_ref: Optional[EvidenceRef] = None
    joint_inspection: bool = False
    inspection_prompt: Optional[str] = None
    thought: str = Field(min_length=1)


class InspectAction(StrictModel):
    action: Literal["inspect"]
    prompt: str = Field(min_length=1)
    time_range: Optional[TimeRange] = None
    ref: Optional[EvidenceRef] = None
    max_frames: int = Field(ge=1, le=16)
    thought: str = Field(min_length=1)

    @model_validator(mode="after")
    def _target(self):
        if self.time_range is None and self.ref is None:
            raise ValueError("inspect requires either time_range or ref")
        return self


class SummarizeAction(StrictModel):
    action: Literal["summarize"]
    time_range: TimeRange
    granularity_seconds: float = Field(gt=0, le=DAY_SECONDS)
    prompt: str = Field(min_length=1)
    summary_structure: Optional[str] = Field(
        default=None, max_length=MAX_STRUCTURE_LABEL
    )
    thought: str = Field(min_length=1)


class AnswerAction(StrictModel):
    action: Literal["answer"]
    response: str = Field(min_length=1)
    best_ref: Optional[EvidenceRef] = None
    thought: str = Field(min_length=1)


PlannerAction = Union[SearchAction, InspectAction, SummarizeAction, AnswerAction]


class AnchorVerdict(StrictModel):
    match: bool
    confidence: float = Field(default=0.0, ge=0, le=1)
    observed_event: str = ""
    reason: str = ""


# ------------------------------------------------------------------ parsing

_FENCE = re.compile(r"^```[a-zA-Z0-9_-]*\s*\n(.*?)\n?```\s*$", re.DOTALL)


def parse_json_object(text: str) -> dict:
    """One JSON object, optionally wrapped in a markdown fence."""
    if not isinstance(text, str) or not text.strip():
        raise SchemaError("empty reply")
    stripped = text.strip()
    m = _FENCE.match(stripped)
    if m:
        stripped = m.group(1).strip()
    try:
        obj = json.loads(stripped)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise SchemaError("reply must be a single JSON object")
    return obj


def _error_path(exc: ValidationError) -> str:
    errs = exc.errors()
    if not errs:
        return ""
    return ".".join(str(p) for p in errs[0]["loc"])


def _error_reason(exc: ValidationError) -> str:
    errs = exc.errors()
    if not errs:
        return "validation failed"
    first = errs[0]
    return first.get("msg", "validation failed")


def validate_routing(text: str) -> RoutingDecision:
    obj = parse_json_object(text)
    kind = obj.get("type")
    if kind == "final":
        model = FinalRouting
    elif kind == "tool":
        name = obj.get("name")
        if name == "retrieve":
            model = RetrieveRouting
        elif name == "summarize":
            model = SummarizeRouting
        else:
            raise SchemaError(
                f"unknown tool name {name!r}", path="name"
            )
    else:
        raise SchemaError(f"unknown routing type {kind!r}", path="type")
    try:
        return model.model_validate(obj)
    except ValidationError as exc:
        raise SchemaError(_error_reason(exc), path=_error_path(exc)) from exc


_ACTION_MODELS = {
    "search": SearchAction,
    "inspect": InspectAction,
    "summarize": SummarizeAction,
    "answer": AnswerAction,
}


def validate_action(text: str) -> PlannerAction:
    obj = parse_json_object(text)
    kind = obj.get("action")
    model = _ACTION_MODELS.get(kind)
    if model is None:
        raise SchemaError(f"unknown action {kind!r}", path="action")
    try:
        return model.model_validate(obj)
    except ValidationError as exc:
        raise SchemaError(_error_reason(exc), path=_error_path(exc)) from exc
