"""Model gateway: role registry, payload assembly and backends.

Each calling role is pinned to a sampling profile and a model slot so
behaviour differences live in one table. A payload is one text block,
then prepared images in order, then an optional video clip. The gateway
retries rate-limited calls with exponential backoff and downgrades a
rejected video to a frames-only resend; everything else surfaces as
BackendUnavailable.

The stub backend answers every role deterministically (and can be
scripted per role), so the whole pipeline runs and tests byte-stable
without network access.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import re
import shutil
import subprocess
import time
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

import numpy as np
from PIL import Image

from .config import GatewayConfig
from .errors import (
    BackendUnavailable,
    ClipFailed,
    RateLimited,
    VideoRejected,
)

logger = logging.getLogger(__name__)


def load_prompt(name: str) -> str:
    """Prompt resource text (trailing newline trimmed)."""
    path = resources.files("vidmem.prompts").joinpath(f"{name}.txt")
    return path.read_text(encoding="utf-8").rstrip("\n")


@dataclass(frozen=True)
class RoleConfig:
    role: str
    temperature: float
    max_tokens: int
    model_slot: str       # "light" | "main" | "multimodal"
    system_prompt: str    # prompt resource name


ROLES: dict[str, RoleConfig] = {
    cfg.role: cfg
    for cfg in (
        RoleConfig("router", 0.0, 300, "light", "router_system"),
        RoleConfig("planner", 0.1, 500, "main", "planner_system"),
        RoleConfig("event_writer", 0.1, 700, "multimodal", "event_writer_system"),
        RoleConfig(
            "summary_writer", 0.1, 700, "multimodal", "summary_writer_system"
        ),
        RoleConfig("inspector", 0.1, 500, "multimodal", "inspector_system"),
        RoleConfig(
            "anchor_adjudicator", 0.0, 220, "multimodal", "anchor_system"
        ),
        RoleConfig(
            "session_summariser", 0.2, 500, "light", "session_summariser_system"
        ),
    )
}


def model_for_slot(slot: str, config: GatewayConfig) -> str:
    return {
        "light": config.light_model,
        "main": config.main_model,
        "multimodal": config.multimodal_model,
    }[slot]


@dataclass
class PreparedImage:
    data: bytes
    width: int
    height: int
    quality: int
    compliant: bool


def prepare_image(
    image,
    config: Optional[GatewayConfig] = None,
    max_bytes: Optional[int] = None,
) -> PreparedImage:
    """Resize/encode an image for transport.

    Longest side is capped first; then JPEG quality steps down from the
    starting quality until the payload fits the byte budget or the floor
    is reached. A floor-quality image that still exceeds the budget is
    returned with compliant=False rather than dropped.
    """
    cfg = config or GatewayConfig()
    budget = cfg.image_max_bytes if max_bytes is None else int(max_bytes)
    if isinstance(image, (bytes, bytearray)):
        img = Image.open(io.BytesIO(image)).convert("RGB")
    elif isinstance(image, np.ndarray):
        img = Image.fromarray(np.ascontiguousarray(image))
        if img.mode != "RGB":
            img = img.convert("RGB")
    else:
        img = image.convert("RGB")
    w, h = img.size
    side = max(w, h)
    if side > cfg.image_max_side:
        scale = cfg.image_max_side / side
        img = img.resize(
            (max(1, round(w * scale)), max(1, round(h * scale))),
            Image.LANCZOS,
        )
    quality = cfg.jpeg_start_quality
    while True:
        buf = io.BytesIO()
        img.save(buf, format="JPEG", quality=quality)
        data = buf.getvalue()
        if len(data) <= budget:
            return PreparedImage(data, img.width, img.height, quality, True)
        if quality - cfg.jpeg_quality_step < cfg.jpeg_quality_floor:
            return PreparedImage(data, img.width, img.height, quality, False)
        quality -= cfg.jpeg_quality_step


@dataclass
class MessagePayload:
    """One gateway call: a text block, then images, then optional video."""

    text: str
    images: list[bytes] = field(default_factory=list)
    video: Optional[bytes] = None
    meta: dict = field(default_factory=dict)

    def without_video(self) -> "MessagePayload":
        return MessagePayload(
            text=self.text, images=list(self.images), video=None,
            meta=dict(self.meta),
        )


class ModelGateway:
    """Routes role calls to a backend with retry and video fallback."""

    def __init__(
        self,
        backend,
        config: Optional[GatewayConfig] = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.backend = backend
        self.config = config or GatewayConfig()
        self.sleeper = sleeper

    def call_role(self, role: str, payload: MessagePayload) -> str:
        if role not in ROLES:
            raise KeyError(f"unknown gateway role {role!r}")
        spec = ROLES[role]
        system = load_prompt(spec.system_prompt)
        model = model_for_slot(spec.model_slot, self.config)
        attempts = max(1, self.config.retry_attempts)
        current = payload
        attempt = 0
        while True:
            try:
                return self.backend.complete(
                    role=role,
                    model=model,
                    system=system,
                    payload=current,
                    temperature=spec.temperature,
                    max_tokens=spec.max_tokens,
                )
            except RateLimited:
                attempt += 1
                if attempt >= attempts:
                    raise
                self.sleeper(self.config.backoff_base_s * (2 ** (attempt - 1)))
            except VideoRejected:
                if current.video is None:
                    raise
                logger.warning(
                    "video payload rejected for role %s; resending frames only",
                    role,
                )
                current = current.without_video()


class StubBackend:
    """Deterministic offline backend.

    Responses can be scripted per role (FIFO); otherwise a fixed default
    handler replies from the payload alone, so runs are reproducible.
    Scripted entries may be strings, exceptions (raised once) or
    callables taking the payload.
    """

    def __init__(self):
        self._scripts: dict[str, deque] = {}
        self.calls: list[dict] = []

    def script(self, role: str, *responses) -> None:
        self._scripts.setdefault(role, deque()).extend(responses)

    def complete(
        self, role, model, system, payload, temperature, max_tokens
    ) -> str:
        self.calls.append(
            {
                "role": role,
                "model": model,
                "system": system,
                "payload": payload,
                "temperature": temperature,
                "max_tokens": max_tokens,
            }
        )
        queue = self._scripts.get(role)
        if queue:
            entry = queue.popleft()
            if isinstance(entry, BaseException):
                raise entry
            if callable(entry):
                return entry(payload)
            return str(entry)
        return self._default(role, payload)

    # ------------------------------------------------------------- defaults

    def _default(self, role: str, payload: MessagePayload) -> str:
        if role == "router":
            return json.dumps(
                {
                    "type": "tool",
                    "name": "retrieve",
                    "args": {"question": payload.text.strip() or "what happened"},
                }
            )
        if role == "planner":
            return self._default_plan(payload)
        if role == "event_writer":
            info = _parse_payload_json(payload.text)
            rel = info.get("relative_time", {})
            start = float(rel.get("start_t", 0.0))
            end = float(rel.get("end_t", 0.0))
            n = len(payload.images)
            return (
                f"Event from {start:.1f}s to {end:.1f}s spanning "
                f"{n} frames."
            )
        if role == "summary_writer":
            info = _parse_payload_json(payload.text)
            rng = info.get("time_range", {})
            start = float(rng.get("start", 0.0))
            end = float(rng.get("end", 0.0))
            gran = float(info.get("granularity_seconds", 0.0))
            focus = str(info.get("focus", "")).strip()
            line = (
                f"Summary for window {start:.1f}s to {end:.1f}s at "
                f"{gran:.0f}s steps."
            )
            if focus:
                line += f" Focus: {focus}"
            return line
        if role == "inspector":
            times = payload.meta.get("frame_times", [])
            n = len(payload.images)
            if times:
                listed = ", ".join(f"{t:.1f}s" for t in times)
                return f"Examined {n} frames at {listed}."
            return f"Examined {n} frames."
        if role == "anchor_adjudicator":
            target = ""
            m = re.search(r"Target event: (.*)", payload.text)
            if m:
                target = m.group(1).strip()
            return json.dumps(
                {
                    "match": True,
                    "confidence": 0.9,
                    "observed_event": target,
                    "reason": "candidate accepted by offline stub",
                }
            )
        if role == "session_summariser":
            first = payload.text.splitlines()[0] if payload.text else ""
            return f"Session recap: {first}"[:500]
        raise BackendUnavailable(f"stub has no handler for role {role!r}")

    @staticmethod
    def _default_plan(payload: MessagePayload) -> str:
        goal = ""
        m = re.search(r"Goal: (.*)", payload.text)
        if m:
            goal = m.group(1).strip()
        if "(nothing yet)" in payload.text:
            return json.dumps(
                {
                    "action": "search",
                    "queries": [
                        {
                            "q": goal or "what happened",
                            "top_k": 10,
                            "inspect_k": 0,
                            "threshold": 0.0,
                        }
                    ],
                    "thought": "no evidence yet; run a broad semantic search",
                }
            )
        return json.dumps(
            {
                "action": "answer",
                "response": f"Best available evidence for: {goal}",
                "best_ref": {"turn_idx": 1, "result_idx": 0},
                "thought": "evidence collected on the first turn suffices",
            }
        )


def _parse_payload_json(text: str) -> dict:
    try:
        obj = json.loads(text)
        return obj if isinstance(obj, dict) else {}
    except json.JSONDecodeError:
        return {}


class HttpBackend:
    """Minimal chat-completions style HTTP backend.

    Sends one system message and one user message whose content is the
    ordered block list (text, images as base64 JPEG, optional video).
    Maps 429 to RateLimited, a 4xx body mentioning video to VideoRejected
    and anything else unexpected to BackendUnavailable.
    """

    def __init__(self, endpoint: str, api_key: str = "", timeout: float = 60.0,
                 session=None):
        import requests

        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout
        self.session = session or requests.Session()

    def complete(
        self, role, model, system, payload, temperature, max_tokens
    ) -> str:
        content: list[dict] = [{"type": "text", "text": payload.text}]
        for img in payload.images:
            content.append(
                {
                    "type": "image",
                    "media_type": "image/jpeg",
                    "data": base64.b64encode(img).decode("ascii"),
                }
            )
        if payload.video is not None:
            content.append(
                {
                    "type": "video",
                    "media_type": "video/mp4",
                    "data": base64.b64encode(payload.video).decode("ascii"),
                }
            )
        body = {
            "model": model,
            "temperature": temperature,
            "max_tokens": max_tokens,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": content},
            ],
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self.session.post(
                self.endpoint, json=body, headers=headers, timeout=self.timeout
            )
        except Exception as exc:
            raise BackendUnavailable(f"model endpoint unreachable: {exc}") from exc
        if resp.status_code == 429:
            raise RateLimited("model endpoint rate limited")
        if 400 <= resp.status_code < 500 and payload.video is not None:
            text = resp.text or ""
            if "video" in text.lower():
                raise VideoRejected(text[:200])
        if resp.status_code != 200:
            raise BackendUnavailable(
                f"model endpoint returned {resp.status_code}"
            )
        try:
            data = resp.json()
        except ValueError as exc:
            raise BackendUnavailable("model endpoint returned non-JSON") from exc
        if "text" not in data:
            raise BackendUnavailable("model endpoint reply missing 'text'")
        return str(data["text"])


def extract_clip(
    source: str,
    start: float,
    end: float,
    out_path: str,
    ffmpeg: str = "ffmpeg",
) -> str:
    """Cut [start, end] out of a video into an H.264/AAC mp4."""
    if shutil.which(ffmpeg) is None:
        raise ClipFailed(f"{ffmpeg} not available on PATH")
    cmd = [
        ffmpeg,
        "-hide_banner",
        "-loglevel",
        "error",
        "-ss",
        f"{start:.3f}",
        "-to",
        f"{end:.3f}",
        "-i",
        source,
        "-c:v",
        "libx264",
        "-preset",
        "veryfast",
        "-crf",
        "28",
        "-c:a",
        "aac",
        "-y",
        out_path,
    ]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise ClipFailed(
            f"clip extraction failed ({proc.returncode}): "
            f"{proc.stderr.strip()[:300]}"
        )
    return out_path


# ----------------------------------------------------------- writer helpers


def write_event_document(
    gateway: ModelGateway,
    start_t: float,
    end_t: float,
    frames: list[bytes],
    start_abs: Optional[float] = None,
    end_abs: Optional[float] = None,
    clip: Optional[bytes] = None,
) -> str:
    """Render the event-writer payload and call the role."""
    body = {
        "task": "write_retrieval_memory_document",
        "relative_time": {"start_t": start_t, "end_t": end_t},
        "absolute_time": {"start_t": start_abs, "end_t": end_abs},
        "notes": [
            "Mention the time range in the description.",
            "Prefer short natural lines when there are multiple distinct observations.",
            "One line can describe one salient action, object state, scene change, or visible text.",
        ],
    }
    payload = MessagePayload(
        text=json.dumps(body), images=list(frames), video=clip
    )
    return gateway.call_role("event_writer", payload)


def write_summary_document(
    gateway: ModelGateway,
    start_t: float,
    end_t: float,
    time_mode: str,
    granularity_s: float,
    focus: str,
    event_documents: list[str],
    frames: list[bytes],
    summary_structure: Optional[str] = None,
) -> str:
    """Render the summary-writer payload and call the role."""
    body = {
        "task": "summarize_time_window_for_retrieval",
        "time_range": {"start": start_t, "end": end_t, "mode": time_mode},
        "granularity_seconds": granularity_s,
        "focus": focus,
        "event_documents": list(event_documents),
        "summary_structure": summary_structure if summary_structure else "optional",
        "notes": [
            "Prefer a few concise natural lines when the window contains distinct moments.",
            "Ground the summary in the provided frames and event documents.",
            "This summary will become a searchable memory document for later QA.",
            "Follow the natural-language focus first; any structure label is only an optional tag.",
        ],
    }
    payload = MessagePayload(text=json.dumps(body), images=list(frames))
    return gateway.call_role("summary_writer", payload)


def inspect_frames(
    gateway: ModelGateway,
    query: str,
    frames: list[bytes],
    frame_times: Optional[list[float]] = None,
) -> str:
    template = load_prompt("inspector_user")
    text = template.format(query=query, n=len(frames))
    payload = MessagePayload(
        text=text,
        images=list(frames),
        meta={"frame_times": list(frame_times or [])},
    )
    return gateway.call_role("inspector", payload)


def adjudicate_anchor(
    gateway: ModelGateway,
    target_event: str,
    verification_prompt: str,
    candidate_hint: str,
    candidate_window: str,
    frames: list[bytes],
) -> str:
    template = load_prompt("anchor_user")
    text = template.format(
        target_event=target_event,
        verification_prompt=verification_prompt,
        candidate_hint=candidate_hint,
        candidate_window=candidate_window,
    )
    payload = MessagePayload(text=text, images=list(frames))
    return gateway.call_role("anchor_adjudicator", payload)
