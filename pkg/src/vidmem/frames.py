"""Stream ingestion: one Frame iterator over video files, image directories
and synthetic generators.

Video files are decoded by the external ``ffmpeg`` binary exactly once per
stream, at the requested sampling rate, into a temporary directory of JPEGs
named by index; the iterator then walks those files. Image directories are
walked in sorted order. Synthetic sources are generated procedurally from a
seeded spec (see :mod:`vidmem.synth`).

Corrupt frames are skipped with a logged gap; they are never substituted,
so ``frame_index`` stays strictly increasing but not necessarily contiguous.
"""

from __future__ import annotations

import logging
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, SourceUnavailable

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".webp"}
VIDEO_SUFFIXES = {".mp4", ".mkv", ".avi", ".mov", ".webm", ".m4v"}


@dataclass
class Frame:
    """A single sampled frame.

    pixels: HxWx3 uint8 RGB raster.
    frame_index: position on the sampling grid, strictly increasing.
    t_rel: seconds since stream start (frame_index / base_fps).
    t_abs: optional absolute epoch seconds (epoch + t_rel).
    """

    pixels: np.ndarray
    frame_index: int
    t_rel: float
    t_abs: Optional[float] = None


@dataclass
class StreamSpec:
    """What to ingest and how fast to sample it.

    source: path to a video file, path to an image directory, or a
        synthetic generator spec (vidmem.synth.SynthSpec).
    base_fps: sampling rate in frames per second.
    epoch: optional absolute start time; when set every Frame carries
        t_abs = epoch + t_rel.
    """

    source: Union[str, Path, object]
    base_fps: float = 0.5
    epoch: Optional[float] = None


def _load_rgb(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc


def _iter_files(
    files: list[Path], spec: StreamSpec
) -> Iterator[Frame]:
    period = 1.0 / spec.base_fps
    for idx, path in enumerate(files):
        try:
            pixels = _load_rgb(path)
        except DecodeError as exc:
            # skipped, not substituted: the index/time slot stays empty
            logger.warning("skipping corrupt frame %d (%s)", idx, exc)
            continue
        t_rel = idx * period
        yield Frame(
            pixels=pixels,
            frame_index=idx,
            t_rel=t_rel,
            t_abs=None if spec.epoch is None else spec.epoch + t_rel,
        )


def _decode_video(path: Path, fps: float, out_dir: Path) -> list[Path]:
    decoder = shutil.which("ffmpeg")
    if decoder is None:
        raise SourceUnavailable(
            "no external video decoder (ffmpeg) found on PATH"
        )
    cmd = [
        decoder,
        "-hide_banner",
        "-loglevel", "error",
        "-i", str(path),
        "-vf", f"fps={fps}",
        "-start_number", "0",
        "-q:v", "2",
        str(out_dir / "frame_%08d.jpg"),
    ]
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True)
    except OSError as exc:
        raise SourceUnavailable(f"decoder failed to start: {exc}") from exc
    if proc.returncode != 0:
        raise SourceUnavailable(
            f"decoder exited {proc.returncode}: {proc.stderr.strip()[:500]}"
        )
    return sorted(out_dir.glob("frame_*.jpg"))


def _video_frames(path: Path, spec: StreamSpec) -> Iterator[Frame]:
    tmp = Path(tempfile.mkdtemp(prefix="vidmem_decode_"))
    try:
        files = _decode_video(path, spec.base_fps, tmp)
        yield from _iter_files(files, spec)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def open_source(spec: StreamSpec) -> Iterator[Frame]:
    """Open a stream spec and return its Frame iterator.

    Raises SourceUnavailable when the path is missing or a video source
    has no external decoder available. Iterating the same spec twice
    yields identical (frame_index, t_rel) sequences; synthetic sources
    also reproduce identical pixel data thanks to their seed.
    """
    src = spec.source
    if hasattr(src, "segments") and hasattr(src, "seed"):
        from .synth import synth_stream  # local import: avoids module cycle

        return synth_stream(src, base_fps=spec.base_fps, epoch=spec.epoch)

    path = Path(src)
    if path.is_dir():
        files = sorted(
            p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
        )
        if not files:
            raise SourceUnavailable(f"no images under {path}")
        return _iter_files(files, spec)
    if path.is_file():
        if path.suffix.lower() in IMAGE_SUFFIXES:
            return _iter_files([path], spec)
        if shutil.which("ffmpeg") is None:
            # fail at open time, not on first next()
            raise SourceUnavailable(
                "no external video decoder (ffmpeg) found on PATH"
            )
        return _video_frames(path, spec)
    raise SourceUnavailable(f"source does not exist: {path}")
