"""Shared fixtures: deterministic frames, a fake external decoder, and a
network guard for the offline suites."""

from __future__ import annotations

import os
import socket
import stat
import textwrap

import numpy as np
import pytest

from vidmem.config import EngineConfig
from vidmem.frames import Frame


def make_frame(pixels: np.ndarray, idx: int = 0, fps: float = 0.5,
               epoch=None) -> Frame:
    t_rel = idx / fps
    return Frame(
        pixels=pixels,
        frame_index=idx,
        t_rel=t_rel,
        t_abs=None if epoch is None else epoch + t_rel,
    )


def flat_pixels(color, h: int = 48, w: int = 64) -> np.ndarray:
    px = np.zeros((h, w, 3), dtype=np.uint8)
    px[:] = color
    return px


def textured_pixels(rng: np.random.Generator, h: int = 48,
                    w: int = 64) -> np.ndarray:
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


def scene_pixels(color, phase, h=48, w=64, cell=8):
    """Checkerboard over a dark floor: sharp enough for the blur gate and
    far apart in embedding space whenever the phase flips."""
    px = np.zeros((h, w, 3), np.uint8)
    px[:] = (20, 24, 28)
    for r in range(0, h, cell):
        for c in range(0, w, cell):
            if ((r // cell + c // cell + phase) % 2) == 0:
                px[r:r + cell, c:c + cell] = color
    return px


@pytest.fixture
def config() -> EngineConfig:
    return EngineConfig()


@pytest.fixture
def no_network(monkeypatch):
    """Any attempt to open a network connection fails the test."""

    def guard(*args, **kwargs):
        raise AssertionError("network access attempted during offline test")

    monkeypatch.setattr(socket.socket, "connect", guard)
    monkeypatch.setattr(socket, "create_connection", guard)


_SHIM = textwrap.dedent(
    """\
    #!/usr/bin/env python3
    # stand-in for the external decoder: understands just enough of the
    # two command shapes the library issues
    import json, os, sys

    args = sys.argv[1:]
    capture = os.environ.get("FFMPEG_CAPTURE")
    if capture:
        with open(capture, "a") as fh:
            fh.write(json.dumps(args) + "\\n")

    def val(flag):
        return args[args.index(flag) + 1] if flag in args else None

    src = val("-i")
    out = args[-1]
    if "%08d" in out:
        from PIL import Image
        with open(src) as fh:
            desc = json.load(fh)
        fps = float(val("-vf").split("=", 1)[1])
        n = int(desc["duration_s"] * fps)
        colors = desc.get("colors", [[30, 30, 30], [200, 200, 200]])
        seg = desc.get("segment_s", desc["duration_s"])
        h = desc.get("height", 48)
        w = desc.get("width", 64)
        for i in range(n):
            t = i / fps
            c = colors[min(int(t // seg), len(colors) - 1)]
            Image.new("RGB", (w, h), tuple(c)).save(
                out.replace("%08d", "%08d" % i)
            )
    else:
        with open(out, "wb") as fh:
            fh.write(b"CLIP" + json.dumps(args).encode())
    sys.exit(0)
    """
)


@pytest.fixture
def fake_ffmpeg(tmp_path, monkeypatch):
    """Puts a scripted ``ffmpeg`` on PATH; returns the capture log path."""
    bin_dir = tmp_path / "shimbin"
    bin_dir.mkdir()
    shim = bin_dir / "ffmpeg"
    shim.write_text(_SHIM)
    shim.chmod(shim.stat().st_mode | stat.S_IEXEC)
    capture = tmp_path / "ffmpeg_calls.jsonl"
    monkeypatch.setenv("PATH", f"{bin_dir}:{os.environ.get('PATH', '')}")
    monkeypatch.setenv("FFMPEG_CAPTURE", str(capture))
    return capture
