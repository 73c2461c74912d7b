"""Ingestion: directory, single image, video via external decoder, synth."""

import json

import numpy as np
import pytest
from PIL import Image

from conftest import flat_pixels, textured_pixels
from vidmem.errors import SourceUnavailable
from vidmem.frames import Frame, StreamSpec, open_source
from vidmem.synth import SynthSpec


def _write_images(directory, count=4, size=(64, 48)):
    rng = np.random.default_rng(9)
    paths = []
    for i in range(count):
        px = textured_pixels(rng, h=size[1], w=size[0])
        p = directory / f"{i:03d}.png"
        Image.fromarray(px).save(p)
        paths.append(p)
    return paths


def test_default_sampling_rate_is_half_fps():
    assert StreamSpec(source="x").base_fps == 0.5


def test_directory_source_sorted_and_timed(tmp_path):
    _write_images(tmp_path, count=4)
    frames = list(open_source(StreamSpec(source=str(tmp_path))))
    assert [f.frame_index for f in frames] == [0, 1, 2, 3]
    assert [f.t_rel for f in frames] == [0.0, 2.0, 4.0, 6.0]
    assert all(f.t_abs is None for f in frames)
    assert frames[0].pixels.shape == (48, 64, 3)


def test_epoch_pins_absolute_time(tmp_path):
    _write_images(tmp_path, count=2)
    frames = list(
        open_source(StreamSpec(source=str(tmp_path), epoch=1000.0))
    )
    assert [f.t_abs for f in frames] == [1000.0, 1002.0]


def test_single_image_source(tmp_path):
    p = tmp_path / "one.jpg"
    Image.fromarray(flat_pixels((10, 20, 30))).save(p)
    frames = list(open_source(StreamSpec(source=str(p))))
    assert len(frames) == 1
    assert frames[0].t_rel == 0.0


def test_missing_source_raises():
    with pytest.raises(SourceUnavailable):
        open_source(StreamSpec(source="/no/such/place"))


def test_empty_directory_raises(tmp_path):
    with pytest.raises(SourceUnavailable):
        open_source(StreamSpec(source=str(tmp_path)))


def test_corrupt_frame_skipped_leaving_index_gap(tmp_path, caplog):
    _write_images(tmp_path, count=3)
    (tmp_path / "001.png").write_bytes(b"this is not an image")
    with caplog.at_level("WARNING"):
        frames = list(open_source(StreamSpec(source=str(tmp_path))))
    # slot 1 is skipped, not substituted
    assert [f.frame_index for f in frames] == [0, 2]
    assert [f.t_rel for f in frames] == [0.0, 4.0]
    assert any("skipping corrupt frame" in r.message for r in caplog.records)


def test_synth_spec_dispatch():
    frames = list(
        open_source(StreamSpec(source=SynthSpec(segments=1, seed=4)))
    )
    assert len(frames) == 50
    assert isinstance(frames[0], Frame)


def test_video_without_decoder_fails_at_open(tmp_path, monkeypatch):
    video = tmp_path / "clip.mp4"
    video.write_bytes(b"00")
    monkeypatch.setenv("PATH", str(tmp_path))
    with pytest.raises(SourceUnavailable):
        open_source(StreamSpec(source=str(video)))


def test_video_sixty_seconds_at_half_fps_gives_thirty_frames(
    tmp_path, fake_ffmpeg
):
    video = tmp_path / "clip.mp4"
    video.write_text(json.dumps({"duration_s": 60}))
    frames = list(open_source(StreamSpec(source=str(video))))
    assert abs(len(frames) - 30) <= 1
    assert frames[1].t_rel == 2.0
    call = json.loads(fake_ffmpeg.read_text().splitlines()[0])
    assert "fps=0.5" in call


def test_video_decoder_failure_surfaces(tmp_path, fake_ffmpeg):
    video = tmp_path / "clip.mp4"
    video.write_text("not json at all")  # shim will crash on it
    with pytest.raises(SourceUnavailable):
        list(open_source(StreamSpec(source=str(video))))
