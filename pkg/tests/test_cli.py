"""CLI surface: exit codes, JSON output, store round trips."""

import json

import pytest
from PIL import Image

from conftest import scene_pixels
from vidmem.cli import API_KEY_ENV, ENDPOINT_ENV, main
from vidmem.store import MemoryStore

SCENES = [
    ((230, 40, 40), 0),
    ((40, 230, 40), 1),
    ((60, 60, 235), 0),
    ((235, 235, 235), 1),
]


def write_scene_images(directory, count=4):
    directory.mkdir(parents=True, exist_ok=True)
    for i, (color, phase) in enumerate(SCENES[:count]):
        img = Image.fromarray(scene_pixels(color, phase))
        img.save(directory / f"{i:03d}.png")  # lossless on purpose
    return directory


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def indexed_store(tmp_path, capsys, count=4):
    images = write_scene_images(tmp_path / "imgs", count)
    store = tmp_path / "store"
    code, out, _ = run_cli(capsys, "index", str(images),
                           "--store", str(store))
    assert code == 0
    return store, json.loads(out)


# -------------------------------------------------------------- exit codes


def test_no_command_is_a_usage_error(capsys):
    code, _, err = run_cli(capsys)
    assert code == 1
    assert "error" in err


def test_missing_required_flag_is_a_usage_error(capsys, tmp_path):
    code, _, _ = run_cli(capsys, "index", str(tmp_path))
    assert code == 1


def test_unknown_command_is_a_usage_error(capsys):
    code, _, _ = run_cli(capsys, "defragment")
    assert code == 1


def test_runtime_failure_exits_two(capsys, tmp_path):
    code, _, err = run_cli(capsys, "stats", str(tmp_path / "no_such_store"))
    assert code == 2
    assert err.startswith("vidmem:")


def test_bad_fps_exits_two(capsys, tmp_path):
    images = write_scene_images(tmp_path / "imgs", 1)
    code, _, _ = run_cli(capsys, "index", str(images),
                         "--store", str(tmp_path / "s"), "--fps", "0")
    assert code == 2


def test_unknown_preset_exits_two(capsys):
    code, _, _ = run_cli(capsys, "bench", "--preset", "galaxy")
    assert code == 2


# ------------------------------------------------------------------- index


def test_index_image_directory(tmp_path, capsys, no_network):
    store, stats = indexed_store(tmp_path, capsys)
    assert stats["frames_ingested"] == 4
    assert stats["frames_kept"] == 4
    assert stats["moments"] >= 1
    assert (store / "manifest.json").exists()
    loaded = MemoryStore.load(str(store))
    assert loaded.frames_ingested == 4
    assert len(loaded.moments) == stats["moments"]


def test_index_default_sampling_rate_is_half_hz(tmp_path, capsys):
    store, _ = indexed_store(tmp_path, capsys, count=2)
    loaded = MemoryStore.load(str(store))
    # the second image sits 2 seconds after the first at 0.5 fps
    assert [m.t_rel for m in loaded.moments] == [0.0, 2.0]


def test_index_synthetic_spec_file(tmp_path, capsys, no_network):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({
        "segments": 2, "segment_duration_s": 30.0, "seed": 0,
    }))
    code, out, _ = run_cli(capsys, "index", str(spec),
                           "--store", str(tmp_path / "s"))
    assert code == 0
    stats = json.loads(out)
    assert stats["frames_ingested"] == 30
    assert stats["moments"] == 5


def test_index_epoch_is_recorded(tmp_path, capsys):
    images = write_scene_images(tmp_path / "imgs", 1)
    store = tmp_path / "s"
    code, _, _ = run_cli(capsys, "index", str(images), "--store", str(store),
                         "--epoch", "1700000000")
    assert code == 0
    loaded = MemoryStore.load(str(store))
    assert loaded.epoch == 1_700_000_000.0
    assert loaded.moments[0].t_abs == 1_700_000_000.0


# ------------------------------------------------------------------ config


def test_config_file_overrides_are_applied(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"base_fps": 1.0}))
    images = write_scene_images(tmp_path / "imgs", 2)
    store = tmp_path / "s"
    code, _, _ = run_cli(capsys, "index", str(images), "--store", str(store),
                         "--config", str(cfg))
    assert code == 0
    loaded = MemoryStore.load(str(store))
    assert [m.t_rel for m in loaded.moments] == [0.0, 1.0]


def test_config_file_with_unknown_key_exits_two(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"filters": {"tau_blur": 20.0}, "bogus": 1}))
    images = write_scene_images(tmp_path / "imgs", 1)
    code, _, err = run_cli(capsys, "index", str(images),
                           "--store", str(tmp_path / "s"),
                           "--config", str(cfg))
    assert code == 2
    assert "bogus" in err


# ------------------------------------------------------------------- query


def test_query_answers_and_writes_trace(tmp_path, capsys, no_network):
    store, _ = indexed_store(tmp_path, capsys)
    trace_path = tmp_path / "trace.json"
    code, out, _ = run_cli(capsys, "query", str(store), "bright scene",
                           "--trace", str(trace_path))
    assert code == 0
    result = json.loads(out)
    assert set(result) == {"response", "sufficiency", "best_ref", "turns"}
    assert result["best_ref"] is not None
    trace = json.loads(trace_path.read_text())
    assert trace["goal"] == "bright scene"
    assert trace["answer"]["best_ref"] == result["best_ref"]
    assert len(trace["turns"]) == result["turns"]


def test_query_turn_budget_flag(tmp_path, capsys):
    store, _ = indexed_store(tmp_path, capsys, count=1)
    code, out, _ = run_cli(capsys, "query", str(store), "anything",
                           "--turns", "1")
    assert code == 0
    assert json.loads(out)["turns"] == 1


def test_query_zero_turns_exits_two(tmp_path, capsys):
    store, _ = indexed_store(tmp_path, capsys, count=1)
    code, _, _ = run_cli(capsys, "query", str(store), "anything",
                         "--turns", "0")
    assert code == 2


def test_query_http_backend_requires_endpoint(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv(ENDPOINT_ENV, raising=False)
    monkeypatch.delenv(API_KEY_ENV, raising=False)
    store, _ = indexed_store(tmp_path, capsys, count=1)
    code, _, err = run_cli(capsys, "query", str(store), "anything",
                           "--backend", "http")
    assert code == 2
    assert ENDPOINT_ENV in err


# --------------------------------------------------------------- summarize


def test_summarize_persists_documents(tmp_path, capsys):
    store, _ = indexed_store(tmp_path, capsys)
    code, out, _ = run_cli(capsys, "summarize", str(store),
                           "--from", "0", "--to", "6", "--granularity", "3")
    assert code == 0
    result = json.loads(out)
    assert result["written"] == 2
    assert [s["start_t"] for s in result["summaries"]] == [0.0, 3.0]
    # durable: a fresh load sees them
    loaded = MemoryStore.load(str(store))
    assert len(loaded.summaries) == 2
    assert loaded.summaries[0].text.startswith("Summary for window")


# ------------------------------------------------------------------- stats


def test_stats_reports_store_counters(tmp_path, capsys):
    store, stats = indexed_store(tmp_path, capsys)
    code, out, _ = run_cli(capsys, "stats", str(store))
    assert code == 0
    report = json.loads(out)
    assert report["frames_ingested"] == 4
    assert report["moments"] == stats["moments"]
    assert report["dim"] == 280
    assert report["span"] == [0.0, 6.0]


# ------------------------------------------------------------------- bench


def test_bench_spec_file_and_report(tmp_path, capsys, no_network):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({
        "segments": 2, "segment_duration_s": 30.0, "seed": 0,
    }))
    report_path = tmp_path / "report.json"
    code, out, _ = run_cli(capsys, "bench", "--spec", str(spec),
                           "--report", str(report_path))
    assert code == 0
    brief = json.loads(out)
    assert brief["moments"] == 5
    assert brief["events"] == 2
    assert brief["boundary_recall"] == 1.0
    assert brief["boundary_precision"] == 1.0
    assert brief["object_query_hits"] == "1/1"
    assert brief["event_query_hits"] == "2/2"
    report = json.loads(report_path.read_text())
    assert report["kept_share"] == pytest.approx(5 / 30)
    assert report["baselines"]["smoke_kept_share"] == 0.05
    assert report["index"]["objects"] == [
        {"token": "redmarker104", "found": True}
    ]


def test_bench_spec_with_unknown_key_exits_two(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"segments": 2, "wat": 1}))
    code, _, _ = run_cli(capsys, "bench", "--spec", str(spec))
    assert code == 2
