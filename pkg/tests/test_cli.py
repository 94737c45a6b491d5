import json
import subprocess
import sys

import numpy as np
import pytest

from evla import cli
from evla.cli import main
from evla.events import SensorGeometry, validate_stream
from evla.fusion.overlay import PolarityColorMap, overlay
from evla.representation import render_window
from evla.storage import read_events, read_image, read_manifest, write_events, write_image
from evla.windowing import duration_window, recent_count_window


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    report = json.loads(out.out) if out.out.strip() else None
    return code, report, out.err


SMALL = ("--width", 64, "--height", 48, "--object-size", 12, 12, "--start", 5, 18,
         "--duration-ms", 300)


@pytest.fixture(scope="module")
def episode(tmp_path_factory):
    out = tmp_path_factory.mktemp("ep")
    assert main(["simulate", "--out", str(out), *map(str, SMALL)]) == 0
    return out


# -- simulate ----------------------------------------------------------------

def test_simulate_writes_reloadable_episode(episode):
    (m,) = read_manifest(episode / "manifest.jsonl")
    assert len(m.frames) == 10 and m.geometry == SensorGeometry(64, 48)
    s = read_events(episode / m.events_path)
    assert len(s) > 0 and s.geometry == m.geometry
    for f in m.frames:
        assert read_image(episode / f.image_path).shape == (48, 64, 3)
        assert (episode / f.extra["sharp_image_path"]).exists()
    assert m.extra["seed"] == 0


def test_simulate_default_scene(tmp_path, capsys):
    code, rep, _ = run(capsys, "simulate", "--out", tmp_path, "--duration-ms", 200)
    assert code == 0 and rep["ok"] and rep["counters"]["frames"] == 7
    (m,) = read_manifest(tmp_path / "manifest.jsonl")
    assert m.geometry == SensorGeometry(346, 260)


def test_static_scene_has_no_events(tmp_path, capsys):
    code, rep, _ = run(capsys, "simulate", "--out", tmp_path, *SMALL, "--velocity", 0)
    assert code == 0 and rep["counters"]["events"] == 0
    assert len(read_events(tmp_path / "events.evla")) == 0


def test_long_dim_exposure_darkens(tmp_path, capsys):
    code, _, _ = run(capsys, "simulate", "--out", tmp_path, *SMALL,
                     "--exposure-ms", 1000, "--light-scale", 0.05)
    assert code == 0
    sharp = read_image(tmp_path / "frames/sharp_0005.ppm")
    dark = read_image(tmp_path / "frames/degraded_0005.ppm")
    assert dark.mean() < sharp.mean()
    (m,) = read_manifest(tmp_path / "manifest.jsonl")
    # exposure cannot reach back past the first frame
    assert m.frames[0].exposure_ms == 0.0 and m.frames[5].exposure_ms == pytest.approx(166.666, abs=1e-2)


def test_simulate_is_deterministic(tmp_path, capsys):
    args = (*SMALL, "--noise-std", 3, "--seed", 9)
    run(capsys, "simulate", "--out", tmp_path / "a", *args)
    run(capsys, "simulate", "--out", tmp_path / "b", *args)
    for name in ("events.evla", "frames/degraded_0004.ppm", "manifest.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_bad_scene_is_usage_error(tmp_path, capsys):
    code, rep, err = run(capsys, "simulate", "--out", tmp_path, *SMALL, "--velocity", 900)
    assert code == 2 and rep is None and "error" in err
    code, _, _ = run(capsys, "simulate", "--out", tmp_path, "--velocity", 1, 2, 3)
    assert code == 2


# -- render / overlay --------------------------------------------------------

@pytest.mark.parametrize("kind", ["count", "sum", "timesurface", "voxel", "frame"])
def test_render_matches_library(episode, tmp_path, capsys, kind):
    s = read_events(episode / "events.evla")
    t_e = int(s.t[len(s) // 2])
    code, rep, _ = run(capsys, "render", episode / "events.evla", "--repr", kind,
                       "--window", "count:500", "--t-query", t_e, "--out", tmp_path)
    assert code == 0
    expected = render_window(recent_count_window(s, t_e, 500), kind)
    assert len(rep["outputs"]) == len(expected)
    for (suffix, img), path in zip(expected, rep["outputs"]):
        assert path.endswith(f"render_{t_e}_{suffix}.{'ppm' if img.ndim == 3 else 'pgm'}")
        np.testing.assert_array_equal(read_image(path), img)


def test_render_duration_window(episode, tmp_path, capsys):
    s = read_events(episode / "events.evla")
    t_e = int(s.t[-1])
    code, rep, _ = run(capsys, "render", episode / "events.evla", "--window", "duration:20",
                       "--out", tmp_path)
    assert code == 0
    w = duration_window(s, t_e, 20_000)
    assert rep["counters"]["events_in_windows"] == len(w)
    (_, img), = render_window(w, "count")
    np.testing.assert_array_equal(read_image(rep["outputs"][0]), img)


def test_render_several_queries(episode, tmp_path, capsys):
    code, rep, _ = run(capsys, "render", episode / "events.evla", "--t-query", 1000, 2000, 3000,
                       "--out", tmp_path, "--prefix", "q")
    assert code == 0 and len(rep["outputs"]) == 3


def test_empty_window_renders_black(tmp_path, capsys):
    write_events(validate_stream([], SensorGeometry(10, 8)), tmp_path / "e.evla")
    code, rep, _ = run(capsys, "render", tmp_path / "e.evla", "--out", tmp_path)
    assert code == 0
    img = read_image(rep["outputs"][0])
    assert img.shape == (8, 10) and not img.any()


def test_overlay_matches_library(episode, tmp_path, capsys):
    s = read_events(episode / "events.evla")
    (m,) = read_manifest(episode / "manifest.jsonl")
    frame = episode / m.frames[6].image_path
    t_e = m.frames[6].t_exposure_end_us
    out = tmp_path / "sub" / "o.ppm"
    code, rep, _ = run(capsys, "overlay", episode / "events.evla", frame, "--t-query", t_e,
                       "--window", "count:300", "--on-color", "10,200,30",
                       "--off-color", "1,2,3", "--out", out)
    assert code == 0
    expected = overlay(read_image(frame), recent_count_window(s, t_e, 300),
                       PolarityColorMap((10, 200, 30), (1, 2, 3)))
    got = read_image(out)
    np.testing.assert_array_equal(got, expected)
    assert rep["counters"]["pixels_changed"] > 0
    assert {tuple(c) for c in got.reshape(-1, 3)} >= {(10, 200, 30), (1, 2, 3)}


def test_overlay_rejects_mismatched_image(episode, tmp_path, capsys):
    write_image(tmp_path / "small.ppm", np.zeros((5, 5, 3), np.uint8))
    write_image(tmp_path / "gray.pgm", np.zeros((48, 64), np.uint8))
    assert run(capsys, "overlay", episode / "events.evla", tmp_path / "small.ppm")[0] == 2
    assert run(capsys, "overlay", episode / "events.evla", tmp_path / "gray.pgm")[0] == 2
    assert run(capsys, "overlay", episode / "events.evla", tmp_path / "o.ppm",
               "--on-color", "300,0,0")[0] == 2


# -- exit codes --------------------------------------------------------------

def test_missing_and_corrupt_inputs_exit_3(tmp_path, capsys):
    assert run(capsys, "render", tmp_path / "nope.evla")[0] == 3
    (tmp_path / "bad.evla").write_bytes(b"garbage that is long enough to read")
    assert run(capsys, "render", tmp_path / "bad.evla")[0] == 3


def test_usage_errors_exit_2(tmp_path, capsys):
    assert run(capsys)[0] == 2
    assert run(capsys, "render", tmp_path / "x.evla", "--window", "frames:3")[0] == 2
    assert run(capsys, "render", tmp_path / "x.evla", "--repr", "hologram")[0] == 2
    assert run(capsys, "adapter-check", "--paper-defaults", "--linear")[0] == 2


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "evla", "adapter-check", "--paper-defaults"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert json.loads(out.stdout)["results"]["parameters"] == 12_117_120


# -- adapter-check -----------------------------------------------------------

def test_adapter_check_reference(capsys):
    code, rep, _ = run(capsys, "adapter-check", "--paper-defaults")
    res = rep["results"]
    assert code == 0 and res["checks"] == {"parameters_within_band": True,
                                            "flops_within_band": True}
    assert res["shape_trace"][0] == ["image.patch_embed", [374, 768]]
    assert sum(res["parameter_breakdown"].values()) == res["parameters"]


def test_adapter_check_other_resolution_skips_flops_band(capsys):
    code, rep, _ = run(capsys, "adapter-check", "--resolution", 224, 224)
    assert code == 0 and "flops_within_band" not in rep["results"]["checks"]


@pytest.mark.parametrize("extra,tol", [((), 1e-3), (("--linear",), 1e-6)])
def test_adapter_check_toy(capsys, extra, tol):
    code, rep, _ = run(capsys, "adapter-check", "--toy", *extra)
    gc = rep["results"]["gradient_check"]
    assert code == 0 and gc["tolerance"] == tol and gc["max_rel_error"] <= tol


def test_adapter_check_config_file(tmp_path, capsys):
    from evla.fusion.adapter import AdapterConfig
    good = AdapterConfig.toy().to_dict()
    (tmp_path / "good.json").write_text(json.dumps(good))
    code, rep, _ = run(capsys, "adapter-check", "--config", tmp_path / "good.json", "--gradcheck")
    assert code == 0 and rep["results"]["checks"]["gradient_check"]
    assert str(tmp_path / "good.json") in rep["inputs"]

    bad = dict(good, fusion_layers=[1])          # two event blocks, one fusion layer
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    code, _, err = run(capsys, "adapter-check", "--config", tmp_path / "bad.json")
    assert code == 2 and "fusion layer" in err
    (tmp_path / "junk.json").write_text("{")
    assert run(capsys, "adapter-check", "--config", tmp_path / "junk.json")[0] == 2
    (tmp_path / "extra.json").write_text(json.dumps(dict(good, colour="red")))
    assert run(capsys, "adapter-check", "--config", tmp_path / "extra.json")[0] == 2
    assert run(capsys, "adapter-check", "--config", tmp_path / "absent.json")[0] == 3


def test_failed_check_exits_4(capsys, monkeypatch):
    monkeypatch.setattr(cli, "GRAD_TOL", 0.0)
    code, rep, _ = run(capsys, "adapter-check", "--toy")
    assert code == 4 and rep["ok"] is False


# -- bench -------------------------------------------------------------------

def test_bench_synthetic(capsys):
    code, rep, _ = run(capsys, "bench", "--synthetic", 1_000_000, "--iterations", 1)
    assert code == 0 and rep["results"]["backends_agree"]
    for r in rep["results"]["runs"]:
        assert r["events"] == 1_000_000
        assert all(v > 0 for v in r["events_per_s"].values())


def test_bench_digest_ignores_iterations(capsys):
    _, a, _ = run(capsys, "bench", "--synthetic", 50_000, "--iterations", 1, "--backend", "numpy")
    _, b, _ = run(capsys, "bench", "--synthetic", 50_000, "--iterations", 9, "--backend", "numpy")
    assert a["results"]["runs"][0]["digest"] == b["results"]["runs"][0]["digest"]


def test_bench_event_file(episode, capsys):
    code, rep, _ = run(capsys, "bench", "--events", episode / "events.evla", "--iterations", 1,
                       "--window-size", 100)
    assert code == 0 and rep["counters"]["events"] == len(read_events(episode / "events.evla"))
