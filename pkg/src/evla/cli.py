"""Command-line front end.

Every command prints one JSON report on stdout and writes its artefacts to
disk.  Exit codes: 0 success, 2 usage or configuration error, 3 I/O or storage
failure, 4 failed numeric check.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from evla import __version__, _accel, bench
from evla.errors import EvlaError, InvalidStream, StorageError
from evla.events import BAYER_PATTERNS, SensorGeometry
from evla.fusion import accounting
from evla.fusion.adapter import AdapterConfig, shape_trace
from evla.fusion.gradcheck import check_gradients, probe_params
from evla.fusion.overlay import PolarityColorMap, overlay
from evla.representation import DEFAULT_BINS, DEFAULT_TAU_US, REPRESENTATIONS, render_window
from evla.simulator import (
    DEFAULT_CONTRAST,
    DegradeConfig,
    SceneConfig,
    degrade,
    generate_events,
    quantize,
    synthetic_scene,
)
from evla.storage import (
    EpisodeManifest,
    FrameRecord,
    read_events,
    read_image,
    read_manifest,
    write_events,
    write_image,
    write_manifest,
)
from evla.windowing import make_window, parse_policy

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

PARAM_BAND = 0.20
FLOPS_BAND = 0.30
GRAD_TOL = 1e-3
GRAD_TOL_LINEAR = 1e-6


class UsageError(Exception):
    pass


class IOFailure(Exception):
    pass


@dataclass
class PipelineReport:
    command: str
    seed: int | None = None
    inputs: dict = field(default_factory=dict)        # path -> sha256
    parameters: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    timing_us: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    ok: bool = True

    def stage(self, name: str):
        return _Stage(self, name)

    def add_input(self, path) -> None:
        self.inputs[str(path)] = file_digest(path)

    def to_json(self) -> dict:
        return {"command": self.command, "version": __version__, "seed": self.seed,
                "inputs": self.inputs, "parameters": self.parameters, "outputs": self.outputs,
                "timing_us": self.timing_us, "counters": self.counters,
                "results": self.results, "ok": self.ok}


class _Stage:
    def __init__(self, report: PipelineReport, name: str):
        self.report, self.name = report, name

    def __enter__(self):
        self.t0 = time.perf_counter_ns()
        return self

    def __exit__(self, *exc):
        us = (time.perf_counter_ns() - self.t0) // 1000
        self.report.timing_us[self.name] = self.report.timing_us.get(self.name, 0) + us
        return False


def file_digest(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    return h.hexdigest()


def _load_events(path):
    try:
        return read_events(path)
    except (OSError, StorageError, InvalidStream) as exc:
        raise IOFailure(f"{path}: {exc}") from exc


def _load_image(path):
    try:
        return read_image(path)
    except (OSError, StorageError) as exc:
        raise IOFailure(f"{path}: {exc}") from exc


def _ensure_dir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOFailure(f"cannot create {path}: {exc}") from exc


def _color(text: str) -> tuple[int, int, int]:
    parts = text.replace(" ", "").split(",")
    try:
        rgb = tuple(int(v) for v in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"colour must be R,G,B integers, got {text!r}")
    if len(rgb) != 3 or not all(0 <= v <= 255 for v in rgb):
        raise argparse.ArgumentTypeError(f"colour must be three values in 0..255, got {text!r}")
    return rgb


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _query_times(values, stream) -> list[int]:
    if values:
        return [int(v) for v in values]
    return [int(stream.t[-1]) if len(stream) else 0]


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args, report: PipelineReport) -> int:
    out = Path(args.out)
    try:
        scene = SceneConfig(width=args.width, height=args.height, bayer_origin=args.bayer,
                            background=args.background, background_ramp=args.background_ramp,
                            object_size=tuple(args.object_size),
                            object_color=tuple(args.object_color), start=tuple(args.start),
                            velocity=tuple(args.velocity), duration_ms=args.duration_ms,
                            fps=args.fps)
        base = DegradeConfig(exposure_ms=args.exposure_ms, light_scale=args.light_scale,
                             black_level=args.black_level, noise_std=args.noise_std,
                             seed=args.seed)
    except (ValueError, EvlaError) as exc:
        raise UsageError(str(exc)) from exc
    report.parameters = {"scene": _jsonable(scene.__dict__), "degrade": _jsonable(base.__dict__),
                         "contrast_threshold": args.contrast, "episode_id": args.episode_id}

    with report.stage("render_scene"):
        try:
            seq = synthetic_scene(scene)
        except (ValueError, EvlaError) as exc:
            raise UsageError(str(exc)) from exc
    with report.stage("generate_events"):
        try:
            events = generate_events(seq, args.contrast)
        except (ValueError, EvlaError) as exc:
            raise UsageError(str(exc)) from exc

    frames_dir = out / "frames"
    _ensure_dir(frames_dir)
    # one generator for all randomness; each frame's noise gets its own seed from it
    frame_seeds = np.random.default_rng(args.seed).integers(0, 2**63 - 1, size=len(seq))
    records = []
    with report.stage("degrade_and_write_frames"):
        for k, t_k in enumerate(seq.times):
            # early frames cannot integrate further back than the first frame
            exposure = min(args.exposure_ms, (int(t_k) - int(seq.times[0])) / 1000.0)
            cfg = DegradeConfig(exposure, args.light_scale, args.black_level, args.noise_std,
                                int(frame_seeds[k]))
            sharp = quantize(seq.frames[k] * 255.0)
            dark = degrade(seq, int(t_k), cfg)
            sharp_rel = f"frames/sharp_{k:04d}.ppm"
            dark_rel = f"frames/degraded_{k:04d}.ppm"
            _write(out / sharp_rel, lambda: write_image(out / sharp_rel, sharp))
            _write(out / dark_rel, lambda: write_image(out / dark_rel, dark))
            records.append(FrameRecord(int(t_k), dark_rel, float(exposure), args.light_scale,
                                       {"sharp_image_path": sharp_rel}))
            report.outputs += [str(out / sharp_rel), str(out / dark_rel)]

    with report.stage("write_events"):
        _write(out / "events.evla", lambda: write_events(events, out / "events.evla"))
    manifest = EpisodeManifest(args.episode_id, seq.geometry, records, "events.evla",
                               extra={"contrast_threshold": args.contrast, "seed": args.seed})
    with report.stage("write_manifest"):
        _write(out / "manifest.jsonl", lambda: write_manifest(out / "manifest.jsonl", manifest))
    report.outputs += [str(out / "events.evla"), str(out / "manifest.jsonl")]

    with report.stage("self_check"):
        try:
            (back,) = read_manifest(out / "manifest.jsonl", check_files=True)
            reloaded = read_events(out / back.events_path)
        except (OSError, StorageError, InvalidStream, ValueError) as exc:
            raise IOFailure(f"self-check failed: {exc}") from exc
        if back.to_json() != manifest.to_json() or reloaded != events:
            raise IOFailure("self-check failed: reloaded episode differs from what was written")
    report.counters = {"events": len(events), "frames": len(seq)}
    return EXIT_OK


def _write(path, action) -> None:
    try:
        action()
    except (OSError, StorageError) as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# ---------------------------------------------------------------------------
# render / overlay

def cmd_render(args, report: PipelineReport) -> int:
    report.add_input(args.events)
    with report.stage("read_events"):
        stream = _load_events(args.events)
    out = Path(args.out)
    _ensure_dir(out)
    queries = _query_times(args.t_query, stream)
    report.parameters = {"window": args.window_text, "repr": args.repr, "t_query": queries,
                         "tau_us": args.tau_us, "bins": args.bins}
    n_in_windows = 0
    for t_e in queries:
        with report.stage("window"):
            window = make_window(stream, t_e, args.window)
        n_in_windows += len(window)
        with report.stage("render"):
            images = render_window(window, args.repr, args.tau_us, args.bins)
        for suffix, img in images:
            ext = "ppm" if img.ndim == 3 else "pgm"
            path = out / f"{args.prefix}_{t_e}_{suffix}.{ext}"
            with report.stage("write"):
                _write(path, lambda: write_image(path, img))
            report.outputs.append(str(path))
    report.counters = {"events_in_stream": len(stream), "events_in_windows": n_in_windows,
                       "images": len(report.outputs)}
    return EXIT_OK


def cmd_overlay(args, report: PipelineReport) -> int:
    report.add_input(args.events)
    report.add_input(args.image)
    stream = _load_events(args.events)
    image = _load_image(args.image)
    (t_e,) = _query_times([args.t_query] if args.t_query is not None else None, stream)
    colors = PolarityColorMap(args.on_color, args.off_color)
    report.parameters = {"window": args.window_text, "t_query": t_e,
                         "on_color": list(args.on_color), "off_color": list(args.off_color)}
    window = make_window(stream, t_e, args.window)
    if image.ndim != 3:
        raise UsageError(f"{args.image} is single-channel; overlay needs an RGB image")
    with report.stage("overlay"):
        fused = overlay(image, window, colors)
    out = Path(args.out)
    if out.parent != Path(""):
        _ensure_dir(out.parent)
    _write(out, lambda: write_image(out, fused))
    report.outputs.append(str(out))
    report.counters = {"events_in_window": len(window),
                       "pixels_changed": int(np.any(fused != image, axis=-1).sum())}
    return EXIT_OK


# ---------------------------------------------------------------------------
# adapter-check

def _load_config(path) -> AdapterConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path} must hold a JSON object")
    return AdapterConfig.from_dict(data)


def cmd_adapter_check(args, report: PipelineReport) -> int:
    if args.config:
        report.add_input(args.config)
        config, preset = _load_config(args.config), "file"
    elif args.toy:
        config, preset = (AdapterConfig.linear_toy() if args.linear else AdapterConfig.toy()), "toy"
    else:
        config, preset = AdapterConfig.paper_defaults(), "paper-defaults"
    config.validate()
    resolution = tuple(args.resolution) if args.resolution else (
        (2 * config.patch_size, 2 * config.patch_size) if preset == "toy"
        else accounting.REFERENCE_RESOLUTION)
    report.parameters = {"preset": preset, "config": config.to_dict(),
                         "resolution": list(resolution)}
    params = accounting.count_parameters(config)
    flops = accounting.flops_estimate(config, resolution)
    res = report.results
    res["wiring"] = accounting.describe_wiring(config)
    res["shape_trace"] = [[name, list(shape)] for name, shape in shape_trace(config, resolution)]
    res["parameters"] = params
    res["parameter_breakdown"] = accounting.parameter_breakdown(config)
    res["flops"] = flops
    checks = {}
    if preset == "paper-defaults":
        checks["parameters_within_band"] = _band(params, accounting.REFERENCE_PARAMS, PARAM_BAND)
        if resolution == accounting.REFERENCE_RESOLUTION:
            checks["flops_within_band"] = _band(flops, accounting.REFERENCE_FLOPS, FLOPS_BAND)
    if preset == "toy" or args.gradcheck:
        tol = GRAD_TOL_LINEAR if config.block_type == "linear" else GRAD_TOL
        with report.stage("gradient_check"):
            gc = check_gradients(probe_params(config, args.seed), config, seed=args.seed)
        res["gradient_check"] = {"max_rel_error": gc.max_rel_error, "worst_param": gc.worst_param,
                                 "tolerance": tol}
        checks["gradient_check"] = gc.max_rel_error <= tol
    res["checks"] = checks
    report.ok = all(checks.values())
    return EXIT_OK if report.ok else EXIT_NUMERIC


def _band(value: float, reference: float, rel: float) -> bool:
    return abs(value - reference) <= rel * reference


# ---------------------------------------------------------------------------
# bench

def cmd_bench(args, report: PipelineReport) -> int:
    if args.events:
        report.add_input(args.events)
        with report.stage("load"):
            stream = _load_events(args.events)
        geometry = stream.geometry
        columns = (stream.x.copy(), stream.y.copy(), stream.t.copy(), stream.p.copy())
        source = {"events": args.events}
    else:
        geometry = SensorGeometry()
        columns = bench.synthetic_columns(args.synthetic, geometry, args.seed)
        source = {"synthetic": args.synthetic}
    backends = list(_accel.BACKENDS) if args.backend == "both" else [args.backend]
    if "numba" in backends and not _accel.HAS_NUMBA:
        raise UsageError("numba backend requested but numba is not installed")
    report.parameters = {**source, "window_size": args.window_size,
                         "iterations": args.iterations, "backends": backends,
                         "soft_target_events_per_s": bench.TARGET_EVENTS_PER_S}
    runs = []
    for b in backends:
        with report.stage(f"bench_{b}"):
            runs.append(bench.run_bench(columns, geometry, args.window_size, args.iterations, b))
    report.results = {"machine": bench.machine_id(), "runs": [r.to_json() for r in runs]}
    digests = {r.digest for r in runs}
    report.results["backends_agree"] = len(digests) == 1
    misses = [f"{r.backend}:{s}" for r in runs for s, ok in r.to_json()["meets_soft_target"].items()
              if not ok]
    # a miss is reported, not fatal
    report.results["soft_target_misses"] = misses
    report.counters = {"events": runs[0].events, "windows": runs[0].windows}
    if len(digests) != 1:
        report.ok = False
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evla", description="Event-camera processing toolkit.")
    parser.add_argument("--version", action="version", version=f"evla {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="synthesise a degraded RGB + event episode")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--episode-id", default="episode_0000")
    p.add_argument("--width", type=_pos_int, default=346)
    p.add_argument("--height", type=_pos_int, default=260)
    p.add_argument("--bayer", choices=BAYER_PATTERNS, default="RGGB")
    p.add_argument("--duration-ms", type=float, default=1000.0)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--background", type=float, default=0.5)
    p.add_argument("--background-ramp", type=float, default=0.0)
    p.add_argument("--object-size", type=float, nargs=2, default=(40.0, 40.0), metavar=("W", "H"))
    p.add_argument("--object-color", type=float, nargs=3, default=(0.9, 0.9, 0.9),
                   metavar=("R", "G", "B"))
    p.add_argument("--start", type=float, nargs=2, default=(40.0, 110.0), metavar=("X", "Y"))
    p.add_argument("--velocity", type=float, nargs="+", default=(60.0, 0.0), metavar="V",
                   help="pixels/s; one value moves horizontally")
    p.add_argument("--contrast", type=float, default=DEFAULT_CONTRAST)
    p.add_argument("--exposure-ms", type=float, default=10.0)
    p.add_argument("--light-scale", type=float, default=1.0)
    p.add_argument("--black-level", type=float, default=0.0)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("render", help="render event windows as pixmaps")
    p.add_argument("events")
    p.add_argument("--window", default="count:2000", help="count:N or duration:MS")
    p.add_argument("--repr", choices=REPRESENTATIONS, default="count")
    p.add_argument("--t-query", type=_nonneg_int, nargs="+", help="query times in us")
    p.add_argument("--tau-us", type=float, default=DEFAULT_TAU_US)
    p.add_argument("--bins", type=_pos_int, default=DEFAULT_BINS)
    p.add_argument("--out", default=".")
    p.add_argument("--prefix", default="render")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("overlay", help="paint event polarities onto an RGB image")
    p.add_argument("events")
    p.add_argument("image")
    p.add_argument("--window", default="count:2000")
    p.add_argument("--t-query", type=_nonneg_int)
    p.add_argument("--on-color", type=_color, default=(255, 0, 0))
    p.add_argument("--off-color", type=_color, default=(0, 0, 255))
    p.add_argument("--out", default="overlay.ppm")
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser("adapter-check", help="shape trace, parameter and FLOP accounting")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="JSON adapter configuration")
    src.add_argument("--paper-defaults", action="store_true", help="reference configuration")
    src.add_argument("--toy", action="store_true", help="tiny configuration plus gradient check")
    p.add_argument("--linear", action="store_true", help="with --toy: linear-only blocks")
    p.add_argument("--gradcheck", action="store_true", help="run the gradient check on any config")
    p.add_argument("--resolution", type=_pos_int, nargs=2, metavar=("H", "W"))
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.set_defaults(func=cmd_adapter_check)

    p = sub.add_parser("bench", help="ingest / windowing / accumulation throughput")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--events", help="event file to benchmark")
    src.add_argument("--synthetic", type=_pos_int, default=1_000_000,
                     help="number of synthetic events (default 1e6)")
    p.add_argument("--window-size", type=_pos_int, default=2000)
    p.add_argument("--iterations", type=_pos_int, default=5)
    p.add_argument("--backend", choices=(*_accel.BACKENDS, "both"), default="both")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "simulate":
        v = args.velocity
        if len(v) not in (1, 2):
            return _fail(parser, "--velocity takes one or two values", EXIT_USAGE)
        args.velocity = (v[0], 0.0) if len(v) == 1 else tuple(v)
    if args.command in ("render", "overlay"):
        args.window_text = args.window
        try:
            args.window = parse_policy(args.window)
        except ValueError as exc:
            return _fail(parser, str(exc), EXIT_USAGE)
    if args.command == "adapter-check" and args.linear and not args.toy:
        return _fail(parser, "--linear only applies with --toy", EXIT_USAGE)

    report = PipelineReport(command=args.command, seed=getattr(args, "seed", None))
    try:
        code = args.func(args, report)
    except UsageError as exc:
        return _fail(parser, str(exc), EXIT_USAGE)
    except IOFailure as exc:
        return _fail(parser, str(exc), EXIT_IO)
    except (StorageError, OSError) as exc:
        return _fail(parser, str(exc), EXIT_IO)
    except (EvlaError, ValueError) as exc:
        return _fail(parser, str(exc), EXIT_USAGE)
    json.dump(report.to_json(), sys.stdout, indent=2, default=_json_default)
    sys.stdout.write("\n")
    sys.stdout.flush()
    return code


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, os.PathLike):
        return os.fspath(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _fail(parser, message: str, code: int) -> int:
    print(f"{parser.prog}: error: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
