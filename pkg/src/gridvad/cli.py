"""gridvad command line: synth, train, score, eval and explain subcommands.

Every subcommand writes its artifact plus a ``<artifact>.manifest.json``
sidecar echoing the resolved configuration, wall-clock timings and
library versions. Artifacts themselves contain no timestamps, so reruns
with identical inputs are byte-identical.

Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, bn
from .explain import explain_object, write_explanation
from .featurize import GridConfigError
from .ingest import (
    ConfidenceThresholds,
    TrackFileError,
    compute_confidence_thresholds,
    filter_detections,
    parse_ground_truth,
    parse_tracks,
    slice_frames,
    write_ground_truth,
    write_tracks,
)
from .metrics import evaluate, report_to_dict
from .pipeline import (
    TrainConfig,
    load_bundle,
    read_scores,
    save_bundle,
    score_frames,
    score_object,
    train,
    write_scores,
)
from .synth import (
    ScriptError,
    generate_scene,
    load_script,
    occlusion_script,
    reference_script,
    save_script,
    temporal_anomaly_script,
)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

PRESETS = {
    "reference": reference_script,
    "temporal": temporal_anomaly_script,
    "occlusion": occlusion_script,
}


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"{value} is not a positive integer")
    return value


def _cell_sizes(text: str) -> tuple[int, ...]:
    return tuple(_positive_int(part) for part in text.split(",") if part)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ScriptError(f"cannot read config file {path}: {exc}") from None
    if not isinstance(payload, dict):
        raise ScriptError(f"config file {path} must hold a JSON object")
    return payload


def _resolve(args, config: dict, key: str, default):
    """Flag value if given, else config-file value, else the default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        raw = config[key]
        if key == "cells" and isinstance(raw, list):
            return tuple(int(v) for v in raw)
        return raw
    return default


def _write_manifest(artifact_path, command: str, config: dict, timings: dict) -> None:
    manifest = {
        "command": command,
        "config": config,
        "timings": timings,
        "versions": {
            "gridvad": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    path = Path(str(artifact_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")


def _prepared_tracks(path: str, fmt: str, thresholds: ConfidenceThresholds | None,
                     slice_factor: int = 1):
    tracks = parse_tracks(path, fmt)
    if thresholds is not None:
        tracks = filter_detections(tracks, thresholds)
    if slice_factor > 1:
        tracks = slice_frames(tracks, slice_factor)
    return tracks


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args) -> int:
    config = _load_config_file(args.config)
    preset = _resolve(args, config, "preset", "reference")
    script_path = _resolve(args, config, "script", None)
    if script_path:
        script = load_script(script_path)
    else:
        if preset not in PRESETS:
            raise ScriptError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        script = PRESETS[preset]()
    seed = _resolve(args, config, "seed", None)
    if seed is not None:
        script = type(script)(script.resolution, script.train_frames, script.test_frames,
                              script.lanes, script.injections, int(seed))
    out_dir = Path(_resolve(args, config, "out_dir", "data"))
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    train_tracks, test_tracks, gt = generate_scene(script)
    elapsed = time.perf_counter() - started
    write_tracks(train_tracks, out_dir / "train_tracks.jsonl")
    write_tracks(test_tracks, out_dir / "test_tracks.jsonl")
    write_ground_truth(gt, out_dir / "gt.jsonl")
    save_script(script, out_dir / "scene.json")
    echo = {"preset": None if script_path else preset, "script": script_path,
            "seed": script.seed, "out_dir": str(out_dir)}
    _write_manifest(out_dir / "scene.json", "synth", echo,
                    {"generate_seconds": elapsed,
                     "train_detections": len(train_tracks.detections),
                     "test_detections": len(test_tracks.detections),
                     "gt_regions": len(gt.regions)})
    print(f"wrote {out_dir}/train_tracks.jsonl, test_tracks.jsonl, gt.jsonl "
          f"({len(gt.regions)} ground-truth regions)")
    return EXIT_OK


def _cmd_train(args) -> int:
    config = _load_config_file(args.config)
    tracks_path = _resolve(args, config, "tracks", None)
    if not tracks_path:
        raise ScriptError("--tracks is required")
    fmt = _resolve(args, config, "format", "jsonl")
    cells = _resolve(args, config, "cells", (20, 40))
    mode = _resolve(args, config, "mode", "spatiotemporal")
    slice_factor = int(_resolve(args, config, "slice", 1))
    no_filter = bool(_resolve(args, config, "no_filter", False))
    box_mode = _resolve(args, config, "box_mode", "bottom")
    fusion = _resolve(args, config, "fusion", "mean")
    sigma = float(_resolve(args, config, "smoothing_sigma", 5.0))
    out = Path(_resolve(args, config, "out", "model.bundle"))

    tracks = parse_tracks(tracks_path, fmt)
    if no_filter:
        thresholds = ConfidenceThresholds(0.0, 0.0)
    else:
        # thresholds come from the full training distribution, before slicing
        thresholds = compute_confidence_thresholds(tracks)
        tracks = filter_detections(tracks, thresholds)
    if slice_factor > 1:
        tracks = slice_frames(tracks, slice_factor)

    train_config = TrainConfig(cell_sizes=tuple(cells), kind=mode, box_mode=box_mode,
                               fusion=fusion, smoothing_sigma=sigma)
    timings: dict = {}
    started = time.perf_counter()
    bundle = train(train_config, tracks, thresholds, timings=timings)
    total = time.perf_counter() - started
    save_bundle(bundle, out)
    if args.dump_observations:
        from .featurize import generate_observations
        for gran in bundle.granularities:
            table = generate_observations(tracks, gran.grid, gran.discretizer,
                                          bundle.kind, bundle.box_mode)
            dump = Path(f"{args.dump_observations}.{gran.grid.cell_size}.csv")
            with open(dump, "w", encoding="utf-8", newline="") as fh:
                table.write_csv(fh)
    echo = {"tracks": str(tracks_path), "format": fmt, "cells": list(cells),
            "mode": mode, "slice": slice_factor, "no_filter": no_filter,
            "box_mode": box_mode, "fusion": fusion, "smoothing_sigma": sigma,
            "thresholds": {"person": thresholds.person_threshold,
                           "other": thresholds.other_threshold},
            "out": str(out)}
    timings["total_seconds"] = total
    _write_manifest(out, "train", echo, timings)
    fit_summary = ", ".join(f"{cs}px: {sec:.4f}s"
                            for cs, sec in timings.get("fit_seconds", {}).items())
    print(f"trained {len(bundle.granularities)} granularities on "
          f"{len(tracks.detections)} detections ({fit_summary})")
    return EXIT_OK


def _cmd_score(args) -> int:
    config = _load_config_file(args.config)
    model_path = _resolve(args, config, "model", None)
    tracks_path = _resolve(args, config, "tracks", None)
    if not model_path or not tracks_path:
        raise ScriptError("--model and --tracks are required")
    fmt = _resolve(args, config, "format", "jsonl")
    out = Path(_resolve(args, config, "out", "scores.jsonl"))
    threads = int(_resolve(args, config, "threads", os.cpu_count() or 1))

    bundle = load_bundle(model_path)
    tracks = _prepared_tracks(tracks_path, fmt, bundle.thresholds)
    started = time.perf_counter()
    scored, frames = score_frames(bundle, tracks, threads=threads)
    elapsed = time.perf_counter() - started
    write_scores(out, scored, frames)
    cells_queried = sum(len(cs) for s in scored for cs in s.per_cell.values())
    timings = {
        "score_seconds": elapsed,
        "per_cell_seconds_mean": elapsed / cells_queried if cells_queried else 0.0,
        "per_object_seconds_mean": elapsed / len(scored) if scored else 0.0,
        "per_frame_seconds_mean": elapsed / len(frames) if len(frames) else 0.0,
        "cells_queried": cells_queried,
        "objects": len(scored),
        "frames": len(frames),
    }
    echo = {"model": str(model_path), "tracks": str(tracks_path), "format": fmt,
            "threads": threads, "out": str(out)}
    _write_manifest(out, "score", echo, timings)
    print(f"scored {len(scored)} objects over {len(frames)} frames -> {out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    config = _load_config_file(args.config)
    scores_path = _resolve(args, config, "scores", None)
    gt_path = _resolve(args, config, "gt", None)
    if not scores_path or not gt_path:
        raise ScriptError("--scores and --gt are required")
    report_path = Path(_resolve(args, config, "report", "report.json"))
    started = time.perf_counter()
    scored, frames = read_scores(scores_path)
    gt = parse_ground_truth(gt_path)
    report = evaluate(scored, frames, gt)
    elapsed = time.perf_counter() - started
    echo = {"scores": str(scores_path), "gt": str(gt_path), "report": str(report_path)}
    payload = dict(report_to_dict(report), config=echo)
    report_path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    _write_manifest(report_path, "eval", echo, {"eval_seconds": elapsed})
    fmt_value = lambda v: "undefined" if v is None else f"{v:.6f}"
    print("frame_auc={} rbdc={} tbdc={} mean_rt={}".format(
        *(fmt_value(payload[k]) for k in ("frame_auc", "rbdc", "tbdc", "mean_rt"))))
    return EXIT_OK


def _cmd_explain(args) -> int:
    config = _load_config_file(args.config)
    model_path = _resolve(args, config, "model", None)
    tracks_path = _resolve(args, config, "tracks", None)
    if not model_path or not tracks_path:
        raise ScriptError("--model and --tracks are required")
    frame = int(_resolve(args, config, "frame", 0))
    track_id = int(_resolve(args, config, "track_id", -1))
    out = Path(_resolve(args, config, "out", "explanation.json"))
    granularity = _resolve(args, config, "granularity", "finest")

    bundle = load_bundle(model_path)
    tracks = _prepared_tracks(tracks_path, "jsonl", bundle.thresholds)
    target = None
    prev = None
    for det in tracks.detections:
        if det.track_id == track_id:
            if det.frame_index == frame:
                target = det
                break
            prev = det
    if target is None:
        raise TrackFileError(f"no detection with track id {track_id} in frame {frame}")
    if prev is not None:
        from .featurize import box_center
        scored = score_object(bundle, target, box_center(prev.box),
                              target.frame_index - prev.frame_index)
    else:
        scored = score_object(bundle, target)
    explanation = explain_object(bundle, scored)
    if granularity != "all":
        wanted = (min(bundle.cell_sizes) if granularity == "finest"
                  else int(granularity))
        explanation = type(explanation)(
            explanation.frame, explanation.track_id, explanation.class_id,
            explanation.box, explanation.reason,
            tuple(c for c in explanation.cells if c.cell_size == wanted),
            explanation.per_cell, explanation.per_granularity,
            explanation.fused, explanation.fusion)
    write_explanation(explanation, out)
    echo = {"model": str(model_path), "tracks": str(tracks_path), "frame": frame,
            "track_id": track_id, "granularity": str(granularity), "out": str(out)}
    _write_manifest(out, "explain", echo, {})
    print(f"object {track_id}@{frame}: score={scored.fused:.6f} "
          f"reason={scored.reason or 'none'} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridvad",
        description="Video anomaly detection over tracked bounding boxes "
                    "with a discrete Bayesian network.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--script", help="scene script JSON (overrides --preset)")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in scene")
    p.add_argument("--seed", type=int, help="override the script seed")
    p.add_argument("--out-dir", dest="out_dir", help="output directory (default data/)")
    p.add_argument("--config", help="JSON config file; flags take precedence")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="fit a model bundle from tracker output")
    p.add_argument("--tracks", help="training tracks file")
    p.add_argument("--format", choices=("jsonl", "mot"), help="tracks format")
    p.add_argument("--cells", type=_cell_sizes,
                   help="comma-separated cell sizes, e.g. 20,40")
    p.add_argument("--mode", choices=("spatial", "spatiotemporal"))
    p.add_argument("--slice", type=_positive_int, help="keep every k-th training frame")
    p.add_argument("--no-filter", dest="no_filter", action="store_const", const=True,
                   help="disable dynamic confidence filtering")
    p.add_argument("--box-mode", dest="box_mode", choices=("bottom", "whole"))
    p.add_argument("--fusion", choices=("mean", "min"))
    p.add_argument("--smoothing-sigma", dest="smoothing_sigma", type=float)
    p.add_argument("--out", help="bundle output path")
    p.add_argument("--dump-observations", dest="dump_observations",
                   help="also dump per-granularity observation CSVs to this prefix")
    p.add_argument("--config", help="JSON config file; flags take precedence")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("score", help="score a test stream with a trained bundle")
    p.add_argument("--model", help="model bundle path")
    p.add_argument("--tracks", help="test tracks file")
    p.add_argument("--format", choices=("jsonl", "mot"))
    p.add_argument("--out", help="scores output path")
    p.add_argument("--threads", type=_positive_int, help="worker threads")
    p.add_argument("--config", help="JSON config file; flags take precedence")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("eval", help="compute frame AUC, RBDC and TBDC")
    p.add_argument("--scores", help="scores.jsonl from the score subcommand")
    p.add_argument("--gt", help="ground-truth jsonl")
    p.add_argument("--report", help="report output path")
    p.add_argument("--config", help="JSON config file; flags take precedence")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("explain", help="posterior breakdowns for one object")
    p.add_argument("--model", help="model bundle path")
    p.add_argument("--tracks", help="test tracks file")
    p.add_argument("--frame", type=_positive_int, help="frame index of the object")
    p.add_argument("--track-id", dest="track_id", type=int, help="track id of the object")
    p.add_argument("--granularity", help='"finest" (default), "all" or a cell size')
    p.add_argument("--out", help="explanation output path")
    p.add_argument("--config", help="JSON config file; flags take precedence")
    p.set_defaults(func=_cmd_explain)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TrackFileError, bn.FitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (GridConfigError, ScriptError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
