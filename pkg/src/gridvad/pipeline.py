"""Training and scoring orchestration.

``train`` fits one network per grid granularity and wraps everything into
a serializable :class:`ModelBundle`. ``score_frames`` queries the bundle
for every test detection, fuses granularities, reduces objects to frame
scores and smooths them over time. Objects of classes never seen in
training score 0.0, as do objects whose attribute combination has zero
probability under every network.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import bn
from .featurize import (
    ASPECT_CATEGORIES,
    BOX_MODE_BOTTOM,
    BOX_MODES,
    DEFAULT_IDLE_SPEED,
    DEFAULT_SQUARE_TOLERANCE,
    DIRECTION_CATEGORIES,
    INTERSECTION_CATEGORIES,
    SIZE_CATEGORIES,
    SPATIOTEMPORAL,
    MODEL_KINDS,
    VELOCITY_CATEGORIES,
    ClassStats,
    DiscretizationModel,
    GridSpec,
    ObservationTable,
    UnseenClassError,
    aspect_category,
    bottom_edge_cells,
    box_area,
    box_center,
    build_grid,
    direction_category,
    fit_discretizer,
    generate_observations,
    intersection_category,
    motion,
    size_category,
    velocity_category,
)
from .ingest import ConfidenceThresholds, TrackSet, TrackedDetection

BUNDLE_FORMAT = "gridvad-bundle"
BUNDLE_VERSION = 1

FUSION_MEAN = "mean"
FUSION_MIN = "min"
FUSION_RULES = (FUSION_MEAN, FUSION_MIN)

REASON_UNSEEN_CLASS = "unseen-class"
REASON_IMPOSSIBLE = "impossible-evidence"

_CODES = {
    "I": {label: i for i, label in enumerate(INTERSECTION_CATEGORIES)},
    "BS": {label: i for i, label in enumerate(SIZE_CATEGORIES)},
    "BAR": {label: i for i, label in enumerate(ASPECT_CATEGORIES)},
    "V": {label: i for i, label in enumerate(VELOCITY_CATEGORIES)},
    "D": {label: i for i, label in enumerate(DIRECTION_CATEGORIES)},
}


@dataclass(frozen=True)
class TrainConfig:
    cell_sizes: tuple[int, ...]
    kind: str = SPATIOTEMPORAL
    box_mode: str = BOX_MODE_BOTTOM
    fusion: str = FUSION_MEAN
    smoothing_sigma: float = 5.0
    square_tolerance: float = DEFAULT_SQUARE_TOLERANCE
    idle_speed: float = DEFAULT_IDLE_SPEED
    structure_edges: tuple[tuple[str, str], ...] | None = None

    def __post_init__(self):
        if not self.cell_sizes:
            raise ValueError("at least one cell size is required")
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.box_mode not in BOX_MODES:
            raise ValueError(f"unknown box mode {self.box_mode!r}")
        if self.fusion not in FUSION_RULES:
            raise ValueError(f"unknown fusion rule {self.fusion!r}")
        if self.smoothing_sigma < 0:
            raise ValueError("smoothing sigma must be >= 0")


@dataclass(frozen=True)
class GranularityModel:
    grid: GridSpec
    discretizer: DiscretizationModel
    net: bn.BayesNet


@dataclass(frozen=True)
class ModelBundle:
    """Deployable artifact: per-granularity fitted networks plus shared settings."""

    kind: str
    resolution: tuple[int, int]
    class_ids: tuple[int, ...]
    granularities: tuple[GranularityModel, ...]
    fusion: str = FUSION_MEAN
    smoothing_sigma: float = 5.0
    box_mode: str = BOX_MODE_BOTTOM
    thresholds: ConfidenceThresholds = ConfidenceThresholds()

    @property
    def cell_sizes(self) -> tuple[int, ...]:
        return tuple(g.grid.cell_size for g in self.granularities)

    def class_index(self, class_id: int) -> int | None:
        try:
            return self.class_ids.index(class_id)
        except ValueError:
            return None

    def granularity(self, cell_size: int) -> GranularityModel:
        for g in self.granularities:
            if g.grid.cell_size == cell_size:
                return g
        raise KeyError(f"bundle has no granularity with cell size {cell_size}")


class CellScore(NamedTuple):
    cell: int
    probability: float
    impossible: bool


@dataclass(frozen=True)
class ScoredObject:
    frame: int
    track_id: int
    class_id: int
    box: tuple[float, float, float, float]
    per_granularity: dict[int, float]
    fused: float
    reason: str | None = None
    prev_center: tuple[float, float] | None = None
    frame_gap: int | None = None
    per_cell: dict[int, tuple[CellScore, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class FrameScores:
    """Per-frame raw minima and their Gaussian-smoothed version, both in [0, 1]."""

    raw: np.ndarray
    smoothed: np.ndarray

    def __len__(self) -> int:
        return len(self.raw)


def observation_columns(table: ObservationTable, class_ids: Sequence[int]) -> dict[str, np.ndarray]:
    """Integer-coded columns for network fitting (class ids become indices)."""
    index = {cid: i for i, cid in enumerate(class_ids)}
    rows = table.rows
    n = len(rows)
    cols = {
        "G": np.fromiter((o.cell - 1 for o in rows), np.int64, n),
        "C": np.fromiter((index[o.class_id] for o in rows), np.int64, n),
        "I": np.fromiter((_CODES["I"][o.intersection] for o in rows), np.int64, n),
        "BS": np.fromiter((_CODES["BS"][o.box_size] for o in rows), np.int64, n),
        "BAR": np.fromiter((_CODES["BAR"][o.aspect] for o in rows), np.int64, n),
    }
    if table.kind == SPATIOTEMPORAL:
        cols["V"] = np.fromiter((_CODES["V"][o.velocity] for o in rows), np.int64, n)
        cols["D"] = np.fromiter((_CODES["D"][o.direction] for o in rows), np.int64, n)
    return cols


def train(config: TrainConfig, train_tracks: TrackSet,
          thresholds: ConfidenceThresholds | None = None,
          timings: dict | None = None) -> ModelBundle:
    """Fit discretizer, observation tables and one network per cell size.

    ``train_tracks`` must already be confidence-filtered and frame-sliced;
    the thresholds used for filtering ride along in the bundle so scoring
    can apply the identical cut-offs to test streams. Passing a dict as
    ``timings`` records per-granularity fit seconds and observation counts.
    """
    if not train_tracks.detections:
        raise bn.FitError("cannot train on an empty track set")
    discretizer = fit_discretizer(train_tracks,
                                  square_tolerance=config.square_tolerance,
                                  idle_speed=config.idle_speed)
    class_ids = tuple(sorted(discretizer.per_class))
    fit_seconds: dict[str, float] = {}
    observations: dict[str, int] = {}
    granularities = []
    for cell_size in sorted(set(config.cell_sizes)):
        grid = build_grid(train_tracks.resolution, cell_size)
        table = generate_observations(train_tracks, grid, discretizer,
                                      config.kind, config.box_mode)
        dag = bn.build_structure(config.kind,
                                 frame_count=train_tracks.frame_count,
                                 cell_count=grid.cell_count,
                                 class_count=len(class_ids),
                                 edges=config.structure_edges)
        # F never appears as evidence in the anomaly query, so the fitted
        # network drops it and carries P(G) as the marginal cell frequency.
        started = time.perf_counter()
        net = bn.fit_mle(dag.without_node("F"), observation_columns(table, class_ids))
        fit_seconds[str(cell_size)] = time.perf_counter() - started
        observations[str(cell_size)] = len(table.rows)
        granularities.append(GranularityModel(grid, discretizer, net))
    if timings is not None:
        timings["fit_seconds"] = fit_seconds
        timings["observations"] = observations
    return ModelBundle(config.kind, train_tracks.resolution, class_ids,
                       tuple(granularities), config.fusion, config.smoothing_sigma,
                       config.box_mode, thresholds or ConfidenceThresholds())


def object_evidence(bundle: ModelBundle, gran: GranularityModel, class_id: int,
                    box: tuple[float, float, float, float],
                    prev_center: tuple[float, float] | None,
                    frame_gap: int | None):
    """Per bottom-edge cell evidence for one detection at one granularity.

    Returns a list of (cell, evidence codes, label assignment) or None when
    the class has no training statistics. Scoring and explanation share
    this path so their posteriors are bit-identical.
    """
    disc = gran.discretizer
    if not disc.knows(class_id):
        return None
    bs = size_category(box_area(box), class_id, disc)
    bar = aspect_category(box, disc.square_tolerance)
    labels = {"C": class_id, "BS": bs, "BAR": bar}
    codes = {"BS": _CODES["BS"][bs], "BAR": _CODES["BAR"][bar]}
    if bundle.kind == SPATIOTEMPORAL:
        if prev_center is None:
            v, d = "idle", "none"
        else:
            speed, angle = motion(prev_center, box_center(box), frame_gap)
            v = velocity_category(speed, class_id, disc)
            d = "none" if v == "idle" else direction_category(angle)
        labels["V"], labels["D"] = v, d
        codes["V"], codes["D"] = _CODES["V"][v], _CODES["D"][d]
    out = []
    for cell in bottom_edge_cells(box, gran.grid):
        i_label = intersection_category(box, cell, gran.grid)
        evidence = dict(codes)
        evidence["G"] = cell - 1
        evidence["I"] = _CODES["I"][i_label]
        out.append((cell, evidence, dict(labels, I=i_label)))
    return out


def fuse(values: Sequence[float], rule: str) -> float:
    if rule == FUSION_MEAN:
        return sum(values) / len(values)
    if rule == FUSION_MIN:
        return min(values)
    raise ValueError(f"unknown fusion rule {rule!r}")


def score_object(bundle: ModelBundle, det: TrackedDetection,
                 prev_center: tuple[float, float] | None = None,
                 frame_gap: int | None = None) -> ScoredObject:
    """Probability of the detection's class given its attributes.

    Per granularity the score is the mean of P(C = class | evidence) over
    the bottom-edge cells; granularities are then fused. A class unseen in
    training or evidence impossible under every network yields 0.0 with a
    matching reason code.
    """
    base = dict(frame=det.frame_index, track_id=det.track_id, class_id=det.class_id,
                box=det.box, prev_center=prev_center, frame_gap=frame_gap)
    if bundle.class_index(det.class_id) is None:
        zeros = {g.grid.cell_size: 0.0 for g in bundle.granularities}
        return ScoredObject(per_granularity=zeros, fused=0.0,
                            reason=REASON_UNSEEN_CLASS, **base)
    class_index = bundle.class_index(det.class_id)
    per_granularity: dict[int, float] = {}
    per_cell: dict[int, tuple[CellScore, ...]] = {}
    all_impossible = True
    for gran in bundle.granularities:
        items = object_evidence(bundle, gran, det.class_id, det.box, prev_center, frame_gap)
        cell_scores = []
        for cell, evidence, _labels in items:
            posterior = bn.class_cpt_query(gran.net, evidence)
            if posterior.impossible:
                probability = 0.0
            else:
                probability = float(posterior.values[class_index])
                all_impossible = False
            cell_scores.append(CellScore(cell, probability, posterior.impossible))
        per_cell[gran.grid.cell_size] = tuple(cell_scores)
        per_granularity[gran.grid.cell_size] = (
            sum(c.probability for c in cell_scores) / len(cell_scores))
    fused = fuse(list(per_granularity.values()), bundle.fusion)
    reason = REASON_IMPOSSIBLE if all_impossible else None
    return ScoredObject(per_granularity=per_granularity, fused=fused,
                        reason=reason, per_cell=per_cell, **base)


def gaussian_smooth(values: np.ndarray, sigma: float) -> np.ndarray:
    """1-D Gaussian smoothing with radius 3*sigma and edge-replicate padding."""
    values = np.asarray(values, dtype=float)
    if sigma <= 0 or values.size == 0:
        return values.copy()
    radius = int(math.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=float)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()
    padded = np.pad(values, radius, mode="edge")
    return np.convolve(padded, kernel, mode="valid")


def score_frames(bundle: ModelBundle, test: TrackSet,
                 threads: int = 1) -> tuple[list[ScoredObject], FrameScores]:
    """Score every detection and reduce to per-frame anomaly scores.

    The raw frame score is the minimum fused probability over the frame's
    objects (1.0 for empty frames). Velocity evidence uses each track's
    previous detection in the test stream, resolved in a sequential
    pre-pass so scoring itself can run on multiple threads with a
    deterministic, frame-ordered merge.
    """
    jobs = []
    last: dict[int, tuple[int, tuple[float, float]]] = {}
    for det in test.detections:
        prev = last.get(det.track_id)
        if prev is None:
            jobs.append((det, None, None))
        else:
            jobs.append((det, prev[1], det.frame_index - prev[0]))
        last[det.track_id] = (det.frame_index, box_center(det.box))

    def run(job):
        det, prev_center, gap = job
        return score_object(bundle, det, prev_center, gap)

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scored = list(pool.map(run, jobs, chunksize=64))
    else:
        scored = [run(job) for job in jobs]
    raw = np.ones(test.frame_count, dtype=float)
    for s in scored:
        raw[s.frame - 1] = min(raw[s.frame - 1], s.fused)
    smoothed = gaussian_smooth(raw, bundle.smoothing_sigma)
    return scored, FrameScores(raw, smoothed)


# ---------------------------------------------------------------------------
# bundle serialization


def _stats_to_dict(stats: ClassStats) -> dict:
    return {"size_mean": stats.size_mean, "size_std": stats.size_std,
            "speed_mean": stats.speed_mean, "speed_std": stats.speed_std}


def bundle_to_dict(bundle: ModelBundle) -> dict:
    grans = []
    for g in bundle.granularities:
        disc = g.discretizer
        grans.append({
            "cell_size": g.grid.cell_size,
            "grid": {"cell_size": g.grid.cell_size, "cols": g.grid.cols,
                     "rows": g.grid.rows, "resolution": list(g.grid.resolution)},
            "discretizer": {
                "square_tolerance": disc.square_tolerance,
                "idle_speed": disc.idle_speed,
                "classes": {str(cid): _stats_to_dict(disc.per_class[cid])
                            for cid in sorted(disc.per_class)},
            },
            "net": {
                "nodes": [[n, c] for n, c in g.net.dag.nodes],
                "edges": [[a, b] for a, b in g.net.dag.edges],
                "cpts": [{
                    "child": cpt.child,
                    "parents": list(cpt.parents),
                    "table": cpt.table.tolist(),
                    "observed": cpt.observed.tolist(),
                } for cpt in g.net.cpts],
            },
        })
    return {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "kind": bundle.kind,
        "resolution": list(bundle.resolution),
        "class_ids": list(bundle.class_ids),
        "fusion": bundle.fusion,
        "smoothing_sigma": bundle.smoothing_sigma,
        "box_mode": bundle.box_mode,
        "thresholds": {"person": bundle.thresholds.person_threshold,
                       "other": bundle.thresholds.other_threshold},
        "granularities": grans,
    }


def bundle_from_dict(payload: dict) -> ModelBundle:
    if payload.get("format") != BUNDLE_FORMAT:
        raise ValueError("not a gridvad model bundle")
    if payload.get("version") != BUNDLE_VERSION:
        raise ValueError(f"unsupported bundle version {payload.get('version')}")
    granularities = []
    for g in payload["granularities"]:
        grid = GridSpec(int(g["grid"]["cell_size"]), int(g["grid"]["cols"]),
                        int(g["grid"]["rows"]), tuple(g["grid"]["resolution"]))
        disc_payload = g["discretizer"]
        per_class = {int(cid): ClassStats(**stats)
                     for cid, stats in disc_payload["classes"].items()}
        disc = DiscretizationModel(per_class, disc_payload["square_tolerance"],
                                   disc_payload["idle_speed"])
        net_payload = g["net"]
        dag = bn.Dag(tuple((n, int(c)) for n, c in net_payload["nodes"]),
                     tuple((a, b) for a, b in net_payload["edges"]))
        cpts = []
        for c in net_payload["cpts"]:
            parents = tuple(c["parents"])
            cpts.append(bn.Cpt(c["child"], parents,
                               tuple(dag.cardinality(p) for p in parents),
                               np.asarray(c["table"], dtype=float),
                               np.asarray(c["observed"], dtype=bool)))
        granularities.append(GranularityModel(grid, disc, bn.BayesNet(dag, tuple(cpts))))
    thresholds = ConfidenceThresholds(payload["thresholds"]["person"],
                                      payload["thresholds"]["other"])
    return ModelBundle(payload["kind"], tuple(payload["resolution"]),
                       tuple(int(c) for c in payload["class_ids"]),
                       tuple(granularities), payload["fusion"],
                       payload["smoothing_sigma"], payload["box_mode"], thresholds)


def save_bundle(bundle: ModelBundle, path) -> None:
    Path(path).write_text(json.dumps(bundle_to_dict(bundle)), encoding="utf-8")


def load_bundle(path) -> ModelBundle:
    return bundle_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# scores.jsonl


def write_scores(path, scored: Sequence[ScoredObject], frame_scores: FrameScores) -> None:
    """Per-object rows then per-frame rows, in the documented jsonl schema."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in scored:
            fh.write(json.dumps({
                "frame": s.frame, "id": s.track_id, "class": s.class_id,
                "box": list(s.box), "score": s.fused,
                "per_granularity": {str(cs): p for cs, p in s.per_granularity.items()},
                "reason": s.reason,
            }) + "\n")
        for i in range(len(frame_scores)):
            fh.write(json.dumps({
                "frame": i + 1,
                "raw": float(frame_scores.raw[i]),
                "smoothed": float(frame_scores.smoothed[i]),
            }) + "\n")


def read_scores(path) -> tuple[list[ScoredObject], FrameScores]:
    objects: list[ScoredObject] = []
    raw: dict[int, float] = {}
    smoothed: dict[int, float] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            if "raw" in row:
                raw[int(row["frame"])] = float(row["raw"])
                smoothed[int(row["frame"])] = float(row["smoothed"])
            else:
                objects.append(ScoredObject(
                    frame=int(row["frame"]), track_id=int(row["id"]),
                    class_id=int(row["class"]), box=tuple(row["box"]),
                    per_granularity={int(k): float(v)
                                     for k, v in row["per_granularity"].items()},
                    fused=float(row["score"]), reason=row.get("reason")))
    if raw:
        n = max(raw)
        raw_arr = np.array([raw[i + 1] for i in range(n)])
        smoothed_arr = np.array([smoothed[i + 1] for i in range(n)])
    else:
        raw_arr = smoothed_arr = np.zeros(0)
    return objects, FrameScores(raw_arr, smoothed_arr)
