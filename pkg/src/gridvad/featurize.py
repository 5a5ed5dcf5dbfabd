"""Grid decomposition, attribute discretization and observation tables.

The image is divided into a uniform grid of quadratic cells. Every tracked
bounding box is reduced to a handful of high-level attributes: which cells
its bottom edge touches, how much of each cell it covers, how big the box
is relative to its class, its aspect ratio, and (for spatio-temporal
models) how fast and in which compass direction it moves. Numeric
attributes are binned by their distance from the class-wise training mean
in multiples of the class-wise standard deviation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .ingest import Box, TrackSet

SPATIAL = "spatial"
SPATIOTEMPORAL = "spatiotemporal"
MODEL_KINDS = (SPATIAL, SPATIOTEMPORAL)

INTERSECTION_CATEGORIES = ("small", "1/4", "1/2", "3/4", "full")
SIZE_CATEGORIES = ("x-small", "small", "medium", "large", "x-large")
ASPECT_CATEGORIES = ("portrait", "landscape", "square")
VELOCITY_CATEGORIES = ("idle", "slow", "normal", "fast", "very fast",
                       "super fast", "lightning fast")
# Eight compass points plus "none" for idle objects and first appearances.
DIRECTION_CATEGORIES = ("N", "NE", "E", "SE", "S", "SW", "W", "NW", "none")

DEFAULT_SQUARE_TOLERANCE = 0.1
DEFAULT_IDLE_SPEED = 0.5  # px/frame

BOX_MODE_BOTTOM = "bottom"
BOX_MODE_WHOLE = "whole"
BOX_MODES = (BOX_MODE_BOTTOM, BOX_MODE_WHOLE)


class GridConfigError(ValueError):
    """Invalid grid configuration (e.g. cell size larger than the frame)."""


class UnseenClassError(KeyError):
    """Class without training statistics; such objects score 0.0 downstream."""

    def __init__(self, class_id: int):
        super().__init__(class_id)
        self.class_id = class_id

    def __str__(self):
        return f"class {self.class_id} was never observed during training"


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of quadratic cells, 1-based row-major cell indices."""

    cell_size: int
    cols: int
    rows: int
    resolution: tuple[int, int]

    @property
    def cell_count(self) -> int:
        return self.cols * self.rows

    def cell_rect(self, cell: int) -> Box:
        """Pixel rectangle of a cell, clipped to the frame."""
        if not 1 <= cell <= self.cell_count:
            raise ValueError(f"cell index {cell} outside 1..{self.cell_count}")
        row, col = divmod(cell - 1, self.cols)
        s = self.cell_size
        w, h = self.resolution
        return (col * s, row * s, min((col + 1) * s, w), min((row + 1) * s, h))


def build_grid(resolution: tuple[int, int], cell_size: int) -> GridSpec:
    w, h = resolution
    if cell_size < 1:
        raise GridConfigError(f"cell size {cell_size} must be >= 1")
    if cell_size > min(w, h):
        raise GridConfigError(
            f"cell size {cell_size} exceeds the frame ({w}x{h}); cells must fit the image")
    return GridSpec(int(cell_size), math.ceil(w / cell_size), math.ceil(h / cell_size),
                    (int(w), int(h)))


def box_area(box: Box) -> float:
    return (box[2] - box[0]) * (box[3] - box[1])


def box_center(box: Box) -> tuple[float, float]:
    return ((box[0] + box[2]) / 2.0, (box[1] + box[3]) / 2.0)


def bottom_edge_cells(box: Box, grid: GridSpec) -> list[int]:
    """Cells touched by the box's bottom edge, left to right.

    The box must already be clamped to the frame. An edge lying exactly on
    a cell boundary belongs to the upper/left cell, which is what the
    ceil(v / s) - 1 form yields for the end coordinates.
    """
    x1, _, x2, y2 = box
    s = grid.cell_size
    row = math.ceil(y2 / s) - 1
    first = math.floor(x1 / s)
    last = math.ceil(x2 / s) - 1
    base = row * grid.cols
    return [base + c + 1 for c in range(first, last + 1)]


def covered_cells(box: Box, grid: GridSpec) -> list[int]:
    """All cells intersecting the box (whole-box mode), row-major order."""
    x1, y1, x2, y2 = box
    s = grid.cell_size
    r0, r1 = math.floor(y1 / s), math.ceil(y2 / s) - 1
    c0, c1 = math.floor(x1 / s), math.ceil(x2 / s) - 1
    return [r * grid.cols + c + 1 for r in range(r0, r1 + 1) for c in range(c0, c1 + 1)]


def intersection_category(box: Box, cell: int, grid: GridSpec) -> str:
    """Bin the covered fraction of a cell: small, 1/4, 1/2, 3/4 or full."""
    cx1, cy1, cx2, cy2 = grid.cell_rect(cell)
    ix = min(box[2], cx2) - max(box[0], cx1)
    iy = min(box[3], cy2) - max(box[1], cy1)
    if ix <= 0 or iy <= 0:
        raise ValueError(f"box {box} does not intersect cell {cell}; caller bug")
    phi = (ix * iy) / ((cx2 - cx1) * (cy2 - cy1))
    if phi >= 1.0:
        return "full"
    if phi >= 0.75:
        return "3/4"
    if phi >= 0.5:
        return "1/2"
    if phi >= 0.25:
        return "1/4"
    return "small"


@dataclass(frozen=True)
class ClassStats:
    """Class-wise box-area and speed statistics (population mean/std)."""

    size_mean: float
    size_std: float
    speed_mean: float
    speed_std: float


@dataclass(frozen=True)
class DiscretizationModel:
    """Per-class statistics plus the global aspect tolerance and idle cutoff.

    Speed statistics are computed over non-idle speeds only; a class whose
    training tracks never move keeps (0, 0) so that any movement of a test
    object lands in the most extreme velocity bin.
    """

    per_class: dict[int, ClassStats]
    square_tolerance: float = DEFAULT_SQUARE_TOLERANCE
    idle_speed: float = DEFAULT_IDLE_SPEED

    def stats(self, class_id: int) -> ClassStats:
        try:
            return self.per_class[class_id]
        except KeyError:
            raise UnseenClassError(class_id) from None

    def knows(self, class_id: int) -> bool:
        return class_id in self.per_class


def motion(prev_center: tuple[float, float], cur_center: tuple[float, float],
           frame_gap: int) -> tuple[float, float | None]:
    """Speed in px/frame and heading angle in degrees.

    The angle uses east = 0 deg and north = 90 deg where north means
    decreasing pixel y (the image y axis points down). Zero displacement
    has no heading and returns None for the angle.
    """
    if frame_gap < 1:
        raise ValueError(f"frame gap {frame_gap} must be >= 1")
    dx = cur_center[0] - prev_center[0]
    dy = cur_center[1] - prev_center[1]
    speed = math.hypot(dx, dy) / frame_gap
    if dx == 0.0 and dy == 0.0:
        return 0.0, None
    return speed, math.degrees(math.atan2(-dy, dx))


def fit_discretizer(train: TrackSet, *,
                    square_tolerance: float = DEFAULT_SQUARE_TOLERANCE,
                    idle_speed: float = DEFAULT_IDLE_SPEED) -> DiscretizationModel:
    """Fit per-class area and speed statistics from a training track set.

    Speeds are center displacements between consecutive surviving
    detections of the same track, normalized by the true frame gap, so the
    statistics are invariant to frame slicing.
    """
    if not train.detections:
        raise ValueError("cannot fit a discretizer on an empty track set")
    areas: dict[int, list[float]] = {}
    speeds: dict[int, list[float]] = {}
    last: dict[int, tuple[int, tuple[float, float]]] = {}
    for det in train.detections:
        areas.setdefault(det.class_id, []).append(box_area(det.box))
        prev = last.get(det.track_id)
        if prev is not None:
            speed, _ = motion(prev[1], box_center(det.box), det.frame_index - prev[0])
            if speed > idle_speed:
                speeds.setdefault(det.class_id, []).append(speed)
        last[det.track_id] = (det.frame_index, box_center(det.box))
    per_class: dict[int, ClassStats] = {}
    for class_id in sorted(areas):
        a = np.asarray(areas[class_id], dtype=float)
        sp = np.asarray(speeds.get(class_id, ()), dtype=float)
        per_class[class_id] = ClassStats(
            size_mean=float(a.mean()),
            size_std=float(a.std()),
            speed_mean=float(sp.mean()) if sp.size else 0.0,
            speed_std=float(sp.std()) if sp.size else 0.0,
        )
    return DiscretizationModel(per_class, square_tolerance, idle_speed)


def size_category(area: float, class_id: int, model: DiscretizationModel) -> str:
    """Area binned at sigma multiples around the class mean.

    x-small < mu-2s <= small < mu-s <= medium <= mu+s < large <= mu+2s < x-large.
    With s = 0 the inner bins collapse: below the mean is x-small, the mean
    itself is medium, above is x-large.
    """
    st = model.stats(class_id)
    mu, sd = st.size_mean, st.size_std
    if area < mu - 2 * sd:
        return "x-small"
    if area < mu - sd:
        return "small"
    if area <= mu + sd:
        return "medium"
    if area <= mu + 2 * sd:
        return "large"
    return "x-large"


def velocity_category(speed: float, class_id: int, model: DiscretizationModel) -> str:
    """Speed binned at sigma multiples, with a dedicated idle bin below epsilon.

    The seven bins are right-skewed because speeds are non-negative and
    anomalous motion is fast: idle <= eps, slow < mu-s, normal <= mu+s,
    fast <= mu+2s, very fast <= mu+3s, super fast <= mu+4s, else lightning
    fast. Statistics come from non-idle training speeds.
    """
    st = model.stats(class_id)
    if speed <= model.idle_speed:
        return "idle"
    mu, sd = st.speed_mean, st.speed_std
    if speed < mu - sd:
        return "slow"
    if speed <= mu + sd:
        return "normal"
    if speed <= mu + 2 * sd:
        return "fast"
    if speed <= mu + 3 * sd:
        return "very fast"
    if speed <= mu + 4 * sd:
        return "super fast"
    return "lightning fast"


def aspect_category(box: Box, tolerance: float = DEFAULT_SQUARE_TOLERANCE) -> str:
    """Width/height ratio: square within [1/(1+tol), 1+tol], else portrait/landscape."""
    r = (box[2] - box[0]) / (box[3] - box[1])
    if r > 1.0 + tolerance:
        return "landscape"
    if r >= 1.0 / (1.0 + tolerance):
        return "square"
    return "portrait"


_COMPASS = ("E", "NE", "N", "NW", "W", "SW", "S", "SE")


def direction_category(angle: float | None) -> str:
    """45-degree-wide compass bins centered on the 8 compass points.

    None (no predecessor, or an idle object) maps to "none".
    """
    if angle is None:
        return "none"
    idx = int(math.floor(((angle % 360.0) + 22.5) / 45.0)) % 8
    return _COMPASS[idx]


@dataclass(frozen=True)
class Observation:
    """One training-table row: a full attribute assignment for a (box, cell) pair."""

    frame: int
    cell: int
    class_id: int
    intersection: str
    box_size: str
    aspect: str
    velocity: str | None = None
    direction: str | None = None


@dataclass(frozen=True)
class ObservationTable:
    kind: str
    rows: tuple[Observation, ...]

    def write_csv(self, stream) -> None:
        """Columnar debug export with header F,G,C,I,BS,BAR,V,D."""
        writer = csv.writer(stream)
        writer.writerow(("F", "G", "C", "I", "BS", "BAR", "V", "D"))
        for o in self.rows:
            writer.writerow((o.frame, o.cell, o.class_id, o.intersection, o.box_size,
                             o.aspect, o.velocity or "", o.direction or ""))


def generate_observations(tracks: TrackSet, grid: GridSpec, model: DiscretizationModel,
                          kind: str = SPATIOTEMPORAL,
                          box_mode: str = BOX_MODE_BOTTOM) -> ObservationTable:
    """Emit one observation per (detection, cell) intersection.

    Bottom mode visits only the cells under the box's bottom edge; whole
    mode visits every intersecting cell (the noisier ablation variant).
    Temporal attributes use the track's previous surviving detection; a
    track's first appearance is idle with direction "none".
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if box_mode not in BOX_MODES:
        raise ValueError(f"unknown box mode {box_mode!r}")
    temporal = kind == SPATIOTEMPORAL
    rows: list[Observation] = []
    last: dict[int, tuple[int, tuple[float, float]]] = {}
    for det in tracks.detections:
        bs = size_category(box_area(det.box), det.class_id, model)
        bar = aspect_category(det.box, model.square_tolerance)
        v = d = None
        if temporal:
            prev = last.get(det.track_id)
            if prev is None:
                v, d = "idle", "none"
            else:
                speed, angle = motion(prev[1], box_center(det.box), det.frame_index - prev[0])
                v = velocity_category(speed, det.class_id, model)
                d = "none" if v == "idle" else direction_category(angle)
            last[det.track_id] = (det.frame_index, box_center(det.box))
        cells = (bottom_edge_cells(det.box, grid) if box_mode == BOX_MODE_BOTTOM
                 else covered_cells(det.box, grid))
        for cell in cells:
            rows.append(Observation(det.frame_index, cell, det.class_id,
                                    intersection_category(det.box, cell, grid),
                                    bs, bar, v, d))
    return ObservationTable(kind, tuple(rows))
