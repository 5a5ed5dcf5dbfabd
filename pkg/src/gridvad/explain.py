"""Per-cell posterior breakdowns that justify an anomaly score.

For every attribute of a scored object, the fitted network is queried
with the cell index and all remaining attributes as hard evidence. The
resulting distributions show which attribute values were plausible at
that location and where the observed value ranks among them, in the same
vocabulary the model was trained on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import bn
from .featurize import (
    ASPECT_CATEGORIES,
    DIRECTION_CATEGORIES,
    INTERSECTION_CATEGORIES,
    SIZE_CATEGORIES,
    SPATIOTEMPORAL,
    VELOCITY_CATEGORIES,
    aspect_category,
    bottom_edge_cells,
    box_center,
    direction_category,
    intersection_category,
    motion,
)
from .pipeline import (
    REASON_UNSEEN_CLASS,
    CellScore,
    GranularityModel,
    ModelBundle,
    ScoredObject,
    _CODES,
    object_evidence,
)

_CATEGORY_LABELS = {
    "I": INTERSECTION_CATEGORIES,
    "BS": SIZE_CATEGORIES,
    "BAR": ASPECT_CATEGORIES,
    "V": VELOCITY_CATEGORIES,
    "D": DIRECTION_CATEGORIES,
}


@dataclass(frozen=True)
class RvBreakdown:
    """Posterior over one attribute given the cell and all other attributes."""

    labels: tuple
    probabilities: tuple[float, ...]
    observed: object
    observed_probability: float
    rank: int
    impossible: bool

    def distribution(self) -> dict:
        return dict(zip(self.labels, self.probabilities))


@dataclass(frozen=True)
class CellExplanation:
    cell_size: int
    cell: int
    assignment: dict
    breakdowns: dict[str, RvBreakdown]
    class_score: float


@dataclass(frozen=True)
class ObjectExplanation:
    frame: int
    track_id: int
    class_id: int
    box: tuple
    reason: str | None
    cells: tuple[CellExplanation, ...]
    per_cell: dict[int, tuple[CellScore, ...]]
    per_granularity: dict[int, float]
    fused: float
    fusion: str


def _rv_names(kind: str) -> tuple[str, ...]:
    if kind == SPATIOTEMPORAL:
        return ("C", "I", "BS", "BAR", "V", "D")
    return ("C", "I", "BS", "BAR")


def _labels_for(rv: str, bundle: ModelBundle):
    if rv == "C":
        return bundle.class_ids
    return _CATEGORY_LABELS[rv]


def _breakdown(net, rv: str, evidence: Mapping[str, int], labels,
               observed_label, observed_index: int | None) -> RvBreakdown:
    posterior = bn.eliminate(net, rv, evidence)
    values = posterior.values
    if observed_index is None:
        probability = 0.0
        rank = len(labels) + 1
    else:
        probability = float(values[observed_index])
        rank = 1 + int(np.sum(values > values[observed_index]))
    return RvBreakdown(tuple(labels), tuple(float(v) for v in values),
                       observed_label, probability, rank, posterior.impossible)


def explain_cell(bundle: ModelBundle, cell_size: int, cell: int,
                 assignment: Mapping[str, object]) -> CellExplanation:
    """Breakdown of every attribute's posterior at one grid cell.

    ``assignment`` holds the observed values: "C" as a class id and the
    categorical attributes as labels, complete for the bundle's model kind.
    For each attribute X the posterior P(X | G = cell, rest of assignment)
    is computed; its value at the observed class for X = C is exactly the
    per-cell score the scoring pipeline used.
    """
    gran = bundle.granularity(cell_size)
    rvs = _rv_names(bundle.kind)
    missing = [rv for rv in rvs if rv not in assignment]
    if missing:
        raise ValueError(f"assignment incomplete for {bundle.kind} model: missing {missing}")
    if not 1 <= cell <= gran.grid.cell_count:
        raise ValueError(f"cell {cell} outside grid with {gran.grid.cell_count} cells")
    codes: dict[str, int] = {"G": cell - 1}
    observed_index: dict[str, int | None] = {}
    for rv in rvs:
        value = assignment[rv]
        if rv == "C":
            idx = bundle.class_index(int(value))
            if idx is None:
                raise ValueError(f"class {value} not in the fitted network; "
                                 "unseen classes have no cell explanation")
            codes["C"] = idx
            observed_index["C"] = idx
        else:
            labels = _CATEGORY_LABELS[rv]
            if value not in labels:
                raise ValueError(f"{value!r} is not a {rv} category")
            codes[rv] = _CODES[rv][value]
            observed_index[rv] = _CODES[rv][value]
    breakdowns = {}
    for rv in rvs:
        evidence = {k: v for k, v in codes.items() if k != rv}
        breakdowns[rv] = _breakdown(gran.net, rv, evidence, _labels_for(rv, bundle),
                                    assignment[rv], observed_index[rv])
    # impossible evidence shows a flagged uniform distribution, but the
    # score itself mirrors the pipeline's 0.0 for such cells
    class_score = 0.0 if breakdowns["C"].impossible \
        else breakdowns["C"].observed_probability
    return CellExplanation(cell_size, cell, dict(assignment), breakdowns, class_score)


def _unseen_cell_explanation(bundle: ModelBundle, gran: GranularityModel,
                             cell: int, evidence: dict[str, int],
                             labels: dict) -> CellExplanation:
    # The class posterior can still be shown from the class-independent
    # evidence; its support necessarily omits the unseen class.
    breakdown = _breakdown(gran.net, "C", evidence, bundle.class_ids,
                           labels["C"], None)
    return CellExplanation(gran.grid.cell_size, cell, dict(labels),
                           {"C": breakdown}, 0.0)


def explain_object(bundle: ModelBundle, scored: ScoredObject) -> ObjectExplanation:
    """One cell explanation per bottom-edge cell per granularity.

    The aggregation trace (per-cell scores, per-granularity means, fusion)
    is carried over from the scored object. For unseen classes only a
    reduced class posterior over the class-independent attributes is
    emitted, tagged with the unseen-class reason.
    """
    cells: list[CellExplanation] = []
    if scored.reason == REASON_UNSEEN_CLASS:
        for gran in bundle.granularities:
            bar = aspect_category(scored.box, gran.discretizer.square_tolerance)
            labels = {"C": scored.class_id, "BAR": bar}
            codes = {"BAR": _CODES["BAR"][bar]}
            if bundle.kind == SPATIOTEMPORAL:
                if scored.prev_center is None:
                    d = "none"
                else:
                    _, angle = motion(scored.prev_center, box_center(scored.box),
                                      scored.frame_gap)
                    d = direction_category(angle)
                labels["D"] = d
                codes["D"] = _CODES["D"][d]
            for cell in bottom_edge_cells(scored.box, gran.grid):
                i_label = intersection_category(scored.box, cell, gran.grid)
                evidence = dict(codes, G=cell - 1, I=_CODES["I"][i_label])
                cells.append(_unseen_cell_explanation(
                    bundle, gran, cell, evidence, dict(labels, I=i_label)))
    else:
        for gran in bundle.granularities:
            items = object_evidence(bundle, gran, scored.class_id, scored.box,
                                    scored.prev_center, scored.frame_gap)
            for cell, _evidence, labels in items:
                cells.append(explain_cell(bundle, gran.grid.cell_size, cell, labels))
    return ObjectExplanation(scored.frame, scored.track_id, scored.class_id,
                             scored.box, scored.reason, tuple(cells),
                             dict(scored.per_cell), dict(scored.per_granularity),
                             scored.fused, bundle.fusion)


# ---------------------------------------------------------------------------
# JSON output


def _breakdown_payload(rv: str, b: RvBreakdown) -> dict:
    return {
        "categories": [str(l) for l in b.labels],
        "probabilities": list(b.probabilities),
        "observed": str(b.observed),
        "observed_probability": b.observed_probability,
        "rank": b.rank,
        "impossible": b.impossible,
    }


def explanation_to_dict(explanation: ObjectExplanation) -> dict:
    return {
        "frame": explanation.frame,
        "track_id": explanation.track_id,
        "class_id": explanation.class_id,
        "box": list(explanation.box),
        "reason": explanation.reason,
        "fused": explanation.fused,
        "fusion": explanation.fusion,
        "per_granularity": {str(cs): p for cs, p in
                            sorted(explanation.per_granularity.items())},
        "per_cell": {str(cs): [{"cell": c.cell, "probability": c.probability,
                                "impossible": c.impossible} for c in cell_scores]
                     for cs, cell_scores in sorted(explanation.per_cell.items())},
        "cells": [{
            "cell_size": c.cell_size,
            "cell": c.cell,
            "assignment": {k: str(v) for k, v in c.assignment.items()},
            "class_score": c.class_score,
            "breakdowns": {rv: _breakdown_payload(rv, b)
                           for rv, b in c.breakdowns.items()},
        } for c in explanation.cells],
    }


def plot_data(explanation: ObjectExplanation) -> list[dict]:
    """Flat per-RV category/probability pairs for external charting."""
    rows = []
    for cell in explanation.cells:
        for rv, b in cell.breakdowns.items():
            rows.append({
                "cell_size": cell.cell_size,
                "cell": cell.cell,
                "rv": rv,
                "categories": [str(l) for l in b.labels],
                "probabilities": list(b.probabilities),
                "observed": str(b.observed),
            })
    return rows


def write_explanation(explanation: ObjectExplanation, path) -> Path:
    """Write explanation JSON plus the .plot.json sidecar; returns the main path."""
    path = Path(path)
    path.write_text(json.dumps(explanation_to_dict(explanation), indent=2),
                    encoding="utf-8")
    sidecar = path.with_suffix(".plot.json")
    sidecar.write_text(json.dumps(plot_data(explanation), indent=2), encoding="utf-8")
    return path
