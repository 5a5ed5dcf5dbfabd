"""Discrete Bayesian network engine.

A network is a DAG over finite random variables plus one conditional
probability table (CPT) per node. Fitting is plain maximum likelihood:
P(child = x | parents = pi) = count(x, pi) / count(pi), with parent
configurations never seen in training flagged and filled uniformly.

Posterior queries run exact variable elimination: reduce every CPT factor
by the evidence, repeatedly multiply out and sum over hidden variables in
min-degree order, and normalize what remains over the query variable.
``joint_brute_force`` enumerates the full joint instead and exists purely
as an independent oracle for the elimination path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

ROW_SUM_TOL = 1e-9

# Detector network layout. F (frame) roots the conceptual graph; G is the
# grid cell, C the object class, I the cell-intersection category, BS the
# box size, BAR the aspect ratio, V the velocity and D the direction bin.
NODE_ORDER = ("F", "G", "C", "I", "BS", "BAR", "V", "D")
FIXED_CARDINALITIES = {"I": 5, "BS": 5, "BAR": 3, "V": 7, "D": 9}
SPATIAL_EDGES = (
    ("F", "G"),
    ("G", "BS"),
    ("G", "I"),
    ("C", "BS"),
    ("C", "BAR"),
    ("BS", "I"),
    ("BAR", "I"),
)
TEMPORAL_EDGES = (("C", "V"), ("G", "V"), ("C", "D"))


class FitError(ValueError):
    """CPT fitting is impossible (empty table, missing columns, bad codes)."""


@dataclass(frozen=True)
class Dag:
    """Directed acyclic graph over named finite variables.

    ``nodes`` is an ordered tuple of (name, cardinality); the declaration
    order fixes parent ordering and all tie-breaking downstream, which
    keeps fitting and inference bit-deterministic.
    """

    nodes: tuple[tuple[str, int], ...]
    edges: tuple[tuple[str, str], ...]

    def __post_init__(self):
        names = [n for n, _ in self.nodes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate node names")
        for name, card in self.nodes:
            if card < 1:
                raise ValueError(f"node {name} has non-positive cardinality {card}")
        declared = set(names)
        seen_pairs: set[frozenset[str]] = set()
        for parent, child in self.edges:
            if parent not in declared or child not in declared:
                raise ValueError(f"edge ({parent}, {child}) references undeclared node")
            if parent == child:
                raise ValueError(f"self loop on {parent}")
            pair = frozenset((parent, child))
            if pair in seen_pairs:
                raise ValueError(f"nodes {parent} and {child} connected by more than one edge")
            seen_pairs.add(pair)
        if self._has_cycle():
            raise ValueError("graph contains a cycle")

    def _has_cycle(self) -> bool:
        indeg = {n: 0 for n, _ in self.nodes}
        out: dict[str, list[str]] = {n: [] for n, _ in self.nodes}
        for parent, child in self.edges:
            indeg[child] += 1
            out[parent].append(child)
        queue = [n for n, d in indeg.items() if d == 0]
        visited = 0
        while queue:
            n = queue.pop()
            visited += 1
            for ch in out[n]:
                indeg[ch] -= 1
                if indeg[ch] == 0:
                    queue.append(ch)
        return visited != len(self.nodes)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.nodes)

    def cardinality(self, name: str) -> int:
        for n, card in self.nodes:
            if n == name:
                return card
        raise KeyError(name)

    def cardinalities(self) -> dict[str, int]:
        return dict(self.nodes)

    def parents(self, name: str) -> tuple[str, ...]:
        ps = {p for p, c in self.edges if c == name}
        return tuple(n for n, _ in self.nodes if n in ps)

    def without_node(self, name: str) -> "Dag":
        """Drop a node and its incident edges (used to marginalize the frame root)."""
        if name not in self.names:
            raise KeyError(name)
        return Dag(tuple((n, c) for n, c in self.nodes if n != name),
                   tuple(e for e in self.edges if name not in e))


def build_structure(kind: str, *, frame_count: int, cell_count: int, class_count: int,
                    edges: Sequence[tuple[str, str]] | None = None) -> Dag:
    """Detector DAG for the given model kind.

    The spatial graph has 6 nodes and 7 edges; the spatio-temporal one adds
    V and D plus edges C->V, G->V and C->D. ``edges`` overrides the edge set
    for structure experiments while keeping the node layout.
    """
    if kind not in ("spatial", "spatiotemporal"):
        raise ValueError(f"unknown model kind {kind!r}")
    cards = {"F": frame_count, "G": cell_count, "C": class_count, **FIXED_CARDINALITIES}
    if kind == "spatial":
        names = NODE_ORDER[:6]
        edge_set = SPATIAL_EDGES
    else:
        names = NODE_ORDER
        edge_set = SPATIAL_EDGES + TEMPORAL_EDGES
    if edges is not None:
        edge_set = tuple((str(a), str(b)) for a, b in edges)
    return Dag(tuple((n, cards[n]) for n in names), edge_set)


@dataclass(frozen=True)
class Cpt:
    """P(child | parents) as a dense (parent configurations x child values) table.

    Parent configurations are mixed-radix row indices with the last parent
    varying fastest. ``observed`` marks rows backed by training counts;
    unobserved rows hold the uniform distribution.
    """

    child: str
    parents: tuple[str, ...]
    parent_cards: tuple[int, ...]
    table: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        n_configs = int(np.prod(self.parent_cards)) if self.parents else 1
        if self.table.shape[0] != n_configs or self.table.ndim != 2:
            raise ValueError(f"CPT for {self.child} has shape {self.table.shape}, "
                             f"expected ({n_configs}, cardinality)")
        if self.observed.shape != (n_configs,):
            raise ValueError("observed mask does not match parent configurations")
        if np.any(self.table < 0):
            raise ValueError(f"negative probability in CPT for {self.child}")
        if np.any(np.abs(self.table.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise ValueError(f"CPT rows for {self.child} do not sum to 1")

    def row_index(self, parent_values: Sequence[int]) -> int:
        if not self.parents:
            return 0
        return int(np.ravel_multi_index(tuple(parent_values), self.parent_cards))


@dataclass(frozen=True)
class BayesNet:
    dag: Dag
    cpts: tuple[Cpt, ...]

    def __post_init__(self):
        by_name = {c.child: c for c in self.cpts}
        if set(by_name) != set(self.dag.names) or len(self.cpts) != len(self.dag.nodes):
            raise ValueError("need exactly one CPT per DAG node")
        for name, card in self.dag.nodes:
            cpt = by_name[name]
            if cpt.parents != self.dag.parents(name):
                raise ValueError(f"CPT parents {cpt.parents} do not match DAG parents "
                                 f"{self.dag.parents(name)} for {name}")
            if cpt.table.shape[1] != card:
                raise ValueError(f"CPT for {name} has {cpt.table.shape[1]} values, "
                                 f"expected {card}")

    def cpt(self, name: str) -> Cpt:
        for c in self.cpts:
            if c.child == name:
                return c
        raise KeyError(name)


@dataclass(frozen=True)
class Factor:
    """Non-negative function over an ordered variable scope, stored densely."""

    scope: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != len(self.scope):
            raise ValueError("factor array rank does not match scope")

    def reduce(self, var: str, value: int) -> "Factor":
        axis = self.scope.index(var)
        return Factor(self.scope[:axis] + self.scope[axis + 1:],
                      np.take(self.values, value, axis=axis))

    def marginalize(self, var: str) -> "Factor":
        axis = self.scope.index(var)
        return Factor(self.scope[:axis] + self.scope[axis + 1:],
                      self.values.sum(axis=axis))

    def multiply(self, other: "Factor") -> "Factor":
        scope = self.scope + tuple(v for v in other.scope if v not in self.scope)
        return Factor(scope, _aligned(self, scope) * _aligned(other, scope))


def _aligned(factor: Factor, scope: tuple[str, ...]) -> np.ndarray:
    axes = [factor.scope.index(v) for v in scope if v in factor.scope]
    arr = np.transpose(factor.values, axes)
    have = set(factor.scope)
    expander = tuple(slice(None) if v in have else None for v in scope)
    return arr[expander]


def _cpt_factor(cpt: Cpt, cardinality: int) -> Factor:
    shape = cpt.parent_cards + (cardinality,)
    return Factor(cpt.parents + (cpt.child,), cpt.table.reshape(shape))


@dataclass(frozen=True)
class Posterior:
    """Normalized distribution over a query variable.

    ``impossible`` is set when the evidence has zero probability under the
    model; the values then fall back to uniform and downstream consumers
    treat the queried object as maximally anomalous.
    """

    values: np.ndarray
    impossible: bool = False


def fit_mle(dag: Dag, data: Mapping[str, np.ndarray]) -> BayesNet:
    """Maximum-likelihood CPTs from integer-coded observation columns.

    Every DAG node needs a column of codes in [0, cardinality). One pass of
    mixed-radix binning and counting per node; identical tables produce
    bit-identical CPTs.
    """
    missing = [n for n in dag.names if n not in data]
    if missing:
        raise FitError(f"observation table lacks columns for {missing}")
    columns = {name: np.asarray(data[name], dtype=np.int64) for name in dag.names}
    lengths = {col.shape[0] for col in columns.values()}
    if len(lengths) != 1:
        raise FitError("observation columns have mismatched lengths")
    n_rows = lengths.pop()
    if n_rows == 0:
        raise FitError("cannot fit on an empty observation table")
    for name, card in dag.nodes:
        col = columns[name]
        if col.min() < 0 or col.max() >= card:
            raise FitError(f"column {name} holds codes outside [0, {card})")
    cpts = []
    for name, card in dag.nodes:
        parents = dag.parents(name)
        child_col = columns[name]
        if not parents:
            counts = np.bincount(child_col, minlength=card).astype(float)
            table = (counts / counts.sum()).reshape(1, card)
            cpts.append(Cpt(name, (), (), table, np.array([True])))
            continue
        parent_cards = tuple(dag.cardinality(p) for p in parents)
        rows = np.ravel_multi_index(tuple(columns[p] for p in parents), parent_cards)
        n_configs = int(np.prod(parent_cards))
        counts = np.bincount(rows * card + child_col,
                             minlength=n_configs * card).astype(float)
        counts = counts.reshape(n_configs, card)
        totals = counts.sum(axis=1)
        seen = totals > 0
        table = np.empty_like(counts)
        table[seen] = counts[seen] / totals[seen, None]
        table[~seen] = 1.0 / card
        cpts.append(Cpt(name, parents, parent_cards, table, seen))
    return BayesNet(dag, tuple(cpts))


def _check_query(net: BayesNet, query: str, evidence: Mapping[str, int]) -> dict[str, int]:
    cards = net.dag.cardinalities()
    if query not in cards:
        raise ValueError(f"unknown query variable {query!r}")
    if query in evidence:
        raise ValueError(f"query variable {query!r} also appears in the evidence")
    cleaned = {}
    for var, val in evidence.items():
        if var not in cards:
            raise ValueError(f"unknown evidence variable {var!r}")
        val = int(val)
        if not 0 <= val < cards[var]:
            raise ValueError(f"evidence {var}={val} outside [0, {cards[var]})")
        cleaned[var] = val
    return cleaned


def _min_degree_order(scopes: list[tuple[str, ...]], hidden: list[str],
                      rank: dict[str, int]) -> list[str]:
    neighbors: dict[str, set[str]] = {v: set() for v in hidden}
    hidden_set = set(hidden)
    for scope in scopes:
        inside = [v for v in scope if v in hidden_set]
        for a in inside:
            neighbors[a].update(b for b in inside if b != a)
    order = []
    remaining = set(hidden)
    while remaining:
        var = min(remaining, key=lambda v: (len(neighbors[v] & remaining), rank[v]))
        order.append(var)
        remaining.discard(var)
        linked = neighbors[var] & remaining
        for a in linked:
            neighbors[a].update(b for b in linked if b != a)
    return order


def eliminate(net: BayesNet, query: str, evidence: Mapping[str, int],
              order: Sequence[str] | None = None) -> Posterior:
    """Exact posterior P(query | evidence) by variable elimination.

    The elimination order defaults to the min-degree heuristic over the
    moralized evidence-reduced graph; an explicit ``order`` (any
    permutation of the hidden variables) yields the same distribution.
    """
    evidence = _check_query(net, query, evidence)
    cards = net.dag.cardinalities()
    factors: list[Factor] = []
    constant = 1.0
    for cpt in net.cpts:
        factor = _cpt_factor(cpt, cards[cpt.child])
        for var, val in evidence.items():
            if var in factor.scope:
                factor = factor.reduce(var, val)
        if factor.scope:
            factors.append(factor)
        else:
            constant *= float(factor.values)
    hidden = [n for n in net.dag.names if n != query and n not in evidence]
    if order is None:
        rank = {n: i for i, n in enumerate(net.dag.names)}
        ordering = _min_degree_order([f.scope for f in factors], hidden, rank)
    else:
        if sorted(order) != sorted(hidden):
            raise ValueError(f"elimination order must permute the hidden variables {hidden}")
        ordering = list(order)
    for var in ordering:
        bucket = [f for f in factors if var in f.scope]
        if not bucket:
            continue
        factors = [f for f in factors if var not in f.scope]
        product = bucket[0]
        for f in bucket[1:]:
            product = product.multiply(f)
        summed = product.marginalize(var)
        if summed.scope:
            factors.append(summed)
        else:
            constant *= float(summed.values)
    unnormalized = np.full(cards[query], constant, dtype=float)
    for f in factors:
        # everything left can only range over the query variable
        unnormalized = unnormalized * f.values
    total = unnormalized.sum()
    if total == 0.0:
        return Posterior(np.full(cards[query], 1.0 / cards[query]), impossible=True)
    return Posterior(unnormalized / total, impossible=False)


def joint_brute_force(net: BayesNet, query: str, evidence: Mapping[str, int],
                      size_cap: int = 10_000_000) -> Posterior:
    """Posterior by full joint enumeration; the oracle for ``eliminate``.

    Deliberately shares no machinery with the elimination path: the joint
    is materialized state by state from raw CPT lookups, masked by the
    evidence and summed over the query variable.
    """
    evidence = _check_query(net, query, evidence)
    names = list(net.dag.names)
    cards = [net.dag.cardinality(n) for n in names]
    total_states = math.prod(cards)
    if total_states > size_cap:
        raise ValueError(f"joint has {total_states} states, above the oracle cap {size_cap}")
    grids = np.indices(cards, dtype=np.int64).reshape(len(cards), -1)
    column = {name: grids[i] for i, name in enumerate(names)}
    prob = np.ones(grids.shape[1], dtype=float)
    for cpt in net.cpts:
        if cpt.parents:
            rows = np.ravel_multi_index(tuple(column[p] for p in cpt.parents),
                                        cpt.parent_cards)
        else:
            rows = np.zeros(grids.shape[1], dtype=np.int64)
        prob = prob * cpt.table[rows, column[cpt.child]]
    for var, val in evidence.items():
        prob = prob * (column[var] == val)
    qcard = net.dag.cardinality(query)
    unnormalized = np.bincount(column[query], weights=prob, minlength=qcard)
    total = unnormalized.sum()
    if total == 0.0:
        return Posterior(np.full(qcard, 1.0 / qcard), impossible=True)
    return Posterior(unnormalized / total, impossible=False)


def class_cpt_query(net: BayesNet, evidence: Mapping[str, int]) -> Posterior:
    """P(C | everything else), the detector's per-cell anomaly query.

    The evidence must assign every non-class variable of the fitted network
    (G, I, BS, BAR and, for spatio-temporal models, V and D).
    """
    expected = set(net.dag.names) - {"C"}
    if set(evidence) != expected:
        raise ValueError(f"class query needs evidence for exactly {sorted(expected)}, "
                         f"got {sorted(evidence)}")
    return eliminate(net, "C", evidence)
