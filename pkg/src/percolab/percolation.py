"""Cluster analysis, crossing probes and checkers for structural graph properties."""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InvalidInputError
from .geom import PointConfiguration, Window
from .graphs import BuilderSpec, SpatialGraph
from .procgen import MarkSpec, ProcessSpec, attach_marks, child_seed


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, a: int) -> int:
        parent = self.parent
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True


SHAPES = ("isolated", "path", "cycle", "other")


@dataclass
class ClusterReport:
    labels: np.ndarray  # component id per vertex, numbered by smallest member
    sizes: np.ndarray
    largest_fraction: float
    degree_histogram: dict[int, int]
    shapes: list[str]

    @property
    def n_components(self) -> int:
        return len(self.sizes)


def _shape(size: int, degs: np.ndarray, n_edges: int) -> str:
    if size == 1:
        return "isolated"
    ones = int(np.sum(degs == 1))
    twos = int(np.sum(degs == 2))
    if ones == 2 and twos == size - 2 and n_edges == size - 1:
        return "path"
    if twos == size and n_edges == size:
        return "cycle"
    return "other"


def components(graph: SpatialGraph) -> ClusterReport:
    """Connected components (directed edges are treated as undirected)."""
    n = graph.n
    uf = UnionFind(n)
    for a, b in graph.edges.tolist():
        uf.union(a, b)
    roots = np.array([uf.find(i) for i in range(n)], dtype=np.int64)
    _, first, labels = np.unique(roots, return_index=True, return_inverse=True)
    # renumber so component ids follow their smallest vertex
    order = np.argsort(first)
    relabel = np.empty_like(order)
    relabel[order] = np.arange(len(order))
    labels = relabel[labels.reshape(-1)] if n else np.empty(0, dtype=np.int64)
    sizes = np.bincount(labels, minlength=len(first)) if n else np.empty(0, dtype=np.int64)
    und = np.sort(graph.edges, axis=1)
    und = np.unique(und, axis=0) if len(und) else und
    degs = np.bincount(und.ravel(), minlength=n) if n else np.empty(0, dtype=np.int64)
    edge_count = np.bincount(labels[und[:, 0]], minlength=len(sizes)) if len(und) else np.zeros(len(sizes), int)
    shapes = []
    for c in range(len(sizes)):
        shapes.append(_shape(int(sizes[c]), degs[labels == c], int(edge_count[c])))
    hist = dict(sorted(Counter(degs.tolist()).items()))
    largest = float(sizes.max() / n) if n else 0.0
    return ClusterReport(labels, sizes, largest, hist, shapes)


def path_cycle_census(graph: SpatialGraph) -> dict[str, int]:
    """Counts of components by shape: ``paths``, ``cycles``, ``isolated``, ``other``."""
    counts = Counter(components(graph).shapes)
    return {"paths": counts["path"], "cycles": counts["cycle"], "isolated": counts["isolated"], "other": counts["other"]}


@dataclass
class CrossingResult:
    axis: int
    crossed: bool
    component: int | None
    delta: float


def default_delta(window: Window, axis: int = 0, graph_range: float = 0.0) -> float:
    """Slab width ``max(graph_range, extent / 20)``."""
    return max(graph_range, float(window.extents[axis]) / 20)


def crossing_probe(graph: SpatialGraph, window: Window | None = None, axis: int = 0, delta: float | None = None,
                   report: ClusterReport | None = None) -> CrossingResult:
    """Does one component touch both ``delta``-slabs at the faces of ``axis``?"""
    window = window or graph.config.window
    if window.torus:
        raise InvalidInputError("crossing is undefined on a torus")
    if not 0 <= axis < window.dimension:
        raise InvalidInputError(f"axis {axis} out of range")
    if delta is None:
        delta = default_delta(window, axis)
    if not 0 <= delta < window.extents[axis] / 2:
        raise InvalidInputError("delta must lie in [0, extent / 2)")
    if graph.n == 0:
        return CrossingResult(axis, False, None, delta)
    report = report or components(graph)
    x = graph.config.coords[:, axis]
    low = x <= window.lower[axis] + delta
    high = x >= window.upper[axis] - delta
    both = np.intersect1d(report.labels[low], report.labels[high])
    if len(both):
        return CrossingResult(axis, True, int(both[0]), delta)
    return CrossingResult(axis, False, None, delta)


def check_subgraph(g1: SpatialGraph, g2: SpatialGraph) -> bool:
    """``edges(g1) <= edges(g2)``; both graphs must live on the same vertex set."""
    if g1.n != g2.n or (g1.config is not g2.config and not np.array_equal(g1.config.coords, g2.config.coords)):
        raise InvalidInputError("graphs are over different vertex sets")
    return g1.edge_set() <= g2.edge_set()


@dataclass
class EdgePreservingReport:
    ok: bool
    lost_edges: list[tuple[int, int]] = field(default_factory=list)  # in original ids


def check_edge_preserving(builder: BuilderSpec | Callable[[PointConfiguration], SpatialGraph],
                          config: PointConfiguration, deletions: Iterable[int],
                          original: SpatialGraph | None = None) -> EdgePreservingReport:
    """Rebuild on ``config`` minus ``deletions`` and list original edges between survivors that vanished."""
    deletions = {int(i) for i in deletions}
    if any(not 0 <= i < config.n for i in deletions):
        raise InvalidInputError("deletion ids out of range")
    original = original if original is not None else builder(config)
    keep = np.array(sorted(set(range(config.n)) - deletions), dtype=np.int64)
    reduced = builder(config.subset(keep))
    new_id = np.full(config.n, -1, dtype=np.int64)
    new_id[keep] = np.arange(len(keep))
    present = reduced.edge_set()
    lost = []
    for a, b in original.edges.tolist():
        na, nb = new_id[a], new_id[b]
        if na < 0 or nb < 0:
            continue
        e = (int(na), int(nb)) if original.directed else tuple(sorted((int(na), int(nb))))
        if e not in present:
            lost.append((a, b))
    return EdgePreservingReport(not lost, lost)


def find_edge_preserving_witness(builder, sampler: Callable[[int], PointConfiguration], seeds: Iterable[int],
                                 deletions_per_config: int = 20, rng_seed: int = 0):
    """Search sampled configurations for a single-point deletion that removes an edge.

    Returns ``(seed, deleted_id, report)`` for the first witness, or None.
    """
    rng = np.random.default_rng(rng_seed)
    for seed in seeds:
        config = sampler(seed)
        if config.n < 3:
            continue
        original = builder(config)
        tries = rng.permutation(config.n)[:deletions_per_config]
        for i in tries:
            rep = check_edge_preserving(builder, config, [int(i)], original)
            if not rep.ok:
                return seed, int(i), rep
    return None


# --- percolation curves -----------------------------------------------------


@dataclass
class CurveRow:
    param: float
    replicates: int
    crossing_freq: float
    largest_frac_mean: float
    largest_frac_stderr: float
    max_degree_seen: int

    HEADER = ("param", "replicates", "crossing_freq", "largest_frac_mean", "largest_frac_stderr", "max_degree_seen")

    def as_row(self) -> tuple:
        return (self.param, self.replicates, self.crossing_freq, self.largest_frac_mean, self.largest_frac_stderr,
                self.max_degree_seen)


@dataclass
class CellResult:
    param: float
    replicate: int
    seed: int
    n_points: int
    n_edges: int
    max_degree: int
    n_components: int
    largest_fraction: float
    crossed: bool


def graph_range(builder: BuilderSpec) -> float:
    return float(builder.kwargs.get("r", builder.kwargs.get("radius", 0.0))) if builder.name in ("gilbert", "local_extreme") else 0.0


def run_cell(process: ProcessSpec, marks: MarkSpec | None, builder: BuilderSpec, param_name: str, values: Sequence,
             window: Window, replicate: int, root_seed: int, axis: int = 0) -> list[CellResult]:
    """One replicate: sample once, then build and analyse the graph for every parameter value."""
    seed = child_seed(root_seed, replicate)
    config = process.sample(window, seed)
    if marks is not None:
        config = attach_marks(config, marks, child_seed(seed, 1))
    out = []
    for value in values:
        spec = builder.with_params(**{param_name: value})
        g = spec.build(config)
        rep = components(g)
        delta = default_delta(window, axis, graph_range(spec))
        crossed = crossing_probe(g, window, axis, delta, rep).crossed if not window.torus else False
        out.append(CellResult(float(value), replicate, seed, config.n, g.n_edges, g.max_degree, rep.n_components,
                              rep.largest_fraction, crossed))
    return out


def _run_cell_args(args):
    return run_cell(*args)


def map_cells(tasks: list[tuple], workers: int = 1) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [_run_cell_args(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell_args, tasks))


def summarize(cells: list[CellResult]) -> list[CurveRow]:
    rows = []
    for value in sorted({c.param for c in cells}):
        group = sorted((c for c in cells if c.param == value), key=lambda c: c.replicate)
        lf = np.array([c.largest_fraction for c in group])
        stderr = float(lf.std(ddof=1) / math.sqrt(len(lf))) if len(lf) > 1 else 0.0
        rows.append(CurveRow(value, len(group), float(np.mean([c.crossed for c in group])), float(lf.mean()), stderr,
                             max(c.max_degree for c in group)))
    return rows


def percolation_curve(process: ProcessSpec, builder: BuilderSpec, param_name: str, values: Sequence,
                      replicates: int, seed: int, window: Window, marks: MarkSpec | None = None, axis: int = 0,
                      workers: int = 1, return_cells: bool = False):
    """Crossing frequency and largest-cluster fraction for each parameter value.

    Replicate ``r`` uses the same point sample for every parameter value, so per-replicate
    comparisons across the sweep are coupled.
    """
    if replicates < 1:
        raise InvalidInputError("replicates must be >= 1")
    tasks = [(process, marks, builder, param_name, list(values), window, r, seed, axis) for r in range(replicates)]
    cells = [c for chunk in map_cells(tasks, workers) for c in chunk]
    rows = summarize(cells)
    return (rows, cells) if return_cells else rows
