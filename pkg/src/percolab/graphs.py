"""Graph constructions on point configurations.

Neighbor ranking follows the f-ordering: candidate ``j`` seen from ``i`` ranks by
``f(|x_i - x_j|, mark_j)`` (smaller is closer), then by distance, then by
coordinates and id. ``f`` is nondecreasing in the distance.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidInputError
from .geom import (
    MarkedPoint,
    Norm,
    Point,
    PointConfiguration,
    SpatialIndex,
    Window,
    distance,
    query_radius,
    query_ranked,
    rank_order,
    ranked_neighbors,
)

log = logging.getLogger(__name__)

PATHLOSS_KINDS = ("power_law", "truncated", "shifted")


@dataclass(frozen=True)
class PathLoss:
    """``power_law``: r^-a; ``truncated``: min(1, r^-a); ``shifted``: (1 + r)^-a."""

    kind: str = "power_law"
    alpha: float = 4.0

    def __post_init__(self):
        if self.kind not in PATHLOSS_KINDS:
            raise InvalidInputError(f"unknown path-loss kind {self.kind!r}")
        if not self.alpha > 0:
            raise InvalidInputError("alpha must be positive")

    @property
    def bounded(self) -> bool:
        return self.kind != "power_law"

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            if self.kind == "power_law":
                return r ** (-self.alpha)
            if self.kind == "truncated":
                return np.minimum(1.0, r ** (-self.alpha))
            return (1.0 + r) ** (-self.alpha)

    def radius_above(self, level: float) -> float:
        """``sup{r > 0 : l(r) > level}``; 0 if the set is empty, inf if ``level <= 0``."""
        if level <= 0:
            return math.inf
        a = self.alpha
        if self.kind == "power_law":
            return level ** (-1.0 / a)
        if self.kind == "truncated":
            return level ** (-1.0 / a) if level < 1.0 else 0.0
        return max(0.0, level ** (-1.0 / a) - 1.0)


@dataclass(frozen=True)
class OrderingSpec:
    """Ordering function ``f(distance, mark)``.

    ``euclidean``: f = distance. ``sinr_order``: f = 1 / (mark * l(distance)), so a
    receiver ranks transmitters by received power.
    """

    kind: str = "euclidean"
    pathloss: PathLoss | None = None

    def __post_init__(self):
        if self.kind not in ("euclidean", "sinr_order"):
            raise InvalidInputError(f"unknown ordering {self.kind!r}")
        if self.kind == "sinr_order" and self.pathloss is None:
            object.__setattr__(self, "pathloss", PathLoss())

    def __call__(self, dist, mark):
        dist = np.asarray(dist, dtype=float)
        if self.kind == "euclidean":
            return dist + 0.0 * np.asarray(mark, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            received = np.asarray(mark, dtype=float) * self.pathloss(dist)
            return np.where(received > 0, 1.0 / received, np.inf)

    def ranker(self, config: PointConfiguration) -> _Ranker:
        return _Ranker(self, config.marks)


EUCLIDEAN = OrderingSpec()


class _Ranker:
    """Adapter giving ``query_ranked`` the primary key and its distance lower bound."""

    def __init__(self, f: OrderingSpec, marks: np.ndarray):
        self.f = f
        self.marks = marks
        self.mark_max = float(marks.max()) if len(marks) else 0.0

    def primary(self, dist, ids):
        return self.f(dist, self.marks[ids])

    def bound(self, dist):
        return float(self.f(dist, self.mark_max))


def check_monotone(f: OrderingSpec, marks, distances) -> bool:
    """Sampled check that ``f(., q)`` is nondecreasing for each mark ``q``."""
    d = np.sort(np.asarray(distances, dtype=float))
    for q in np.atleast_1d(marks):
        vals = f(d, q)
        if np.any(np.diff(vals) < 0):
            return False
    return True


def f_closer(f: OrderingSpec, base, cand1: MarkedPoint, cand2: MarkedPoint, norm: Norm | None = None,
             window: Window | None = None) -> str:
    """Which candidate is f-closer to ``base``: ``"first"`` or ``"second"``.

    Distances use ``window`` (minimal images on a torus) when given, else plain ``norm``.
    """
    norm = norm or Norm()
    b = np.atleast_1d(np.asarray(base.coords if isinstance(base, (Point, MarkedPoint)) else base, dtype=float))

    def key(c: MarkedPoint):
        x = np.asarray(c.coords, dtype=float)
        d = distance(norm, window, b, x) if window is not None else float(norm(x - b))
        return float(f(d, c.mark)), d, tuple(x), c.id

    k1, k2 = key(cand1), key(cand2)
    if k1[:2] == k2[:2]:
        log.debug("f_closer: lexicographic tie-break between %s and %s", cand1.id, cand2.id)
    return "first" if k1 < k2 else "second"


@dataclass(eq=False)
class SpatialGraph:
    """Edge set over a configuration. Undirected edges are stored ``(small, large)``, sorted."""

    config: PointConfiguration
    edges: np.ndarray
    directed: bool = False
    builder: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if not self.directed:
            e = np.sort(e, axis=1)
        if len(e):
            e = np.unique(e, axis=0)
            if np.any(e[:, 0] == e[:, 1]):
                raise InvalidInputError("self-loops are not allowed")
            if e.min() < 0 or e.max() >= self.config.n:
                raise InvalidInputError("edge endpoint out of range")
        self.edges = e

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_set(self) -> set[tuple[int, int]]:
        return set(map(tuple, self.edges.tolist()))

    def degrees(self) -> np.ndarray:
        if self.directed:
            return np.bincount(self.edges[:, 0], minlength=self.n)
        return np.bincount(self.edges.ravel(), minlength=self.n)

    @property
    def max_degree(self) -> int:
        return int(self.degrees().max()) if self.n else 0

    def __repr__(self):
        kind = "directed" if self.directed else "undirected"
        return f"SpatialGraph({self.builder}, n={self.n}, {kind}, {self.n_edges} edges)"


def _graph(config, edges, builder, directed=False, **meta) -> SpatialGraph:
    return SpatialGraph(config, edges, directed, builder, meta)


def _neighbor_lists(config, count, f, index):
    if config.n < 2:
        return np.empty((config.n, 0), dtype=np.int64)
    return ranked_neighbors(config, count, f.ranker(config), index)


def _directed_pairs(lists: np.ndarray) -> np.ndarray:
    n, k = lists.shape
    src = np.repeat(np.arange(n), k)
    dst = lists.ravel()
    ok = dst >= 0
    return np.stack([src[ok], dst[ok]], axis=1)


def _mutual(pairs: np.ndarray, n: int) -> np.ndarray:
    code = pairs[:, 0] * n + pairs[:, 1]
    rev = pairs[:, 1] * n + pairs[:, 0]
    keep = np.isin(rev, code) & (pairs[:, 0] < pairs[:, 1])
    return pairs[keep]


def nn_sequence(config: PointConfiguration, base_id: int, f: OrderingSpec = EUCLIDEAN, count: int = 1, index=None) -> list[int]:
    """The first ``count`` points in f-order from ``base_id``."""
    if count <= 0 or config.n < 2:
        return []
    index = index or SpatialIndex(config)
    return query_ranked(index, int(base_id), count, f.ranker(config)).tolist()


def build_fknn(config: PointConfiguration, k: int, f: OrderingSpec = EUCLIDEAN, index=None) -> SpatialGraph:
    """Edge ``{i, j}`` iff each is among the other's ``k`` f-nearest neighbors."""
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    lists = _neighbor_lists(config, k, f, index)
    edges = _mutual(_directed_pairs(lists), config.n) if config.n > 1 else np.empty((0, 2))
    return _graph(config, edges, "fknn", k=k, ordering=f.kind)


def build_bknn(config: PointConfiguration, k: int, index=None) -> SpatialGraph:
    g = build_fknn(config, k, EUCLIDEAN, index)
    g.builder = "bknn"
    return g


def build_uknn(config: PointConfiguration, k: int, f: OrderingSpec = EUCLIDEAN, index=None) -> SpatialGraph:
    """Edge ``{i, j}`` iff one of them is among the other's ``k`` f-nearest neighbors."""
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    lists = _neighbor_lists(config, k, f, index)
    return _graph(config, _directed_pairs(lists), "uknn", k=k, ordering=f.kind)


def build_gilbert(config: PointConfiguration, r: float, index=None) -> SpatialGraph:
    """Edge iff the distance is strictly less than ``r``."""
    if not r > 0:
        raise InvalidInputError("r must be positive")
    pairs = []
    if config.n > 1:
        index = index or SpatialIndex(config)
        for i in range(config.n):
            js = query_radius(index, i, r)
            js = js[js > i]
            if len(js):
                pairs.append(np.stack([np.full(len(js), i), js], axis=1))
    edges = np.concatenate(pairs) if pairs else np.empty((0, 2))
    return _graph(config, edges, "gilbert", r=float(r))


@dataclass(frozen=True)
class SinrParams:
    pathloss: PathLoss = field(default_factory=PathLoss)
    tau: float = 1.0
    gamma: float = 0.0
    noise: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidInputError("tau must be > 0")
        if not self.gamma >= 0:
            raise InvalidInputError("gamma must be >= 0")
        if not self.noise >= 0:
            raise InvalidInputError("noise must be >= 0")

    @property
    def degree_bound(self) -> float:
        """All SINR degrees are strictly below this value."""
        return math.inf if self.gamma == 0 else 1.0 + 1.0 / (self.tau * self.gamma)

    @property
    def k_bound(self) -> int | None:
        """``ceil(1 / (tau * gamma))``: the k for which SINR is a subgraph of the f-kNN graph."""
        return None if self.gamma == 0 else math.ceil(1.0 / (self.tau * self.gamma))

    def ordering(self) -> OrderingSpec:
        return OrderingSpec("sinr_order", self.pathloss)

    def gilbert_radius(self, p_max: float) -> float:
        """``sup{r : p_max * l(r) > tau * noise}``."""
        if p_max <= 0:
            return 0.0
        return self.pathloss.radius_above(self.tau * self.noise / p_max)


def gamma_for_degree_bound(k: int, tau: float, margin: float = 1e-3) -> float:
    """A gamma slightly above ``1 / (k * tau)``, so that ``ceil(1 / (tau * gamma)) == k``."""
    return (1.0 + margin) / (k * tau)


def build_sinr(config: PointConfiguration, params: SinrParams, chunk: int = 512) -> SpatialGraph:
    """Edge iff the SINR constraint holds at both endpoints.

    ``i -> j`` succeeds when ``P_i l(d_ij) > tau * (N0 + gamma * sum_{k != i,j} P_k l(d_kj))``;
    the interference sum runs over the configuration (minimal images on a torus).
    """
    if params.gamma == 0 and params.noise == 0 and not params.pathloss.bounded:
        warnings.warn("gamma = 0 and N0 = 0 with unbounded path loss: every pair with positive power connects",
                      RuntimeWarning, stacklevel=2)
    n = config.n
    marks = config.marks
    src, dst = [], []
    for lo in range(0, n, chunk):
        cols = np.arange(lo, min(n, lo + chunk))
        dist = config.pairwise(None, cols)  # (n, c): transmitter x receiver
        if np.any(dist[np.arange(n)[:, None] != cols[None, :]] == 0):
            raise InvalidInputError("coincident points: path loss undefined at distance 0")
        with np.errstate(divide="ignore", invalid="ignore"):
            power = marks[:, None] * params.pathloss(dist)
        power[cols, np.arange(len(cols))] = 0.0
        total = power.sum(axis=0)
        interference = total[None, :] - power
        ok = power > params.tau * (params.noise + params.gamma * interference)
        ii, jj = np.nonzero(ok)
        src.append(ii)
        dst.append(cols[jj])
    if n:
        pairs = np.stack([np.concatenate(src), np.concatenate(dst)], axis=1)
        edges = _mutual(pairs, n)
    else:
        edges = np.empty((0, 2))
    return _graph(config, edges, "sinr", tau=params.tau, gamma=params.gamma, noise=params.noise,
                  pathloss=params.pathloss.kind, alpha=params.pathloss.alpha)


def build_f_k1k2(config: PointConfiguration, k1: int, k2: int, f: OrderingSpec = EUCLIDEAN, index=None) -> SpatialGraph:
    """Edge between ``i`` and its n-th neighbor ``j`` (n in {1, 2}) whenever ``i`` is
    among neighbors ``k1..k2`` of ``j``. ``k2`` is capped at ``n - 1``."""
    if not 1 <= k1 < k2:
        raise InvalidInputError("need 1 <= k1 < k2")
    n = config.n
    k2 = min(k2, n - 1)
    if n < 2 or k1 > k2:
        return _graph(config, np.empty((0, 2)), "f_k1k2", k1=k1, k2=k2)
    lists = _neighbor_lists(config, max(k2, 2), f, index)
    edges = []
    for i in range(n):
        for m in (0, 1):
            j = lists[i, m] if m < lists.shape[1] else -1
            if j < 0:
                continue
            rank = np.flatnonzero(lists[j] == i)
            if len(rank) and k1 <= rank[0] + 1 <= k2:
                edges.append((i, j))
    return _graph(config, edges, "f_k1k2", k1=k1, k2=k2, ordering=f.kind)


@dataclass(frozen=True)
class Region:
    """Bounded neighborhood shape, translated to each point: closed norm ball or axis box."""

    kind: str = "ball"
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in ("ball", "box"):
            raise InvalidInputError(f"unknown region kind {self.kind!r}")
        if not self.radius > 0:
            raise InvalidInputError("region radius must be > 0")

    def members(self, config: PointConfiguration, index: SpatialIndex, i: int) -> np.ndarray:
        if self.kind == "ball":
            return query_radius(index, i, self.radius, closed=True)
        # the box is contained in the sup-norm ball, which is contained in any p-ball of radius r * d
        cand = query_radius(index, i, self.radius * config.dimension, closed=True)
        disp = np.abs(config.window.displacement(config.coords[i], config.coords[cand]))
        return cand[np.all(disp <= self.radius, axis=1)]


def build_local_extreme(config: PointConfiguration, k: int, region: Region = Region(), mode: str = "furthest",
                        f: OrderingSpec = EUCLIDEAN, index=None) -> SpatialGraph:
    """Mutual graph on the ``k`` f-furthest (or f-nearest) points inside ``region + x_i``."""
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if mode not in ("furthest", "nearest"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    n = config.n
    pairs = []
    if n > 1:
        index = index or SpatialIndex(config)
        for i in range(n):
            cand = region.members(config, index, i)
            cand = cand[cand != i]
            if not len(cand):
                continue
            dist = config.distances_from(config.coords[i], cand)
            order = rank_order(config, cand, dist, f(dist, config.marks[cand]))
            chosen = cand[order[-k:]] if mode == "furthest" else cand[order[:k]]
            pairs.extend((i, int(j)) for j in chosen)
    pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    edges = _mutual(pairs, n) if len(pairs) else pairs
    return _graph(config, edges, "local_extreme", k=k, mode=mode, region=region.kind, radius=region.radius)


def build_kth_nn_directed(config: PointConfiguration, k: int, f: OrderingSpec = EUCLIDEAN, index=None) -> SpatialGraph:
    """One out-edge per vertex, to its k-th f-nearest neighbor."""
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if config.n <= k:
        raise InvalidInputError(f"need more than k={k} points, got {config.n}")
    lists = _neighbor_lists(config, k, f, index)
    edges = np.stack([np.arange(config.n), lists[:, k - 1]], axis=1)
    return _graph(config, edges, "kth_nn", directed=True, k=k, ordering=f.kind)


# --- builder specs ------------------------------------------------------------

BUILDERS = ("bknn", "fknn", "uknn", "gilbert", "sinr", "f_k1k2", "local_extreme", "kth_nn")


@dataclass(frozen=True)
class BuilderSpec:
    """A named builder plus parameters, so graphs can be rebuilt on sub-configurations."""

    name: str
    params: tuple = ()

    def __post_init__(self):
        if self.name not in BUILDERS:
            raise InvalidInputError(f"unknown builder {self.name!r}")

    @classmethod
    def make(cls, name: str, **params) -> BuilderSpec:
        return cls(name, tuple(sorted(params.items())))

    @property
    def kwargs(self) -> dict:
        return dict(self.params)

    def with_params(self, **params) -> BuilderSpec:
        return BuilderSpec.make(self.name, **{**self.kwargs, **params})

    def ordering(self) -> OrderingSpec:
        p = self.kwargs
        if p.get("ordering", "euclidean") == "euclidean":
            return EUCLIDEAN
        return OrderingSpec("sinr_order", PathLoss(p.get("pathloss", "power_law"), p.get("alpha", 4.0)))

    def sinr_params(self) -> SinrParams:
        p = self.kwargs
        tau = p.get("tau", 1.0)
        gamma = p.get("gamma")
        if gamma is None:
            gamma = gamma_for_degree_bound(int(p["k"]), tau, p.get("gamma_margin", 1e-3))
        return SinrParams(PathLoss(p.get("pathloss", "power_law"), p.get("alpha", 4.0)), tau, gamma, p.get("noise", 0.0))

    def degree_bound(self) -> float:
        """Largest degree the builder can produce (inf if unbounded)."""
        p = self.kwargs
        if self.name in ("bknn", "fknn", "local_extreme"):
            return p["k"]
        if self.name == "f_k1k2":
            # neighbors of v lie among its f-neighbors of rank {1, 2} or k1..k2
            return len({1, 2} | set(range(int(p["k1"]), int(p["k2"]) + 1)))
        if self.name == "sinr":
            b = self.sinr_params().degree_bound
            return math.ceil(b) - 1 if math.isfinite(b) else math.inf
        return math.inf

    def build(self, config: PointConfiguration, index=None) -> SpatialGraph:
        p = self.kwargs
        if self.name == "bknn":
            return build_bknn(config, int(p["k"]), index)
        if self.name == "fknn":
            return build_fknn(config, int(p["k"]), self.ordering(), index)
        if self.name == "uknn":
            return build_uknn(config, int(p["k"]), self.ordering(), index)
        if self.name == "gilbert":
            return build_gilbert(config, float(p["r"]), index)
        if self.name == "sinr":
            return build_sinr(config, self.sinr_params())
        if self.name == "f_k1k2":
            return build_f_k1k2(config, int(p["k1"]), int(p["k2"]), self.ordering(), index)
        if self.name == "local_extreme":
            region = Region(p.get("region", "ball"), float(p["radius"]))
            return build_local_extreme(config, int(p["k"]), region, p.get("mode", "furthest"), self.ordering(), index)
        return build_kth_nn_directed(config, int(p["k"]), self.ordering(), index)

    __call__ = build


BuilderFn = Callable[[PointConfiguration], SpatialGraph]
