"""Windows, norms, point configurations and the grid index used by every builder."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numpy as np

from .errors import InvalidInputError

log = logging.getLogger(__name__)

BOUNDARY_MODES = ("hard", "torus")

# relative near-tie tolerance, scaled by the window diameter
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Window:
    """Axis-aligned box ``[lower, upper]`` with a hard or periodic boundary."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    boundary: str = "hard"

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if len(lower) == 0 or len(lower) != len(upper):
            raise InvalidInputError("window corners must be non-empty and of equal dimension")
        if not all(lo < hi for lo, hi in zip(lower, upper)):
            raise InvalidInputError(f"window lower {lower} must be < upper {upper} componentwise")
        if not all(math.isfinite(v) for v in lower + upper):
            raise InvalidInputError("window corners must be finite")
        if self.boundary not in BOUNDARY_MODES:
            raise InvalidInputError(f"unknown boundary mode {self.boundary!r}")

    @classmethod
    def box(cls, side: float, dimension: int = 2, boundary: str = "hard", origin: float = 0.0) -> Window:
        return cls((origin,) * dimension, (origin + side,) * dimension, boundary)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def torus(self) -> bool:
        return self.boundary == "torus"

    @property
    def lower_arr(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def upper_arr(self) -> np.ndarray:
        return np.asarray(self.upper)

    @property
    def extents(self) -> np.ndarray:
        return self.upper_arr - self.lower_arr

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    @property
    def center(self) -> np.ndarray:
        return (self.lower_arr + self.upper_arr) / 2

    def diameter(self, norm: Norm | None = None) -> float:
        return float((norm or Norm())(self.extents))

    def contains(self, coords) -> np.ndarray:
        x = np.asarray(coords, dtype=float)
        if self.torus:
            return np.all((x >= self.lower_arr) & (x < self.upper_arr), axis=-1)
        return np.all((x >= self.lower_arr) & (x <= self.upper_arr), axis=-1)

    def wrap(self, coords) -> np.ndarray:
        """Reduce coordinates modulo the window (torus); identity in hard mode."""
        x = np.asarray(coords, dtype=float)
        if not self.torus:
            return x
        lo, ext = self.lower_arr, self.extents
        y = lo + np.mod(x - lo, ext)
        # mod can round up to exactly ext
        return np.where(y >= self.upper_arr, lo, y)

    def displacement(self, a, b) -> np.ndarray:
        """``b - a``, using the minimal image convention on the torus."""
        diff = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
        if self.torus:
            ext = self.extents
            diff = diff - ext * np.round(diff / ext)
        return diff

    def scaled(self, factor: float) -> Window:
        return Window(tuple(factor * v for v in self.lower), tuple(factor * v for v in self.upper), self.boundary)

    def enlarged(self, margin: float) -> Window:
        return Window(tuple(v - margin for v in self.lower), tuple(v + margin for v in self.upper), self.boundary)


@dataclass(frozen=True)
class Norm:
    """The p-norm, ``p >= 1`` or ``p = inf``."""

    p: float = 2.0

    def __post_init__(self):
        p = float(self.p)
        if not (p >= 1.0):
            raise InvalidInputError(f"p-norm needs p >= 1, got {self.p}")
        object.__setattr__(self, "p", p)

    def __call__(self, v, axis: int = -1):
        v = np.asarray(v, dtype=float)
        if self.p == 2.0:
            return np.sqrt(np.sum(v * v, axis=axis))
        return np.linalg.norm(v, ord=self.p, axis=axis)


@dataclass(frozen=True)
class Point:
    id: int
    coords: tuple[float, ...]


@dataclass(frozen=True)
class MarkedPoint:
    point: Point
    mark: float = 0.0

    def __post_init__(self):
        if not self.mark >= 0:
            raise InvalidInputError(f"marks must be nonnegative, got {self.mark}")

    @property
    def id(self) -> int:
        return self.point.id

    @property
    def coords(self) -> tuple[float, ...]:
        return self.point.coords


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    """Finite marked point set in a window. Point ids are the row indices ``0..n-1``."""

    window: Window
    coords: np.ndarray
    marks: np.ndarray | None = None
    norm: Norm = field(default_factory=Norm)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = self.window.dimension
        coords = np.asarray(self.coords, dtype=float)
        if coords.size == 0:
            coords = coords.reshape(0, d)
        if coords.ndim == 1 and d == 1:
            coords = coords.reshape(-1, 1)
        if coords.ndim != 2 or coords.shape[1] != d:
            raise InvalidInputError(f"coords must have shape (n, {d}), got {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise InvalidInputError("coordinates must be finite")
        if self.window.torus:
            coords = self.window.wrap(coords)
        elif len(coords) and not np.all(self.window.contains(coords)):
            raise InvalidInputError("some points lie outside the hard window")
        marks = np.zeros(len(coords)) if self.marks is None else np.asarray(self.marks, dtype=float).reshape(-1)
        if marks.shape != (len(coords),):
            raise InvalidInputError(f"need one mark per point, got {marks.shape} for {len(coords)} points")
        if np.any(~(marks >= 0)):
            raise InvalidInputError("marks must be nonnegative")
        object.__setattr__(self, "coords", _readonly(coords))
        object.__setattr__(self, "marks", _readonly(marks))
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def n(self) -> int:
        return len(self.coords)

    def __len__(self) -> int:
        return self.n

    @property
    def dimension(self) -> int:
        return self.window.dimension

    @property
    def ids(self) -> np.ndarray:
        return np.arange(self.n)

    def point(self, i: int) -> Point:
        return Point(int(i), tuple(float(v) for v in self.coords[i]))

    def marked_point(self, i: int) -> MarkedPoint:
        return MarkedPoint(self.point(i), float(self.marks[i]))

    @property
    def points(self) -> list[MarkedPoint]:
        return [self.marked_point(i) for i in range(self.n)]

    def distances_from(self, center, ids=None) -> np.ndarray:
        """Distances from ``center`` (coordinates) to the points ``ids`` (all if None)."""
        pts = self.coords if ids is None else self.coords[np.asarray(ids, dtype=int)]
        return self.norm(self.window.displacement(np.asarray(center, dtype=float), pts))

    def pairwise(self, rows=None, cols=None) -> np.ndarray:
        a = self.coords if rows is None else self.coords[np.asarray(rows, dtype=int)]
        b = self.coords if cols is None else self.coords[np.asarray(cols, dtype=int)]
        return self.norm(self.window.displacement(a[:, None, :], b[None, :, :]))

    def subset(self, keep) -> PointConfiguration:
        """Configuration restricted to ``keep`` (ids renumbered in increasing original order)."""
        keep = np.unique(np.asarray(list(keep), dtype=int))
        return PointConfiguration(self.window, self.coords[keep], self.marks[keep], self.norm, self.meta)

    def with_marks(self, marks) -> PointConfiguration:
        return PointConfiguration(self.window, self.coords, marks, self.norm, self.meta)

    def with_meta(self, **meta) -> PointConfiguration:
        return PointConfiguration(self.window, self.coords, self.marks, self.norm, {**self.meta, **meta})

    def scaled(self, factor: float) -> PointConfiguration:
        return PointConfiguration(self.window.scaled(factor), self.coords * factor, self.marks, self.norm, self.meta)

    def __eq__(self, other):
        if not isinstance(other, PointConfiguration):
            return NotImplemented
        return (
            self.window == other.window
            and self.norm == other.norm
            and self.meta == other.meta
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.marks, other.marks)
        )

    __hash__ = object.__hash__

    @classmethod
    def from_points(cls, coords, window: Window | None = None, marks=None, norm: Norm | None = None, **meta):
        """Convenience constructor; the window defaults to the bounding box padded by 1."""
        x = np.asarray(coords, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if window is None:
            lo = x.min(axis=0) - 1 if len(x) else np.zeros(x.shape[1])
            hi = x.max(axis=0) + 1 if len(x) else np.ones(x.shape[1])
            window = Window(tuple(lo), tuple(hi))
        return cls(window, x, marks, norm or Norm(), meta)


def _coords_of(p) -> np.ndarray:
    if isinstance(p, MarkedPoint):
        p = p.point
    if isinstance(p, Point):
        p = p.coords
    return np.atleast_1d(np.asarray(p, dtype=float))


def distance(norm: Norm, window: Window, a, b) -> float:
    """Distance between two points (``Point``, ``MarkedPoint`` or coordinate vectors)."""
    x, y = _coords_of(a), _coords_of(b)
    if x.shape != (window.dimension,) or y.shape != (window.dimension,):
        raise InvalidInputError(f"points must have dimension {window.dimension}, got {x.shape} and {y.shape}")
    return float(norm(window.displacement(x, y)))


@dataclass
class NonequidistanceReport:
    ok: bool
    # ((i, j), (k, l)) for tied pair distances, (i, j) for coincident points or tied norms
    violations: list = field(default_factory=list)
    n_violations: int = 0


def default_tie_tol(config: PointConfiguration) -> float:
    return TIE_RTOL * config.window.diameter(config.norm)


def nonequidistant_check(config: PointConfiguration, tol: float | None = None, max_violations: int = 100):
    """Check that all pair distances are distinct and no two points share the same norm.

    ``tol`` defaults to ``1e-12 * window diameter``. Uses O(n^2) memory.
    """
    if tol is None:
        tol = default_tie_tol(config)
    if tol < 0:
        raise InvalidInputError("tol must be nonnegative")
    report = NonequidistanceReport(ok=True)

    def add(v):
        report.n_violations += 1
        if len(report.violations) < max_violations:
            report.violations.append(v)

    n = config.n
    if n >= 2:
        iu, ju = np.triu_indices(n, k=1)
        dist = config.pairwise()[iu, ju]
        order = np.argsort(dist, kind="stable")
        ds = dist[order]
        for t in np.flatnonzero(ds <= tol):
            add((int(iu[order[t]]), int(ju[order[t]])))
        close = np.flatnonzero((np.diff(ds) <= tol) & (ds[:-1] > tol))
        for t in close:
            a, b = order[t], order[t + 1]
            add(((int(iu[a]), int(ju[a])), (int(iu[b]), int(ju[b]))))
        norms = config.norm(config.coords)
        norder = np.argsort(norms, kind="stable")
        for t in np.flatnonzero(np.diff(norms[norder]) <= tol):
            i, j = sorted((int(norder[t]), int(norder[t + 1])))
            add((i, j))
    report.ok = report.n_violations == 0
    if not report.ok:
        log.info("nonequidistance check found %d violations (tol=%g)", report.n_violations, tol)
    return report


class EuclideanRank:
    """Rank candidates by plain norm distance; the default ordering for ``query_ranked``."""

    def primary(self, dist: np.ndarray, ids: np.ndarray) -> np.ndarray:
        return dist

    def bound(self, dist: float) -> float:
        return dist


@lru_cache(maxsize=None)
def _ring_offsets(dimension: int, r: int) -> np.ndarray:
    if r == 0:
        return np.zeros((1, dimension), dtype=np.int64)
    rng = range(-r, r + 1)
    offs = [o for o in itertools.product(rng, repeat=dimension) if max(abs(v) for v in o) == r]
    return np.array(offs, dtype=np.int64)


class SpatialIndex:
    """Uniform grid over a configuration with exact ring-by-ring expansion.

    Cell size defaults to about ``points_per_cell`` expected points per cell.
    """

    def __init__(self, config: PointConfiguration, cell_size: float | None = None, points_per_cell: float = 2.0):
        if config.n == 0:
            raise InvalidInputError("cannot index an empty configuration")
        self.config = config
        w = config.window
        d = w.dimension
        ext = w.extents
        if cell_size is None:
            cell_size = (w.volume * points_per_cell / config.n) ** (1.0 / d)
        shape = np.maximum(1, np.floor(ext / cell_size)).astype(np.int64)
        # keep the cell count proportional to n
        while np.prod(shape) > 4 * config.n + 64:
            shape = np.maximum(1, shape // 2)
        self.shape = shape
        self.widths = ext / shape
        self.lower = w.lower_arr
        self.torus = w.torus
        cells = self.cell_of(config.coords)
        flat = np.ravel_multi_index(cells.T, shape)
        order = np.argsort(flat, kind="stable")
        self._ids = order
        self._starts = np.searchsorted(flat[order], np.arange(np.prod(shape) + 1))

    def cell_of(self, coords) -> np.ndarray:
        c = np.floor((np.asarray(coords, dtype=float) - self.lower) / self.widths).astype(np.int64)
        return np.clip(c, 0, self.shape - 1)

    def _ids_in(self, flat_cells) -> np.ndarray:
        starts, ids = self._starts, self._ids
        chunks = [ids[starts[c] : starts[c + 1]] for c in flat_cells if starts[c + 1] > starts[c]]
        if not chunks:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(chunks)

    def _rings(self, center: np.ndarray):
        """Yield ``(ids, gap)`` per ring: new ids, and a lower bound on the distance
        from ``center`` to every point not yet yielded (inf once everything is covered)."""
        center = np.asarray(center, dtype=float)
        for ids, gaps in self._block_rings(self.cell_of(center), center[None, :]):
            yield ids, float(gaps[0])

    def _block_rings(self, cc: np.ndarray, centers: np.ndarray):
        """Ring expansion around cell ``cc``; ``gaps[m]`` bounds the distance from
        ``centers[m]`` (all inside cell ``cc``) to any point not yet yielded.

        The bound is the sup-norm gap to the faces of the covered block, which is a
        lower bound for every p-norm.
        """
        d = len(cc)
        lo_face, hi_face = self.lower + cc * self.widths, self.lower + (cc + 1) * self.widths
        seen = None
        r = 0
        while True:
            cells = cc + _ring_offsets(d, r)
            if self.torus:
                cells = np.mod(cells, self.shape)
            else:
                cells = cells[np.all((cells >= 0) & (cells < self.shape), axis=1)]
            flat = np.ravel_multi_index(cells.T, self.shape) if len(cells) else np.empty(0, dtype=np.int64)
            if self.torus and np.any(2 * r + 1 > self.shape):
                flat = np.unique(flat)
                if seen is not None:
                    flat = np.setdiff1d(flat, seen, assume_unique=True)
                seen = flat if seen is None else np.union1d(seen, flat)
            elif self.torus:
                seen = flat if seen is None else np.concatenate([seen, flat])
            gaps = np.full(len(centers), math.inf)
            for a in range(d):
                below = centers[:, a] - (lo_face[a] - r * self.widths[a])
                above = (hi_face[a] + r * self.widths[a]) - centers[:, a]
                if self.torus:
                    if 2 * r + 1 >= self.shape[a]:
                        continue
                    gaps = np.minimum(gaps, np.minimum(below, above))
                else:
                    if cc[a] - r > 0:
                        gaps = np.minimum(gaps, below)
                    if cc[a] + r < self.shape[a] - 1:
                        gaps = np.minimum(gaps, above)
            gaps = np.maximum(gaps, 0.0)
            yield self._ids_in(flat), gaps
            if np.all(np.isinf(gaps)):
                return
            r += 1

    def occupied_cells(self):
        """Yield ``(cell multi-index, member ids)`` for every nonempty cell."""
        counts = np.diff(self._starts)
        for flat in np.flatnonzero(counts):
            cc = np.array(np.unravel_index(flat, self.shape), dtype=np.int64)
            yield cc, self._ids[self._starts[flat] : self._starts[flat + 1]]


def _resolve_center(index: SpatialIndex, center, exclude):
    if isinstance(center, (int, np.integer)):
        return index.config.coords[int(center)], {int(center)} if exclude is None else set(exclude)
    return _coords_of(center), set() if exclude is None else set(exclude)


def _keep_mask(ids: np.ndarray, excl: set) -> np.ndarray:
    if len(excl) == 1:
        return ids != next(iter(excl))
    return ~np.isin(ids, list(excl))


def rank_order(config: PointConfiguration, ids: np.ndarray, dist: np.ndarray, primary: np.ndarray) -> np.ndarray:
    """Sort ``ids`` by (primary key, distance, coordinates lexicographically, id)."""
    keys = [ids] + [config.coords[ids, a] for a in range(config.dimension - 1, -1, -1)] + [dist, primary]
    return np.lexsort(keys)


def query_ranked(index: SpatialIndex, center, count: int, ordering=None, exclude: Iterable[int] | None = None) -> np.ndarray:
    """The first ``count`` ids in rank order from ``center``.

    ``center`` is a point id (excluded from the result) or a coordinate vector.
    ``ordering`` supplies ``primary(dist, ids)`` and ``bound(dist)``, a lower bound on the
    primary key of any point at distance >= dist; the default ranks by distance.
    """
    ordering = ordering or EuclideanRank()
    config = index.config
    c, excl = _resolve_center(index, center, exclude)
    if count <= 0:
        return np.empty(0, dtype=np.int64)
    got_ids, got_dist, got_key = [], [], []
    total = 0
    for ids, gap in index._rings(c):
        if excl and len(ids):
            ids = ids[_keep_mask(ids, excl)]
        if len(ids):
            dist = config.distances_from(c, ids)
            got_ids.append(ids)
            got_dist.append(dist)
            got_key.append(ordering.primary(dist, ids))
            total += len(ids)
        if total >= count and gap < math.inf:
            keys = np.concatenate(got_key)
            kth = np.partition(keys, count - 1)[count - 1]
            if kth < ordering.bound(gap):
                break
    if total == 0:
        return np.empty(0, dtype=np.int64)
    ids = np.concatenate(got_ids)
    dist = np.concatenate(got_dist)
    keys = np.concatenate(got_key)
    order = rank_order(config, ids, dist, keys)[:count]
    k2, d2 = keys[order], dist[order]
    if len(order) > 1 and np.any((k2[1:] == k2[:-1]) & (d2[1:] == d2[:-1])):
        log.debug("exact rank tie broken lexicographically near center %s", c)
    return ids[order]


def query_radius(index: SpatialIndex, center, radius: float, closed: bool = False, exclude: Iterable[int] | None = None) -> np.ndarray:
    """Ids within ``radius`` of ``center`` (strictly, unless ``closed``), sorted by id."""
    config = index.config
    c, excl = _resolve_center(index, center, exclude)
    found = []
    for ids, gap in index._rings(c):
        if len(ids):
            dist = config.distances_from(c, ids)
            hit = dist <= radius if closed else dist < radius
            found.append(ids[hit])
        if gap > radius or (not closed and gap >= radius):
            break
    out = np.sort(np.concatenate(found)) if found else np.empty(0, dtype=np.int64)
    if excl and len(out):
        out = out[_keep_mask(out, excl)]
    return out


def ranked_neighbors(config: PointConfiguration, count: int, ordering=None, index: SpatialIndex | None = None) -> np.ndarray:
    """Row ``i`` holds the first ``count`` ranked neighbors of point ``i``; ``count`` is capped at ``n - 1``.

    Points sharing a grid cell are ranked together against a common candidate block,
    which is grown until every row's ``count``-th key beats the bound for unseen points.
    """
    ordering = ordering or EuclideanRank()
    n = config.n
    count = max(0, min(count, n - 1))
    out = np.full((n, count), -1, dtype=np.int64)
    if n < 2 or count == 0:
        return out
    if index is None:
        index = SpatialIndex(config, points_per_cell=max(6.0, 1.5 * (count + 1)))
    coords = config.coords
    for cc, members in index.occupied_cells():
        centers = coords[members]
        got = []
        for ids, gaps in index._block_rings(cc, centers):
            if len(ids):
                got.append(ids)
            cand = np.concatenate(got) if got else np.empty(0, dtype=np.int64)
            if len(cand) <= count or np.all(np.isinf(gaps)):
                continue
            dist = config.pairwise(members, cand)
            keys = np.asarray(ordering.primary(dist, cand), dtype=float)
            keys = np.where(cand[None, :] == members[:, None], np.inf, keys)
            kth = np.partition(keys, count - 1, axis=1)[:, count - 1]
            bounds = np.array([ordering.bound(g) for g in gaps])
            if np.all(kth < bounds):
                break
        cand = np.concatenate(got)
        dist = config.pairwise(members, cand)
        keys = np.asarray(ordering.primary(dist, cand), dtype=float)
        self_hit = cand[None, :] == members[:, None]
        # self goes last: infinite key and distance, then excluded by the count cap
        keys = np.where(self_hit, np.inf, keys)
        dist = np.where(self_hit, np.inf, dist)
        shape = dist.shape
        sort_keys = [np.broadcast_to(cand, shape)]
        sort_keys += [np.broadcast_to(coords[cand, a], shape) for a in range(config.dimension - 1, -1, -1)]
        sort_keys += [self_hit, dist, keys]
        order = np.lexsort(sort_keys, axis=-1)[:, :count]
        out[members] = cand[order]
    return out
