"""Point process samplers: Poisson, Voronoi-edge Cox, Strauss, shifted lattice, i.i.d. marks.

Every sampler is a pure function of its parameters, the window and the seed.
"""

from __future__ import annotations

import hashlib
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.spatial import Delaunay, QhullError

from .errors import InvalidInputError, ResourceLimitError
from .geom import Norm, PointConfiguration, Window

log = logging.getLogger(__name__)

MAX_EXPECTED_POINTS = 1e8
STRAUSS_BURN_IN_SWEEPS = 100
# birth / death / move proposal mix for the Strauss sampler
P_BIRTH, P_DEATH = 0.4, 0.4


def child_seed(root: int, k: int) -> int:
    """Seed of replicate ``k`` under root seed ``root``: first 8 bytes of blake2b("root:k")."""
    h = hashlib.blake2b(f"{int(root)}:{int(k)}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "big") >> 1


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _check_budget(expected: float) -> None:
    if expected > MAX_EXPECTED_POINTS:
        raise ResourceLimitError(f"expected point count {expected:.3g} exceeds {MAX_EXPECTED_POINTS:.0e}")


def sample_poisson(lam: float, window: Window, seed=None, norm: Norm | None = None) -> PointConfiguration:
    if lam < 0:
        raise InvalidInputError("intensity must be nonnegative")
    expected = lam * window.volume
    _check_budget(expected)
    rng = _rng(seed)
    n = rng.poisson(expected)
    coords = window.lower_arr + rng.random((n, window.dimension)) * window.extents
    meta = {"generator": "poisson", "intensity": float(lam), "seed": seed if isinstance(seed, int) else "none"}
    return PointConfiguration(window, coords, None, norm or Norm(), meta)


def sample_shifted_lattice(spacing: float, window: Window, seed=None, shift=None, norm: Norm | None = None) -> PointConfiguration:
    """Grid of the given spacing, translated by a global uniform shift in ``[0, spacing)^d``."""
    if not spacing > 0:
        raise InvalidInputError("spacing must be positive")
    d = window.dimension
    _check_budget(window.volume / spacing**d)
    if shift is None:
        shift = _rng(seed).random(d) * spacing
    shift = np.asarray(shift, dtype=float).reshape(d)
    axes = []
    for a in range(d):
        lo, hi = window.lower[a], window.upper[a]
        start = lo + shift[a]
        m = int(math.floor((hi - start) / spacing)) + 1
        vals = start + spacing * np.arange(max(m, 0))
        axes.append(vals[vals < hi])
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    meta = {"generator": "shifted_lattice", "spacing": float(spacing), "seed": seed if isinstance(seed, int) else "none"}
    return PointConfiguration(window, grid, None, norm or Norm(), meta)


# --- Voronoi skeleton -------------------------------------------------------


@dataclass
class SegmentSet:
    """Line segments ``(x0, y0, x1, y1)``; ``pairs`` names the two generators each segment separates."""

    segments: np.ndarray
    pairs: np.ndarray | None = None
    generators: np.ndarray | None = None
    total_length: float = field(init=False)

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=float).reshape(-1, 4)
        self.total_length = float(self.lengths.sum())

    @property
    def lengths(self) -> np.ndarray:
        s = self.segments
        return np.hypot(s[:, 2] - s[:, 0], s[:, 3] - s[:, 1])

    def __len__(self):
        return len(self.segments)


def clip_segments(p0: np.ndarray, p1: np.ndarray, lower, upper):
    """Liang-Barsky clipping of segments ``p0 -> p1`` to a box. Returns (q0, q1, keep)."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    d = p1 - p0
    t0 = np.zeros(len(p0))
    t1 = np.ones(len(p0))
    keep = np.ones(len(p0), dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for a in range(p0.shape[1]):
            for pk, qk in ((-d[:, a], p0[:, a] - lower[a]), (d[:, a], upper[a] - p0[:, a])):
                parallel = pk == 0
                keep &= ~(parallel & (qk < 0))
                r = qk / pk
                neg = (pk < 0) & ~parallel
                pos = (pk > 0) & ~parallel
                t0 = np.where(neg, np.maximum(t0, r), t0)
                t1 = np.where(pos, np.minimum(t1, r), t1)
    keep &= t0 < t1
    q0 = p0 + t0[:, None] * d
    q1 = p0 + t1[:, None] * d
    q0 = np.clip(q0, lower, upper)
    q1 = np.clip(q1, lower, upper)
    return q0, q1, keep


def _circumcenters(pts: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    a = pts[simplices[:, 0]]
    b = pts[simplices[:, 1]] - a
    c = pts[simplices[:, 2]] - a
    dd = 2 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    b2, c2 = (b * b).sum(1), (c * c).sum(1)
    ux = (c[:, 1] * b2 - b[:, 1] * c2) / dd
    uy = (b[:, 0] * c2 - c[:, 0] * b2) / dd
    return a + np.stack([ux, uy], axis=1)


def _delaunay(pts: np.ndarray, scale: float) -> Delaunay:
    try:
        return Delaunay(pts)
    except QhullError:
        log.warning("degenerate generator set; perturbing by %g and retrying", 1e-12 * scale)
        jitter = np.random.default_rng(0).uniform(-1, 1, pts.shape) * 1e-12 * scale
        return Delaunay(pts + jitter, qhull_options="QJ")


def voronoi_edges(generators: PointConfiguration, window: Window | None = None) -> SegmentSet:
    """Voronoi skeleton of the generators (dual of the Delaunay triangulation), clipped to ``window``.

    If the generators live on a torus the periodic tessellation is computed from
    the 3x3 block of periodic images.
    """
    window = window or generators.window
    if window.dimension != 2 or generators.dimension != 2:
        raise InvalidInputError("Voronoi skeletons are implemented in 2-D only")
    pts = np.asarray(generators.coords)
    n = len(pts)
    idx = np.arange(n)
    if generators.window.torus and n:
        ext = generators.window.extents
        shifts = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)]) * ext
        pts = (pts[None, :, :] + shifts[:, None, :]).reshape(-1, 2)
        idx = np.tile(idx, 9)
    lower, upper = window.lower_arr, window.upper_arr
    scale = float(np.linalg.norm(window.extents)) + (float(np.ptp(pts, axis=0).max()) if len(pts) else 0.0)
    if len(pts) < 2:
        return SegmentSet(np.empty((0, 4)), np.empty((0, 2), dtype=np.int64), generators.coords)
    far = 4 * scale + 1.0

    centered = pts - pts.mean(0)
    if len(pts) == 2 or np.linalg.svd(centered, compute_uv=False)[-1] <= 1e-12 * scale:
        # collinear generators: the cells are slabs bounded by bisectors of consecutive points
        axis = np.linalg.svd(centered)[2][0]
        order = np.argsort(centered @ axis)
        a, b = pts[order[:-1]], pts[order[1:]]
        mid = (a + b) / 2
        nrm = np.array([-axis[1], axis[0]])
        p0 = mid - far * nrm
        p1 = mid + far * nrm
        pairs = idx[np.stack([order[:-1], order[1:]], axis=1)]
    else:
        tri = _delaunay(pts, scale)
        simp = tri.simplices
        cc = _circumcenters(pts, simp)
        s_idx, v_idx = np.nonzero(np.ones_like(simp, dtype=bool))
        nb = tri.neighbors[s_idx, v_idx]
        ea = simp[s_idx, (v_idx + 1) % 3]
        eb = simp[s_idx, (v_idx + 2) % 3]
        interior = (nb >= 0) & (s_idx < nb)
        hull = nb < 0
        p0_in, p1_in = cc[s_idx[interior]], cc[nb[interior]]
        # hull edges: ray from the circumcenter along the outward normal
        a, b = pts[ea[hull]], pts[eb[hull]]
        opp = pts[simp[s_idx[hull], v_idx[hull]]]
        t = b - a
        nrm = np.stack([t[:, 1], -t[:, 0]], axis=1)
        flip = ((nrm * (opp - a)).sum(1) > 0)
        nrm[flip] *= -1
        nrm /= np.linalg.norm(nrm, axis=1)[:, None]
        start = cc[s_idx[hull]]
        # long enough to leave the window from wherever the ray starts
        reach = far + np.linalg.norm(start - window.center, axis=1)
        p0 = np.concatenate([p0_in, start])
        p1 = np.concatenate([p1_in, start + reach[:, None] * nrm])
        pairs = np.concatenate(
            [np.stack([ea[interior], eb[interior]], 1), np.stack([ea[hull], eb[hull]], 1)]
        )
        pairs = idx[pairs]
    q0, q1, keep = clip_segments(p0, p1, lower, upper)
    segs = np.concatenate([q0, q1], axis=1)[keep]
    pairs = np.sort(pairs[keep], axis=1)
    nonzero = np.hypot(segs[:, 2] - segs[:, 0], segs[:, 3] - segs[:, 1]) > 0
    return SegmentSet(segs[nonzero], pairs[nonzero], generators.coords)


def sample_on_segments(segments: SegmentSet, lam_lin: float, window: Window, seed=None, norm: Norm | None = None) -> PointConfiguration:
    """Poisson process with intensity ``lam_lin`` times the length measure of the segments."""
    if lam_lin < 0:
        raise InvalidInputError("linear intensity must be nonnegative")
    rng = _rng(seed)
    total = segments.total_length
    _check_budget(lam_lin * total)
    n = rng.poisson(lam_lin * total) if total > 0 else 0
    if n == 0:
        coords = np.empty((0, window.dimension))
    else:
        lengths = segments.lengths
        which = rng.choice(len(lengths), size=n, p=lengths / lengths.sum())
        t = rng.random(n)[:, None]
        s = segments.segments[which]
        coords = s[:, :2] + t * (s[:, 2:] - s[:, :2])
        coords = np.clip(coords, window.lower_arr, window.upper_arr)
    return PointConfiguration(window, coords, None, norm or Norm(), {"generator": "segments", "lam_lin": float(lam_lin)})


def cox_margin(lam_pv: float) -> float:
    return 3.0 / math.sqrt(lam_pv)


def sample_cox_voronoi(lam_pv: float, lam_lin: float, window: Window, seed=None, norm: Norm | None = None, return_skeleton: bool = False):
    """Cox process driven by the edge-length measure of a Poisson-Voronoi tessellation.

    Hard windows draw the generators on the window enlarged by ``3 / sqrt(lam_pv)`` per side.
    """
    if window.dimension != 2:
        raise InvalidInputError("cox_voronoi is 2-D only")
    if lam_pv < 0 or lam_lin < 0:
        raise InvalidInputError("rates must be nonnegative")
    rng = _rng(seed)
    gen_seed, pts_seed = (int(s) for s in rng.integers(0, 2**63 - 1, size=2))
    if lam_pv > 0:
        gen_window = window if window.torus else Window(window.lower, window.upper).enlarged(cox_margin(lam_pv))
        generators = sample_poisson(lam_pv, gen_window, gen_seed)
        skeleton = voronoi_edges(generators, window)
    else:
        skeleton = SegmentSet(np.empty((0, 4)))
    if skeleton.total_length == 0:
        warnings.warn("empty Voronoi skeleton; returning an empty configuration", RuntimeWarning, stacklevel=2)
    config = sample_on_segments(skeleton, lam_lin, window, pts_seed, norm)
    config = config.with_meta(
        generator="cox_voronoi", lam_pv=float(lam_pv), lam_lin=float(lam_lin),
        seed=seed if isinstance(seed, int) else "none", skeleton_length=skeleton.total_length,
    )
    return (config, skeleton) if return_skeleton else config


# --- Strauss birth-death-move sampler ----------------------------------------


@njit(cache=True, error_model="numpy")
def _count_within(xs, n, y, skip, r, lower, ext, torus, p):
    d = xs.shape[1]
    c = 0
    for j in range(n):
        if j == skip:
            continue
        acc = 0.0
        for a in range(d):
            diff = xs[j, a] - y[a]
            if torus:
                diff -= ext[a] * np.round(diff / ext[a])
            diff = abs(diff)
            if p == np.inf:
                if diff > acc:
                    acc = diff
            elif p == 2.0:
                acc += diff * diff
            else:
                acc += diff**p
        if p == 2.0:
            acc = np.sqrt(acc)
        elif p != np.inf:
            acc = acc ** (1.0 / p)
        if acc < r:
            c += 1
    return c


@njit(cache=True, error_model="numpy")
def _strauss_steps(xs, n, u, lam_vol, cost, r, lower, ext, torus, p, p_birth, p_death):
    """Run the proposals in ``u``; returns (n, steps done). Stops early if ``xs`` is full."""
    d = xs.shape[1]
    y = np.empty(d)
    for s in range(u.shape[0]):
        kind = u[s, 0]
        if kind < p_birth:
            if n == xs.shape[0]:
                return n, s
            for a in range(d):
                y[a] = lower[a] + u[s, 2 + a] * ext[a]
            t = _count_within(xs, n, y, -1, r, lower, ext, torus, p)
            ratio = lam_vol * p_death / (p_birth * (n + 1))
            if t > 0:
                ratio *= np.exp(-cost * t)
            if u[s, 2 + d] < ratio:
                for a in range(d):
                    xs[n, a] = y[a]
                n += 1
        elif kind < p_birth + p_death:
            if n == 0:
                continue
            i = min(int(u[s, 1] * n), n - 1)
            t = _count_within(xs, n, xs[i], i, r, lower, ext, torus, p)
            ratio = n * p_birth / (lam_vol * p_death)
            if t > 0:
                ratio *= np.exp(cost * t)
            if u[s, 2 + d] < ratio:
                for a in range(d):
                    xs[i, a] = xs[n - 1, a]
                n -= 1
        else:
            if n == 0:
                continue
            i = min(int(u[s, 1] * n), n - 1)
            for a in range(d):
                y[a] = lower[a] + u[s, 2 + a] * ext[a]
            t_new = _count_within(xs, n, y, i, r, lower, ext, torus, p)
            t_old = _count_within(xs, n, xs[i], i, r, lower, ext, torus, p)
            delta = t_new - t_old
            ratio = 1.0
            if delta != 0:
                ratio = np.exp(-cost * delta)
            if u[s, 2 + d] < ratio:
                for a in range(d):
                    xs[i, a] = y[a]
    return n, u.shape[0]


def sample_strauss(
    lam_act: float,
    interaction_cost: float,
    interaction_range: float,
    window: Window,
    sweeps: int = STRAUSS_BURN_IN_SWEEPS,
    seed=None,
    norm: Norm | None = None,
    chunk: int = 1 << 20,
) -> PointConfiguration:
    """Strauss process by birth-death-move Metropolis-Hastings from the empty configuration.

    Target density relative to the unit-rate Poisson process on the window is
    ``lam_act**n * exp(-interaction_cost * #{pairs closer than interaction_range})``;
    ``interaction_cost = inf`` gives a hard core. One sweep is ``round(lam_act * |W|)``
    proposals.
    """
    if lam_act < 0 or not interaction_cost >= 0:
        raise InvalidInputError("lam_act and interaction_cost must be nonnegative")
    if not interaction_range > 0:
        raise InvalidInputError("interaction range must be positive")
    if sweeps < 1:
        raise InvalidInputError("sweeps must be >= 1")
    norm = norm or Norm()
    lam_vol = lam_act * window.volume
    _check_budget(lam_vol)
    if sweeps < STRAUSS_BURN_IN_SWEEPS:
        warnings.warn(f"{sweeps} sweeps is below the burn-in floor of {STRAUSS_BURN_IN_SWEEPS}", RuntimeWarning, stacklevel=2)
    d = window.dimension
    rng = _rng(seed)
    per_sweep = max(1, int(round(lam_vol)))
    total = sweeps * per_sweep
    cap = int(lam_vol + 10 * math.sqrt(lam_vol) + 64)
    xs = np.zeros((cap, d))
    n = 0
    lower, ext = window.lower_arr.copy(), window.extents.copy()
    done = 0
    while done < total:
        u = rng.random((min(chunk, total - done), d + 3))
        pos = 0
        while pos < len(u):
            n, k = _strauss_steps(xs, n, u[pos:], lam_vol, float(interaction_cost), float(interaction_range),
                                  lower, ext, window.torus, norm.p, P_BIRTH, P_DEATH)
            pos += k
            if pos < len(u):
                xs = np.concatenate([xs, np.zeros_like(xs)])
        done += len(u)
    coords = xs[:n]
    if window.torus:
        coords = window.wrap(coords)
    meta = {
        "generator": "strauss", "lam_act": float(lam_act), "interaction_cost": float(interaction_cost),
        "interaction_range": float(interaction_range), "sweeps": int(sweeps),
        "seed": seed if isinstance(seed, int) else "none",
    }
    return PointConfiguration(window, coords, None, norm, meta)


# --- specs -------------------------------------------------------------------

PROCESS_KINDS = ("poisson", "cox_voronoi", "strauss", "shifted_lattice")


@dataclass(frozen=True)
class ProcessSpec:
    kind: str = "poisson"
    intensity: float = 1.0  # poisson: lambda; strauss: lam_act
    lam_pv: float = 0.05
    lam_lin: float = 1.0
    interaction_cost: float = 0.0
    interaction_range: float = 1.0
    sweeps: int = STRAUSS_BURN_IN_SWEEPS
    spacing: float = 1.0

    def __post_init__(self):
        if self.kind not in PROCESS_KINDS:
            raise InvalidInputError(f"unknown process kind {self.kind!r}")
        for name in ("intensity", "lam_pv", "lam_lin", "interaction_cost"):
            if not getattr(self, name) >= 0:
                raise InvalidInputError(f"{name} must be >= 0")
        if not self.interaction_range > 0:
            raise InvalidInputError("interaction_range must be > 0")
        if self.sweeps < 1:
            raise InvalidInputError("sweeps must be >= 1")
        if not self.spacing > 0:
            raise InvalidInputError("spacing must be > 0")

    def sample(self, window: Window, seed=None, norm: Norm | None = None) -> PointConfiguration:
        if self.kind == "poisson":
            return sample_poisson(self.intensity, window, seed, norm)
        if self.kind == "cox_voronoi":
            return sample_cox_voronoi(self.lam_pv, self.lam_lin, window, seed, norm)
        if self.kind == "strauss":
            return sample_strauss(self.intensity, self.interaction_cost, self.interaction_range, window,
                                  self.sweeps, seed, norm)
        return sample_shifted_lattice(self.spacing, window, seed, norm=norm)


MARK_KINDS = ("constant", "exponential", "lognormal", "degenerate_zero")


@dataclass(frozen=True)
class MarkSpec:
    kind: str = "constant"
    value: float = 1.0  # constant
    rate: float = 1.0  # exponential
    mu: float = 0.0  # lognormal
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in MARK_KINDS:
            raise InvalidInputError(f"unknown mark kind {self.kind!r}")
        if self.kind == "constant" and not self.value > 0:
            raise InvalidInputError("constant mark must be > 0")
        if self.kind == "exponential" and not self.rate > 0:
            raise InvalidInputError("exponential rate must be > 0")
        if self.kind == "lognormal" and not self.sigma > 0:
            raise InvalidInputError("lognormal sigma must be > 0")

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n, float(self.value))
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.rate, n)
        if self.kind == "lognormal":
            return rng.lognormal(self.mu, self.sigma, n)
        return np.zeros(n)


def attach_marks(config: PointConfiguration, markspec: MarkSpec, seed=None) -> PointConfiguration:
    """Replace the marks by i.i.d. draws from ``markspec``; geometry is untouched."""
    marks = markspec.draw(config.n, _rng(seed))
    return config.with_marks(marks).with_meta(marks=markspec.kind)
