"""Adaptive transmission radii: a Gibbs sampler for radii penalised by disk overlap.

Given fixed positions ``x_i``, the radii have density
``exp(-beta * sum_{i<j} v(|x_i - x_j|, rho_i, rho_j))`` against a product prior, with the
hinge potential ``v(x, rho, rho') = max(rho + rho' - x, 0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInputError
from .geom import PointConfiguration, SpatialIndex, Window, query_radius
from .procgen import child_seed, sample_poisson


def potential_eval(x, rho, rho_other):
    """Hinge pair potential ``max(rho + rho_other - x, 0)``."""
    return np.maximum(np.asarray(rho, dtype=float) + rho_other - x, 0.0)


@dataclass(frozen=True)
class ExponentialPrior:
    rate: float = 1.0

    def __post_init__(self):
        if not self.rate > 0:
            raise InvalidInputError("prior rate must be > 0")

    def sample(self, rng: np.random.Generator, size=None):
        return rng.exponential(1.0 / self.rate, size)

    def log_density(self, rho):
        rho = np.asarray(rho, dtype=float)
        return np.where(rho >= 0, math.log(self.rate) - self.rate * rho, -np.inf)

    def second_moment(self) -> float:
        return 2.0 / self.rate**2

    def cdf(self, rho):
        return -np.expm1(-self.rate * np.maximum(rho, 0.0))


@dataclass(frozen=True)
class FixedPrior:
    """Deterministic radius. Only usable at ``beta = 0`` (no conditional sampler)."""

    radius: float = 1.0

    def sample(self, rng: np.random.Generator, size=None):
        return np.full(size, float(self.radius)) if size is not None else float(self.radius)

    def second_moment(self) -> float:
        return float(self.radius) ** 2


@dataclass(frozen=True)
class RadiiState:
    config: PointConfiguration
    radii: np.ndarray
    beta: float = 1.0
    prior: ExponentialPrior = ExponentialPrior()
    sweep: int = 0

    def __post_init__(self):
        radii = np.array(self.radii, dtype=float).reshape(-1)
        if radii.shape != (self.config.n,):
            raise InvalidInputError("need one radius per point")
        if np.any(~(radii >= 0)):
            raise InvalidInputError("radii must be nonnegative")
        if not self.beta >= 0:
            raise InvalidInputError("beta must be >= 0")
        radii.setflags(write=False)
        object.__setattr__(self, "radii", radii)

    @classmethod
    def from_prior(cls, config: PointConfiguration, beta: float, prior=ExponentialPrior(), seed=None) -> RadiiState:
        rng = np.random.default_rng(seed)
        return cls(config, prior.sample(rng, config.n), beta, prior)


def total_energy_bruteforce(state: RadiiState) -> float:
    n = state.config.n
    if n < 2:
        return 0.0
    iu, ju = np.triu_indices(n, k=1)
    d = state.config.pairwise()[iu, ju]
    return float(potential_eval(d, state.radii[iu], state.radii[ju]).sum())


def total_energy(state: RadiiState, method: str = "grid") -> float:
    """``sum_{i<j} v(d_ij, rho_i, rho_j)``; ``method`` is ``"grid"`` or ``"brute"``."""
    if method == "brute":
        return total_energy_bruteforce(state)
    config, radii = state.config, state.radii
    if config.n < 2 or radii.max() == 0:
        return 0.0
    index = SpatialIndex(config)
    rmax = float(radii.max())
    total = 0.0
    for i in range(config.n):
        js = query_radius(index, i, radii[i] + rmax)
        js = js[js > i]
        if len(js):
            d = config.distances_from(config.coords[i], js)
            total += float(potential_eval(d, radii[i], radii[js]).sum())
    return total


def conditional_pieces(dists: np.ndarray, other_radii: np.ndarray, beta: float, rate: float):
    """Piecewise-exponential form of the single-site conditional density of a radius.

    Returns ``(starts, rates, log_masses)``: on ``[starts[m], starts[m+1])`` (last piece
    unbounded) the unnormalised density is ``exp(logf(starts[m]) - rates[m] * (rho - starts[m]))``.
    """
    b = np.asarray(dists, dtype=float) - np.asarray(other_radii, dtype=float)
    if beta == 0 or len(b) == 0:
        return np.zeros(1), np.array([rate]), np.array([-math.log(rate)])
    c0 = int(np.sum(b <= 0))
    bp = np.sort(b[b > 0])
    starts = np.concatenate([[0.0], bp])
    rates = rate + beta * (c0 + np.arange(len(starts)))
    widths = np.diff(starts)
    # neighbors already overlapping at rho = 0 contribute a constant factor
    logf = -beta * float(np.sum(np.maximum(-b, 0.0))) + np.concatenate([[0.0], -np.cumsum(rates[:-1] * widths)])
    # piece mass: exp(logf) * (1 - exp(-rate * width)) / rate
    log_mass = logf - np.log(rates)
    log_mass[:-1] += np.log(-np.expm1(-rates[:-1] * widths))
    return starts, rates, log_mass


def sample_piecewise(starts, rates, log_mass, rng: np.random.Generator) -> float:
    w = np.exp(log_mass - log_mass.max())
    m = int(rng.choice(len(w), p=w / w.sum()))
    u = rng.random()
    if m == len(starts) - 1:
        return float(starts[m] - math.log1p(-u) / rates[m])
    width = starts[m + 1] - starts[m]
    # inverse cdf of an exponential truncated to [0, width)
    return float(starts[m] - math.log1p(u * math.expm1(-rates[m] * width)) / rates[m])


def conditional_radius_sample(state: RadiiState, i: int, seed=None) -> float:
    """Exact draw of ``rho_i`` given the other radii (exponential prior, hinge potential)."""
    rng = np.random.default_rng(seed)
    prior = state.prior
    if state.beta == 0 or state.config.n < 2:
        return float(prior.sample(rng))
    if not isinstance(prior, ExponentialPrior):
        raise NotImplementedError("only the exponential prior has an exact conditional sampler")
    others = np.delete(np.arange(state.config.n), i)
    d = state.config.distances_from(state.config.coords[i], others)
    pieces = conditional_pieces(d, state.radii[others], state.beta, prior.rate)
    return sample_piecewise(*pieces, rng)


def gibbs_sweep(state: RadiiState, seed=None) -> RadiiState:
    """One systematic scan ``i = 0..n-1`` of single-site conditional resampling."""
    rng = np.random.default_rng(seed)
    config, n = state.config, state.config.n
    radii = np.array(state.radii)
    if state.beta == 0 or n < 2:
        radii = np.asarray(state.prior.sample(rng, n), dtype=float).reshape(n)
        return replace(state, radii=radii, sweep=state.sweep + 1)
    if not isinstance(state.prior, ExponentialPrior):
        raise NotImplementedError("only the exponential prior has an exact conditional sampler")
    dist = config.pairwise()
    rate = state.prior.rate
    for i in range(n):
        mask = np.arange(n) != i
        pieces = conditional_pieces(dist[i, mask], radii[mask], state.beta, rate)
        radii[i] = sample_piecewise(*pieces, rng)
    return replace(state, radii=radii, sweep=state.sweep + 1)


@dataclass
class Trace:
    sweeps: list
    energy: list
    mean_radius: list
    max_radius: list
    final: RadiiState

    HEADER = ("sweep", "total_energy", "mean_radius", "max_radius")

    def rows(self):
        return list(zip(self.sweeps, self.energy, self.mean_radius, self.max_radius))


def run_chain(state: RadiiState, n_samples: int, seed=None, burn_in: int = 200, thin: int = 5) -> Trace:
    """Burn in, then record ``n_samples`` states every ``thin`` sweeps."""
    rng = np.random.default_rng(seed)
    for _ in range(burn_in):
        state = gibbs_sweep(state, rng)
    trace = Trace([], [], [], [], state)
    for _ in range(n_samples):
        for _ in range(thin):
            state = gibbs_sweep(state, rng)
        trace.sweeps.append(state.sweep)
        trace.energy.append(total_energy(state, "brute"))
        trace.mean_radius.append(float(state.radii.mean()) if len(state.radii) else 0.0)
        trace.max_radius.append(float(state.radii.max()) if len(state.radii) else 0.0)
    trace.final = state
    return trace


def coverage_count(state: RadiiState, location) -> int:
    """Number of points ``i`` with ``|x_i - location| < rho_i``."""
    if state.config.n == 0:
        return 0
    d = state.config.distances_from(np.asarray(location, dtype=float))
    return int(np.sum(d < state.radii))


@dataclass
class CampbellResult:
    mc_estimate: float
    stderr: float
    analytic: float

    @property
    def z(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.mc_estimate == self.analytic else math.inf
        return (self.mc_estimate - self.analytic) / self.stderr


def campbell_coverage_check(lam: float, prior, window: Window, replicates: int, seed: int) -> CampbellResult:
    """Monte Carlo mean number of independent-radius disks covering the window center,
    against ``lam * pi * E[rho^2]``. The window should exceed the radius tail."""
    if window.dimension != 2:
        raise InvalidInputError("coverage check is 2-D")
    analytic = lam * math.pi * prior.second_moment()
    counts = []
    for r in range(replicates):
        s = child_seed(seed, r)
        config = sample_poisson(lam, window, s)
        radii = np.asarray(prior.sample(np.random.default_rng(child_seed(s, 1)), config.n), dtype=float).reshape(config.n)
        st = RadiiState(config, radii, 0.0, prior)
        counts.append(coverage_count(st, window.center))
    counts = np.array(counts, dtype=float)
    stderr = float(counts.std(ddof=1) / math.sqrt(len(counts))) if len(counts) > 1 else 0.0
    return CampbellResult(float(counts.mean()), stderr, analytic)
