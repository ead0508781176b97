import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from percolab import InvalidInputError, ResourceLimitError
from percolab.geom import PointConfiguration, Window
from percolab.procgen import (
    MarkSpec,
    ProcessSpec,
    SegmentSet,
    attach_marks,
    child_seed,
    clip_segments,
    cox_margin,
    sample_cox_voronoi,
    sample_on_segments,
    sample_poisson,
    sample_shifted_lattice,
    sample_strauss,
    voronoi_edges,
)


def equidistance_residual(segments: SegmentSet, generators: PointConfiguration, samples=5):
    """Max over points along each segment of (2nd nearest - nearest) generator distance."""
    g = generators.coords
    worst = 0.0
    for s in segments.segments.reshape(-1, 2, 2):
        for t in np.linspace(0, 1, samples):
            x = s[0] + t * (s[1] - s[0])
            d = np.sort(np.sqrt(((g - x) ** 2).sum(axis=1)))
            worst = max(worst, d[1] - d[0])
    return worst


def test_poisson_empty_and_deterministic():
    w = Window.box(10)
    assert sample_poisson(0.0, w, seed=1).n == 0
    assert sample_poisson(1.0, w, seed=42) == sample_poisson(1.0, w, seed=42)
    assert sample_poisson(1.0, w, seed=42) != sample_poisson(1.0, w, seed=43)


def test_poisson_count_mean_and_dispersion():
    w = Window.box(100)
    counts = np.array([sample_poisson(1.0, w, seed=child_seed(7, r)).n for r in range(200)])
    assert abs(counts.mean() - 10000) < 300
    assert counts.var(ddof=1) / counts.mean() == pytest.approx(1.0, abs=0.3)


def test_poisson_budget():
    with pytest.raises(ResourceLimitError):
        sample_poisson(1.0, Window.box(1e5), seed=0)
    with pytest.raises(InvalidInputError):
        sample_poisson(-1.0, Window.box(1), seed=0)


def test_child_seed_stable():
    assert child_seed(1, 0) == child_seed(1, 0)
    assert child_seed(1, 0) != child_seed(1, 1)
    assert 0 <= child_seed(2**40, 3) < 2**63


def test_shifted_lattice_examples():
    w = Window((0, 0), (3, 3))
    lat = sample_shifted_lattice(1.0, w, shift=(0.5, 0.5))
    assert lat.n == 9
    a, b = sample_shifted_lattice(1.0, w, seed=1), sample_shifted_lattice(1.0, w, seed=2)
    if a.n == b.n:
        diff = a.coords - b.coords
        assert np.allclose(diff, diff[0])
    # rigid translation: sorted lattice offsets agree modulo spacing
    fa = np.mod(a.coords, 1.0)
    assert np.allclose(fa, fa[0])


def test_voronoi_cross():
    g = PointConfiguration(Window.box(4), np.array([[1.0, 1.0], [3.0, 1.0], [1.0, 3.0], [3.0, 3.0]]))
    seg = voronoi_edges(g, Window.box(4))
    assert seg.total_length == pytest.approx(8.0)
    assert equidistance_residual(seg, g) < 1e-9
    for s in seg.segments.reshape(-1, 2, 2):
        assert np.allclose(s[:, 0], 2.0) or np.allclose(s[:, 1], 2.0)


def test_voronoi_equilateral_rays():
    h = math.sqrt(3) / 2
    pts = np.array([[4.0, 4.0], [5.0, 4.0], [4.5, 4.0 + h]])
    g = PointConfiguration(Window.box(10), pts)
    seg = voronoi_edges(g, Window.box(10))
    assert len(seg) == 3
    center = np.array([4.5, 4.0 + h / 3])
    starts = [s[0] if np.linalg.norm(s[0] - center) < np.linalg.norm(s[1] - center) else s[1]
              for s in seg.segments.reshape(-1, 2, 2)]
    assert np.allclose(starts, center)
    assert equidistance_residual(seg, g) < 1e-9


def test_voronoi_two_generators_bisector():
    g = PointConfiguration(Window.box(10), np.array([[2.0, 5.0], [6.0, 5.0]]))
    seg = voronoi_edges(g, Window.box(10))
    assert len(seg) == 1 and seg.total_length == pytest.approx(10.0)
    assert np.allclose(seg.segments[0, [0, 2]], 4.0)


def test_voronoi_collinear_generators():
    g = PointConfiguration(Window.box(10), np.array([[1.0, 5.0], [3.0, 5.0], [6.0, 5.0], [9.0, 5.0]]))
    seg = voronoi_edges(g, Window.box(10))
    assert seg.total_length == pytest.approx(30.0, rel=1e-6)
    assert equidistance_residual(seg, g) < 1e-6


def test_voronoi_random_equidistance():
    w = Window.box(20)
    g = sample_poisson(1.0, w, seed=3)
    seg = voronoi_edges(g, w)
    assert equidistance_residual(seg, g) < 1e-9
    assert seg.total_length == pytest.approx(seg.lengths.sum(), rel=1e-9)


def test_torus_length_density():
    w = Window.box(50, boundary="torus")
    g = sample_poisson(1.0, w, seed=11)
    seg = voronoi_edges(g, w)
    assert seg.total_length / w.volume == pytest.approx(2.0, rel=0.05)


def test_clip_segments_liang_barsky():
    p0 = np.array([[-1.0, 0.5], [0.2, 0.2], [2.0, 2.0]])
    p1 = np.array([[2.0, 0.5], [0.4, 0.4], [3.0, 3.0]])
    a, b, keep = clip_segments(p0, p1, (0, 0), (1, 1))
    assert keep.tolist() == [True, True, False]
    assert np.allclose(a[0], [0, 0.5]) and np.allclose(b[0], [1, 0.5])
    assert np.allclose(a[1], [0.2, 0.2]) and np.allclose(b[1], [0.4, 0.4])


def test_cox_empty_and_margin():
    w = Window.box(20)
    assert sample_cox_voronoi(1.0, 0.0, w, seed=1).n == 0
    assert cox_margin(4.0) == pytest.approx(1.5)
    with pytest.warns(RuntimeWarning):
        assert sample_cox_voronoi(0.0, 1.0, w, seed=1).n == 0


def test_points_on_fixed_segment():
    seg = SegmentSet(np.array([[1.0, 5.0, 11.0, 5.0]]))
    w = Window.box(12)
    counts = []
    for r in range(500):
        c = sample_on_segments(seg, 2.0, w, seed=child_seed(9, r))
        assert np.allclose(c.coords[:, 1], 5.0)
        counts.append(c.n)
    assert abs(np.mean(counts) - 20) < 0.6


def test_cox_intensity():
    w = Window.box(50)
    counts = [sample_cox_voronoi(1.0, 1.0, w, seed=child_seed(4, r)).n for r in range(3)]
    assert np.mean(counts) / w.volume == pytest.approx(2.0, rel=0.1)


def test_strauss_cost_zero_is_poisson_mean():
    w = Window.box(10)
    counts = np.array([sample_strauss(1.0, 0.0, 1.0, w, seed=child_seed(2, r)).n for r in range(200)])
    assert abs(counts.mean() - 100) < 3 * math.sqrt(100 / 200) * 1.5


def test_strauss_hard_core():
    w = Window.box(15)
    for r in range(10):
        c = sample_strauss(1.0, math.inf, 1.0, w, seed=r)
        d = c.pairwise()
        d[np.diag_indices(c.n)] = np.inf
        assert c.n > 0 and d.min() >= 1.0


def test_strauss_torus_hard_core():
    w = Window.box(8, boundary="torus")
    c = sample_strauss(1.0, math.inf, 1.0, w, seed=5)
    d = c.pairwise()
    d[np.diag_indices(c.n)] = np.inf
    assert d.min() >= 1.0


def test_strauss_repulsion_below_binomial():
    w = Window.box(20)
    rng = np.random.default_rng(0)
    strauss_pairs, ref_pairs = [], []
    for r in range(200):
        c = sample_strauss(2.0, 1.0, 1.0, w, seed=child_seed(3, r))
        d = c.pairwise()
        strauss_pairs.append(int(np.sum(d[np.triu_indices(c.n, 1)] < 1.0)))
        u = PointConfiguration(w, rng.random((c.n, 2)) * 20)
        du = u.pairwise()
        ref_pairs.append(int(np.sum(du[np.triu_indices(c.n, 1)] < 1.0)))
    assert np.mean(strauss_pairs) < np.mean(ref_pairs)


def test_strauss_deterministic_and_warns():
    w = Window.box(5)
    assert sample_strauss(1.0, 0.5, 1.0, w, seed=3) == sample_strauss(1.0, 0.5, 1.0, w, seed=3)
    with pytest.warns(RuntimeWarning):
        sample_strauss(1.0, 0.5, 1.0, w, sweeps=10, seed=3)


def test_marks():
    c = sample_poisson(1.0, Window.box(100), seed=1)
    assert np.all(attach_marks(c, MarkSpec("constant", value=1.0), 0).marks == 1.0)
    m = attach_marks(c, MarkSpec("exponential", rate=2.0), 0)
    assert abs(m.marks.mean() - 0.5) < 0.015
    assert np.array_equal(m.coords, c.coords)
    assert np.all(attach_marks(c, MarkSpec("degenerate_zero"), 0).marks == 0)
    with pytest.raises(InvalidInputError):
        MarkSpec("exponential", rate=0.0)


def test_process_spec_dispatch():
    w = Window.box(10)
    for kind in ("poisson", "strauss", "shifted_lattice", "cox_voronoi"):
        spec = ProcessSpec(kind, lam_pv=0.5)
        assert spec.sample(w, 1) == spec.sample(w, 1)
    with pytest.raises(InvalidInputError):
        ProcessSpec("ginibre")


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 2.0), st.integers(0, 2**32))
def test_poisson_points_inside_window(lam, seed):
    w = Window((-3.0, 2.0), (4.0, 5.0))
    c = sample_poisson(lam, w, seed)
    assert np.all(w.contains(c.coords))
