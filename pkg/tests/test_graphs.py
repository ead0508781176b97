import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from percolab import InvalidInputError
from percolab.geom import MarkedPoint, Point, Window
from percolab.graphs import (
    EUCLIDEAN,
    BuilderSpec,
    OrderingSpec,
    PathLoss,
    Region,
    SinrParams,
    build_bknn,
    build_f_k1k2,
    build_fknn,
    build_gilbert,
    build_kth_nn_directed,
    build_local_extreme,
    build_sinr,
    build_uknn,
    check_monotone,
    f_closer,
    gamma_for_degree_bound,
    nn_sequence,
)
from percolab.procgen import sample_poisson

import oracles
from conftest import line_config, random_config

SINR_ORDER = OrderingSpec("sinr_order", PathLoss("power_law", 4.0))


def mp(i, x, mark=1.0):
    return MarkedPoint(Point(i, tuple(np.atleast_1d(x).astype(float))), mark)


def edges(g):
    return g.edge_set()


# --- ordering -------------------------------------------------------------------


def test_f_closer_examples():
    assert f_closer(EUCLIDEAN, (0.0,), mp(1, 1.0), mp(2, 3.0)) == "first"
    f2 = OrderingSpec("sinr_order", PathLoss("power_law", 2.0))
    assert f_closer(f2, (0.0, 0.0), mp(1, (2.0, 0.0), 8.0), mp(2, (1.0, 0.0), 1.0)) == "first"
    ft = OrderingSpec("sinr_order", PathLoss("truncated", 4.0))
    assert f_closer(ft, (0.0,), mp(1, 0.5), mp(2, 0.7)) == "first"
    assert f_closer(ft, (0.0,), mp(1, 0.7), mp(2, 0.5)) == "second"


def test_f_closer_exact_tie_breaks_by_coordinates():
    # equal distance and equal f: lexicographic coordinates decide
    assert f_closer(EUCLIDEAN, (0.0,), mp(5, 1.0), mp(2, -1.0)) == "second"


def test_orderings_monotone():
    d = np.linspace(0.01, 50, 500)
    assert check_monotone(EUCLIDEAN, [0.5, 1, 2], d)
    for kind in ("power_law", "truncated", "shifted"):
        assert check_monotone(OrderingSpec("sinr_order", PathLoss(kind, 3.0)), [0.5, 1, 2], d)


def test_pathloss_values():
    assert PathLoss("power_law", 2.0)(2.0) == 0.25
    assert PathLoss("truncated", 2.0)(0.5) == 1.0
    assert PathLoss("shifted", 2.0)(1.0) == 0.25
    assert PathLoss("power_law", 4.0).radius_above(1 / 16) == pytest.approx(2.0)
    assert PathLoss("truncated", 4.0).radius_above(2.0) == 0.0
    with pytest.raises(InvalidInputError):
        PathLoss("exp")


# --- 1-D spec examples ------------------------------------------------------------


def test_nn_sequence(example4):
    assert nn_sequence(example4, 2, EUCLIDEAN, 3) == [1, 0, 3]
    assert nn_sequence(example4, 2, EUCLIDEAN, 0) == []


def test_fknn_examples(example4):
    assert edges(build_fknn(example4, 2)) == {(0, 1), (0, 2), (1, 2)}
    assert edges(build_fknn(example4, 1)) == {(0, 1)}
    assert edges(build_fknn(example4, 3)) == {(a, b) for a in range(4) for b in range(a + 1, 4)}


def test_bknn_examples(example4):
    assert edges(build_bknn(example4, 2)) == edges(build_fknn(example4, 2, EUCLIDEAN))
    assert edges(build_bknn(line_config([0, 5]), 3)) == {(0, 1)}


def test_uknn_examples(example4):
    g = build_uknn(example4, 2)
    assert edges(g) == {(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)}
    assert g.degrees()[1] == 3
    assert build_uknn(example4, 3).n_edges == 6


def test_gilbert_examples(example4):
    assert edges(build_gilbert(example4, 2.5)) == {(0, 1), (1, 2)}
    assert build_gilbert(example4, 100).n_edges == 6
    assert build_gilbert(example4, 0.5).n_edges == 0
    # strict inequality at the radius
    assert edges(build_gilbert(example4, 2.0)) == {(0, 1)}


def test_sinr_example():
    c = line_config([0, 1, 2], marks=[1.0, 1.0, 1.0])
    params = SinrParams(PathLoss("truncated", 4.0), tau=0.5, gamma=0.5, noise=0.1)
    assert edges(build_sinr(c, params)) == {(0, 1), (1, 2)}


def test_sinr_two_points():
    pl = PathLoss("power_law", 2.0)
    c = line_config([0, 2], marks=[3.0, 3.0])  # received power 0.75
    assert build_sinr(c, SinrParams(pl, 1.0, 0.5, 0.7)).n_edges == 1
    assert build_sinr(c, SinrParams(pl, 1.0, 0.5, 0.75)).n_edges == 0


def test_sinr_degree_two_when_tau_gamma_half():
    rng = np.random.default_rng(4)
    for _ in range(20):
        c = random_config(rng, 80, marks=True)
        assert build_sinr(c, SinrParams(PathLoss(), tau=1.0, gamma=0.5)).max_degree <= 2


def test_sinr_zero_marks_no_edges():
    c = line_config([0, 1, 3], marks=[0.0, 0.0, 0.0])
    assert build_sinr(c, SinrParams(PathLoss(), 1.0, 0.1, 0.01)).n_edges == 0


def test_sinr_degenerate_warning_and_coincident():
    with pytest.warns(RuntimeWarning):
        build_sinr(line_config([0, 1], marks=[1, 1]), SinrParams(PathLoss(), 1.0, 0.0, 0.0))
    with pytest.raises(InvalidInputError):
        build_sinr(line_config([1, 1], marks=[1, 1]), SinrParams(PathLoss(), 1.0, 0.1, 0.0))


def test_sinr_chunked_matches_dense():
    c = random_config(np.random.default_rng(3), 150, marks=True)
    p = SinrParams(PathLoss(), 1.0, 0.2, 1e-4)
    assert edges(build_sinr(c, p, chunk=17)) == edges(build_sinr(c, p))


def test_f_k1k2_examples(example4):
    assert edges(build_f_k1k2(example4, 1, 2)) == edges(build_fknn(example4, 2))
    two = line_config([0, 1])
    assert build_f_k1k2(two, 1, 3).n_edges == 1
    assert build_f_k1k2(two, 2, 3).n_edges == 0
    with pytest.raises(InvalidInputError):
        build_f_k1k2(two, 2, 2)


def test_local_extreme_examples(example4):
    assert edges(build_local_extreme(example4, 2, Region("ball", 5.0), "furthest")) == {(0, 1), (0, 2), (2, 3)}
    assert build_local_extreme(example4, 2, Region("ball", 0.5)).n_edges == 0
    near = build_local_extreme(example4, 2, Region("ball", 100.0), "nearest")
    assert edges(near) == edges(build_bknn(example4, 2))


def test_kth_nn_examples(example4):
    g = build_kth_nn_directed(example4, 1)
    assert g.directed
    assert edges(g) == {(0, 1), (1, 0), (2, 1), (3, 2)}
    with pytest.raises(InvalidInputError):
        build_kth_nn_directed(example4, 4)


def test_kth_nn_mutual_pairs_are_b1nn():
    rng = np.random.default_rng(8)
    for _ in range(10):
        c = random_config(rng, 100)
        out = edges(build_kth_nn_directed(c, 1))
        mutual = {(a, b) for a, b in out if a < b and (b, a) in out}
        assert mutual == edges(build_bknn(c, 1))


def test_builder_spec_roundtrip(example4):
    spec = BuilderSpec.make("bknn", k=2)
    assert edges(spec(example4)) == edges(build_bknn(example4, 2))
    assert spec.with_params(k=1).kwargs == {"k": 1}
    sinr = BuilderSpec.make("sinr", k=4, tau=1.0)
    assert sinr.sinr_params().k_bound == 4
    assert sinr.degree_bound() == 4
    assert BuilderSpec.make("f_k1k2", k1=2, k2=3).degree_bound() == 3
    with pytest.raises(InvalidInputError):
        BuilderSpec.make("delaunay")


def test_gamma_for_degree_bound():
    for k in range(1, 10):
        for tau in (0.3, 1.0, 2.5):
            g = gamma_for_degree_bound(k, tau)
            p = SinrParams(PathLoss(), tau, g)
            assert p.k_bound == k
            assert math.ceil(p.degree_bound) - 1 == k


# --- oracle equivalence (small scale; the acceptance suite runs the full battery) ----


def _oracle_edges(name, c, **kw):
    D = oracles.dist_matrix(c.coords, c.window.lower, c.window.upper, c.window.torus, c.norm.p)
    x, m = c.coords, c.marks
    if name == "fknn":
        return oracles.fknn(D, x, m, kw["k"], ordering=kw.get("ordering", "euclidean"))
    if name == "uknn":
        return oracles.uknn(D, x, m, kw["k"], ordering=kw.get("ordering", "euclidean"))
    if name == "gilbert":
        return oracles.gilbert(D, kw["r"])
    if name == "f_k1k2":
        return oracles.f_k1k2(D, x, m, kw["k1"], kw["k2"])
    if name == "local_extreme":
        return oracles.local_extreme(D, x, m, kw["k"], kw["radius"], kw.get("region", "ball"), kw.get("mode", "furthest"),
                                     c.window.lower, c.window.upper, c.window.torus)
    if name == "kth_nn":
        return oracles.kth_nn(D, x, m, kw["k"])
    raise AssertionError(name)


@pytest.mark.parametrize("torus", [False, True])
@pytest.mark.parametrize("name,kw", [
    ("fknn", {"k": 3}), ("fknn", {"k": 2, "ordering": "sinr_order"}), ("uknn", {"k": 2}), ("gilbert", {"r": 1.3}),
    ("f_k1k2", {"k1": 2, "k2": 3}), ("local_extreme", {"k": 2, "radius": 2.0}),
    ("local_extreme", {"k": 3, "radius": 1.5, "region": "box", "mode": "nearest"}), ("kth_nn", {"k": 2}),
])
def test_builders_match_oracle(name, kw, torus):
    rng = np.random.default_rng(zlib.crc32(f"{name}{kw}{torus}".encode()))
    for _ in range(3):
        c = random_config(rng, int(rng.integers(5, 80)), torus=torus, marks=True)
        assert edges(BuilderSpec.make(name, **kw)(c)) == _oracle_edges(name, c, **kw)


def test_sinr_matches_oracle():
    rng = np.random.default_rng(1)
    for torus in (False, True):
        c = random_config(rng, 60, torus=torus, marks=True)
        D = oracles.dist_matrix(c.coords, c.window.lower, c.window.upper, torus)
        assert edges(build_sinr(c, SinrParams(PathLoss(), 1.0, 0.3, 1e-3))) == oracles.sinr(D, c.marks, 1.0, 0.3, 1e-3)


# --- properties -----------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.floats(0.1, 20))
def test_bknn_scale_invariant_and_bounded(seed, k, factor):
    c = random_config(np.random.default_rng(seed), 60)
    g = build_bknn(c, k)
    assert edges(build_bknn(c.scaled(factor), k)) == edges(g)
    assert g.max_degree <= k
    assert edges(g) <= edges(build_uknn(c, k))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 2.0), st.floats(0.2, 3.0))
def test_sinr_subgraph_of_fknn(seed, gamma, tau):
    c = random_config(np.random.default_rng(seed), 50, marks=True)
    p = SinrParams(PathLoss(), tau, gamma, 0.0)
    g = build_sinr(c, p)
    assert g.max_degree < p.degree_bound
    assert edges(g) <= edges(build_fknn(c, p.k_bound, p.ordering()))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_constant_marks_sinr_order_equals_bknn(seed):
    c = random_config(np.random.default_rng(seed), 60).with_marks(np.full(60, 2.0))
    assert edges(build_fknn(c, 3, SINR_ORDER)) == edges(build_bknn(c, 3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_kth_nn_out_degree_one(seed, k):
    c = random_config(np.random.default_rng(seed), 40)
    g = build_kth_nn_directed(c, k)
    assert np.all(g.degrees() == 1)


def test_no_self_loops_and_sorted():
    c = sample_poisson(1.0, Window.box(10), seed=1)
    for spec in (BuilderSpec.make("uknn", k=3), BuilderSpec.make("gilbert", r=1.0)):
        e = spec(c).edges
        assert np.all(e[:, 0] < e[:, 1])
