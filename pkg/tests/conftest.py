import numpy as np
import pytest

from percolab.geom import Norm, PointConfiguration, Window


def line_config(xs, marks=None, lower=-1.0, upper=10.0):
    """1-D configuration with ids in the given order."""
    coords = np.asarray(xs, dtype=float).reshape(-1, 1)
    return PointConfiguration(Window((lower,), (upper,)), coords, marks)


def random_config(rng, n, d=2, side=10.0, torus=False, p=2.0, marks=False):
    window = Window.box(side, d, "torus" if torus else "hard")
    coords = rng.random((n, d)) * side
    m = rng.exponential(1.0, n) + 0.1 if marks else None
    return PointConfiguration(window, coords, m, Norm(p))


def as_arrays(config):
    return config.coords, config.marks, config.window.lower, config.window.upper, config.window.torus, config.norm.p


@pytest.fixture
def example4():
    return line_config([0, 1, 3, 7])
