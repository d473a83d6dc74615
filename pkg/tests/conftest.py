import numpy as np
import pytest

from ncslmi.model import DelayGrid, Gains, Plant, bundled_config_path, closed_loop, load_config


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def dc_motor():
    return load_config(bundled_config_path("dc_motor"))


@pytest.fixture(scope="session")
def dc_plant(dc_motor):
    return dc_motor.plant


def random_spd(rng, n, scale=1.0):
    a = rng.standard_normal((n, n))
    return scale * (a @ a.T + n * np.eye(n))


def random_assignment(cs, rng):
    """Random point for every variable of a constraint set (symmetric ones SPD)."""
    out = {}
    for v in cs.registry:
        if v.kind == "symmetric":
            out[v.name] = random_spd(rng, v.rows)
        else:
            out[v.name] = rng.standard_normal(v.shape)
    return out


def small_system(n=2, M=2, seed=0):
    """A stable-ish random closed loop used in structural tests."""
    r = np.random.default_rng(seed)
    A = r.standard_normal((n, n)) - 2 * np.eye(n)
    B = r.standard_normal((n, 1))
    grid = DelayGrid(tuple(0.01 * (k + 1) for k in range(M + 1)))
    K = tuple(0.1 * r.standard_normal((1, n)) for _ in range(M))
    plant = Plant(A, B)
    return plant, grid, closed_loop(plant, Gains(K), grid)
