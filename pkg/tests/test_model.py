import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncslmi.model import (ConfigError, DelayGrid, Gains, Plant, bundled_config_path, closed_loop, config_hash,
                          invariant_distribution, load_config, parse_config, shifted_matrices, two_mode_rates,
                          validate_rate_matrix, vertex_weights)

BUNDLED = ["dc_motor", "dc_motor_2mode", "dc_motor_mjls", "dc_motor_nonswitching", "nine_bus",
           "nine_bus_nonswitching"]


def test_grid_units_and_modes():
    g = DelayGrid.from_values([20, 70, 200, 300], "ms")
    assert g.M == 3
    assert g.h == pytest.approx((0.02, 0.07, 0.2, 0.3))
    assert g.delta(2) == pytest.approx(0.13)
    assert g.mode_of(0.02) == 1 and g.mode_of(0.069) == 1 and g.mode_of(0.07) == 2
    with pytest.raises(ValueError):
        g.mode_of(0.3)


@pytest.mark.parametrize("bad", [[1.0], [2.0, 1.0], [0.1, 0.1], [-1.0, 1.0], [0.0, float("inf")]])
def test_grid_rejects(bad):
    with pytest.raises(ConfigError):
        DelayGrid(tuple(bad))


def test_closed_loop_shares_single_gain(dc_plant):
    g = DelayGrid.from_values([20, 70, 300], "ms")
    sys = closed_loop(dc_plant, Gains(([-1.0, -2.0],)), g)
    assert len(sys.delayed) == 2
    assert np.allclose(sys.delayed[0], dc_plant.B @ np.array([[-1.0, -2.0]]))
    with pytest.raises(ConfigError):
        closed_loop(dc_plant, Gains(([1.0, 2.0, 3.0],)), g)


def test_vertex_weights():
    g = DelayGrid((0.1, 0.2, 0.4))
    w = vertex_weights(g, 2.0)
    assert w[0] == pytest.approx((np.exp(0.2), np.exp(0.4)))
    assert w[1] == pytest.approx((np.exp(0.4), np.exp(0.8)))


def test_shifted(dc_motor):
    sh = shifted_matrices(dc_motor.switched(), 1.5)
    assert np.allclose(sh.A_alpha, 1.5 * np.eye(2) + dc_motor.plant.A)
    assert np.allclose(sh.vertices[2][1], np.exp(1.5 * 0.3) * dc_motor.switched().delayed[2])


@pytest.mark.parametrize("p,q", [(3.5, 0.5), (2.5, 1.5), (0.5, 3.5), (1.5, 1.5)])
def test_two_mode_invariant(p, q):
    pi = invariant_distribution(two_mode_rates(p, q))
    assert pi == pytest.approx([q / (p + q), p / (p + q)], abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2 ** 31 - 1))
def test_invariant_is_stationary(M, seed):
    r = np.random.default_rng(seed)
    off = r.uniform(0.1, 3.0, (M, M))
    np.fill_diagonal(off, 0.0)
    Pi = off - np.diag(off.sum(axis=1))
    pi = invariant_distribution(Pi)
    assert np.allclose(pi @ Pi, 0.0, atol=1e-10)
    assert pi.sum() == pytest.approx(1.0)


def test_rate_matrix_validation():
    with pytest.raises(ConfigError):
        validate_rate_matrix([[-1.0, 0.5], [1.0, -1.0]])
    with pytest.raises(ConfigError):
        validate_rate_matrix([[1.0, -1.0], [1.0, -1.0]])
    with pytest.raises(ConfigError):
        invariant_distribution([[0.0, 0.0], [0.0, 0.0]])


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_configs_load(name):
    cfg = load_config(bundled_config_path(name))
    assert cfg.gains is not None
    assert len(cfg.gains) == cfg.grid.M
    cfg.switched()
    if "mjls" in name:
        assert cfg.mjls().M == 2


def test_nine_bus_shapes():
    cfg = load_config(bundled_config_path("nine_bus"))
    assert cfg.plant.A.shape == (6, 6) and cfg.plant.B.shape == (6, 1)
    assert cfg.grid.h == pytest.approx((0.02, 0.05, 0.11))


def test_schema_errors_name_field():
    raw = {"plant": {"A": [[0, 1], [0, 0]]}, "grid": {"boundaries": [20, 300], "unit": "ms"}}
    with pytest.raises(ConfigError, match="plant.*'B'"):
        parse_config(raw)
    raw = {"plant": {"A": [[0, 1], [0, 0]], "B": [[0], [1]]}, "grid": {"boundaries": [20, 300], "unit": "h"}}
    with pytest.raises(ConfigError, match="grid/unit"):
        parse_config(raw)


def test_gain_shape_checked():
    raw = {"plant": {"A": [[0, 1], [0, 0]], "B": [[0], [1]]}, "grid": {"boundaries": [0.02, 0.3]},
           "gains": [[1, 2, 3]]}
    with pytest.raises(ConfigError, match="gains"):
        parse_config(raw)


def test_json_syntax_error_has_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n "plant": ,\n}')
    with pytest.raises(ConfigError, match="line 2"):
        load_config(p)


def test_hash_is_canonical(dc_motor):
    raw = dc_motor.raw
    shuffled = json.loads(json.dumps(raw))
    shuffled = {k: shuffled[k] for k in reversed(list(shuffled))}
    assert config_hash(shuffled) == dc_motor.config_hash
    assert dc_motor.with_gains(Gains(([0.0, 0.0],))).config_hash != dc_motor.config_hash


def test_plant_validation():
    with pytest.raises(ConfigError):
        Plant(np.eye(2), np.ones((3, 1)))
