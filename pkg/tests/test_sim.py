import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncslmi.model import DelayGrid, Gains, Plant, closed_loop, two_mode_rates
from ncslmi.sim import (EDGE_GAP, DelayTrace, SimulationError, Trajectory, estimate_decay, gen_adt_trace,
                        gen_markov_trace, simulate, verify_adt)

DC_GRID = DelayGrid.from_values([20, 70, 200, 300], "ms")


def scalar_system(a, tau):
    grid = DelayGrid((tau, tau + 1.0))
    return closed_loop(Plant([[0.0]], [[1.0]]), Gains(([-a],)), grid), grid


@pytest.mark.parametrize("waveform", ["random_walk", "constant", "sinusoid"])
def test_adt_trace_valid(waveform):
    tr = gen_adt_trace(DC_GRID, 0.12, 1, 4.0, seed=1, waveform=waveform)
    tr.check(DC_GRID)
    assert verify_adt(tr, 0.12, 1).ok
    assert len(tr.switch_times) > 5
    for t in np.linspace(0, 3.999, 2000):
        i = tr.mode(t)
        assert DC_GRID.lower(i) <= tr.delay(t) <= DC_GRID.upper(i) - EDGE_GAP * 0.999


def test_adt_trace_repeatable():
    a = gen_adt_trace(DC_GRID, 0.12, 1, 4.0, seed=7)
    b = gen_adt_trace(DC_GRID, 0.12, 1, 4.0, seed=7)
    assert a.events == b.events
    assert np.array_equal(a.knot_d, b.knot_d)


def test_no_switching_when_tau_infinite():
    tr = gen_adt_trace(DC_GRID, math.inf, 1, 4.0, seed=3)
    assert len(tr.switch_times) == 0


def test_adt_errors():
    with pytest.raises(SimulationError):
        gen_adt_trace(DC_GRID, 0.12, 1, 0.0)
    with pytest.raises(SimulationError):
        gen_adt_trace(DC_GRID, -1.0, 1, 1.0)
    with pytest.raises(SimulationError):
        gen_adt_trace(DC_GRID, 0.1, 0.5, 1.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 0.5), st.floats(1.0, 3.0), st.integers(0, 10 ** 6))
def test_adt_by_construction(tau_a, N0, seed):
    tr = gen_adt_trace(DC_GRID, tau_a, N0, 3.0, seed=seed, waveform="constant")
    assert verify_adt(tr, tau_a, N0).ok


def test_verify_adt_reports_violation():
    ev = [(0.0, 1), (0.02, 2), (0.06, 1), (0.1, 2)]
    tr = DelayTrace(ev, [0.0, 1.0], [0.03, 0.03], 1.0)
    rep = verify_adt(tr, 0.12, 1)
    assert not rep.ok
    t0, t1, count, bound = rep.worst_window
    assert count == 3 and t1 - t0 == pytest.approx(0.08)
    assert verify_adt(DelayTrace.constant(0.03, 1.0), 0.12).ok


def test_markov_holding_times():
    grid = DelayGrid.from_values([20, 70, 300], "ms")
    tr = gen_markov_trace(grid, two_mode_rates(3.5, 0.5), 400.0, seed=11, waveform="constant")
    assert tr.holding_times(1).mean() == pytest.approx(1 / 3.5, rel=0.05)
    assert tr.holding_times(2).mean() == pytest.approx(1 / 0.5, rel=0.15)


def test_markov_absorbing_and_idle():
    grid = DelayGrid.from_values([20, 70, 300], "ms")
    tr = gen_markov_trace(grid, np.zeros((2, 2)), 10.0, seed=0, waveform="constant")
    assert len(tr.switch_times) == 0
    tr = gen_markov_trace(grid, [[-1.0, 1.0], [0.0, 0.0]], 50.0, seed=0, waveform="constant")
    assert tr.mode(49.9) == 2 and len(tr.switch_times) == 1


def test_trace_json_roundtrip(tmp_path):
    tr = gen_adt_trace(DC_GRID, 0.12, 1, 2.0, seed=4)
    p = tmp_path / "trace.json"
    tr.to_json(p)
    back = DelayTrace.from_dict(__import__("json").loads(p.read_text()))
    assert back.events == [tuple(e) for e in tr.to_dict()["events"]]
    assert all(back.delay(t) == pytest.approx(tr.delay(t)) for t in np.linspace(0, 1.99, 57))


def test_exponential_decay():
    sys, _ = scalar_system(0.0, 0.02)
    sysA = closed_loop(Plant([[-1.0]], [[1.0]]), Gains(([0.0],)), DelayGrid((0.02, 0.5)))
    traj = simulate(sysA, DelayTrace.constant(0.02, 1.0), x0=[1.0], step=1e-3)
    assert traj.x[-1, 0] == pytest.approx(math.exp(-1.0), abs=1e-4) and traj.t[-1] == pytest.approx(1.0)


def test_unit_delay_boundary():
    for a, decays in ((1.0, True), (1.7, False)):
        sys, _ = scalar_system(a, 1.0)
        traj = simulate(sys, DelayTrace.constant(1.0, 40.0), x0=[1.0], step=0.01)
        rate = estimate_decay(traj)
        assert (rate > 0) == decays


def test_dc_motor_fast_mode(dc_motor):
    sys = dc_motor.switched()
    traj = simulate(sys, DelayTrace.constant(0.02, 2.0, mode=1), x0=[1.0, 0.0])
    assert np.linalg.norm(traj.x[-1]) < 0.05


def test_step_limit_and_horizon(dc_motor):
    sys = dc_motor.switched()
    tr = DelayTrace.constant(0.02, 1.0)
    with pytest.raises(SimulationError):
        simulate(sys, tr, step=0.01)
    with pytest.raises(SimulationError):
        simulate(sys, tr, horizon=2.0)


def test_step_halving_order(dc_motor):
    tr = gen_adt_trace(DC_GRID, 0.12, 1, 2.0, seed=1, waveform="constant")
    sys = dc_motor.switched()
    xs = [simulate(sys, tr, step=s).x[-1] for s in (4e-3, 2e-3, 1e-3)]
    ratio = np.linalg.norm(xs[0] - xs[1]) / np.linalg.norm(xs[1] - xs[2])
    assert 8 <= ratio <= 32


@pytest.mark.parametrize("name", ["dc_motor", "dc_motor_2mode", "nine_bus", "nine_bus_nonswitching"])
def test_half_step_reference(name):
    from ncslmi.model import bundled_config_path, load_config

    cfg = load_config(bundled_config_path(name))
    tr = gen_adt_trace(cfg.grid, 0.12, 1, 1.0, seed=2)
    sys = cfg.switched()
    a = simulate(sys, tr, step=1e-3).x[-1]
    b = simulate(sys, tr, step=5e-4).x[-1]
    assert np.linalg.norm(a - b) < 1e-6 * np.linalg.norm(b)


def test_divergence_flagged():
    sys = closed_loop(Plant([[1.0, 0.0], [0.0, 1.0]], [[1.0], [1.0]]), Gains(([0.0, 0.0],)),
                      DelayGrid((0.02, 0.3)))
    traj = simulate(sys, DelayTrace.constant(0.1, 300.0), step=5e-3)
    assert traj.diverged
    assert traj.t[-1] < 300.0
    assert np.all(np.isfinite(traj.x))


def test_history_function(dc_motor):
    sys = dc_motor.switched()
    tr = DelayTrace.constant(0.05, 0.2, mode=1)
    a = simulate(sys, tr, phi=lambda s: np.array([1.0, 0.0]))
    b = simulate(sys, tr, x0=[1.0, 0.0])
    assert np.allclose(a.x, b.x)
    c = simulate(sys, tr, phi=lambda s: np.array([1.0 + s, 0.0]))
    assert not np.allclose(a.x, c.x)


def test_csv_roundtrip(tmp_path, dc_motor):
    tr = gen_adt_trace(DC_GRID, 0.12, 1, 0.5, seed=3)
    traj = simulate(dc_motor.switched(), tr)
    p = tmp_path / "traj.csv"
    traj.to_csv(p)
    assert p.read_text().splitlines()[0] == "t,x1,x2,mode,delay"
    back = Trajectory.from_csv(p)
    assert np.allclose(back.x, traj.x, rtol=1e-11, atol=1e-300)
    assert np.array_equal(back.mode, traj.mode)


def test_estimate_synthetic():
    t = np.arange(0, 3, 1e-3)
    assert estimate_decay(np.exp(-2 * t), t=t) == pytest.approx(2.0, abs=0.02)
    assert estimate_decay(np.exp(-t) * np.cos(10 * t), t=t) == pytest.approx(1.0, abs=0.05)
    assert estimate_decay(np.ones_like(t), t=t) == pytest.approx(0.0, abs=1e-6)
    with pytest.raises(SimulationError, match="degenerate"):
        estimate_decay(np.zeros_like(t), t=t)
    with pytest.raises(SimulationError):
        estimate_decay(np.ones(10), t=np.arange(10.0))
