import json

import numpy as np
import pytest

from ncslmi.lmi import NONNEG, STRICT_NEG, ConstraintSet, Registry, single, make_lmi
from ncslmi.sdp import (FEASIBLE, INFEASIBLE, MARGIN, PHASE1, SolverOptions, _svec, _svec_index,
                        build_standard_form, check_certificate, dump_standard_form, is_homogeneous,
                        solve_feasibility)


def lyapunov_set(A):
    n = A.shape[0]
    reg = Registry()
    P = reg.declare("P", n)
    cs = ConstraintSet(reg)
    cs.add(single(P @ A + A.T @ P, STRICT_NEG, "lyap"))
    cs.add(single(-P, STRICT_NEG, "P>0", group="positivity"))
    return cs


def test_svec_layout():
    i, j = _svec_index(3)
    assert list(zip(i, j)) == [(0, 0), (0, 1), (1, 1), (0, 2), (1, 2), (2, 2)]
    m = np.array([[1.0, 2.0], [2.0, 3.0]])
    assert np.allclose(_svec(m), [1.0, 2.0 * np.sqrt(2), 3.0])
    # inner product is preserved
    a = np.array([[1.0, -1.0], [-1.0, 4.0]])
    assert np.isclose(_svec(m) @ _svec(a), np.trace(m @ a))


def test_stable_lyapunov_feasible():
    cs = lyapunov_set(np.array([[-1.0, 2.0], [0.0, -3.0]]))
    assert is_homogeneous(cs)
    res = solve_feasibility(cs)
    assert res.status == FEASIBLE
    assert res.report.ok and res.t < 0
    P = res.assignment["P"]
    assert np.all(np.linalg.eigvalsh(P) > 0)


def test_unstable_lyapunov_infeasible():
    cs = lyapunov_set(np.array([[0.5, 1.0], [0.0, -1.0]]))
    res = solve_feasibility(cs)
    assert res.status == INFEASIBLE
    assert res.assignment is None


def test_phase1_with_constant_term():
    # I < P < 3 I is feasible; 4 I < P < 3 I is not
    for low, expect in ((1.0, FEASIBLE), (4.0, INFEASIBLE)):
        reg = Registry()
        P = reg.declare("P", 2)
        cs = ConstraintSet(reg)
        cs.add(single(low * np.eye(2) - P, STRICT_NEG, "lower"))
        cs.add(single(P - 3.0 * np.eye(2), STRICT_NEG, "upper"))
        assert not is_homogeneous(cs)
        assert build_standard_form(cs).mode == PHASE1
        assert solve_feasibility(cs).status == expect


def test_standard_form_dump(tmp_path):
    cs = lyapunov_set(-np.eye(2))
    sf = build_standard_form(cs)
    assert sf.mode == MARGIN
    assert sf.matrix().shape == (sf.n_rows, sf.n_x + 1)
    path = tmp_path / "sf.json"
    dump_standard_form(cs, path)
    data = json.loads(path.read_text())
    assert data["mode"] == MARGIN and data["cones"]


def test_certificate_checker_independent():
    cs = lyapunov_set(-np.eye(2))
    good = check_certificate(cs, {"P": np.eye(2)})
    assert good.ok and good.worst_margin == pytest.approx(-1.0)
    bad = check_certificate(cs, {"P": -np.eye(2)})
    assert not bad.ok
    assert {m.label for m in bad.failed()} == {"lyap", "P>0"}


def test_certificate_congruence_preserves_verdict(rng):
    A = np.array([[-1.0, 50.0], [0.0, -2.0]])
    cs = lyapunov_set(A)
    res = solve_feasibility(cs)
    W = np.diag([10.0, 0.1])
    rep = check_certificate(cs, res.assignment, congruence=W)
    assert rep.ok
    # raw margins are reported unchanged
    raw = check_certificate(cs, res.assignment)
    assert [m.margin for m in rep.margins] == [m.margin for m in raw.margins]


def test_env_tolerance(monkeypatch):
    monkeypatch.setenv("NCS_SOLVER_TOL", "1e-5")
    assert SolverOptions().tol == 1e-5
    monkeypatch.setenv("NCS_SOLVER_TOL", "abc")
    with pytest.raises(ValueError):
        SolverOptions()


def test_reciprocal_pair_and_block_lmi():
    # [[T, Z], [Z', T]] >= 0 with T > 0 is feasible for Z = 0
    reg = Registry()
    T = reg.declare("T", 2)
    Z = reg.declare("Z", 2, "square")
    cs = ConstraintSet(reg)
    cs.add(make_lmi([[T, Z], [None, T]], NONNEG, "recip"))
    cs.add(single(-T, STRICT_NEG, "T>0"))
    res = solve_feasibility(cs)
    assert res.status == FEASIBLE
