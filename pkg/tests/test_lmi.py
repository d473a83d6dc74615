import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncslmi.lmi import (NONNEG, LmiExpr, SQUARE, STRICT_NEG, ConstraintSet, ModelError, Registry, compile_lmi,
                        coupling_constraints, make_lmi, single)


def test_declare_counts():
    reg = Registry()
    P = reg.declare("P_1", 2)
    Z = reg.declare("Z", 2, SQUARE)
    Y = reg.declare("Y", 1, SQUARE, cols=3)
    assert P.n_scalars == 3
    assert Z.n_scalars == 4
    assert Y.shape == (1, 3)
    assert reg.n_scalars == 10
    with pytest.raises(ModelError):
        reg.declare("P_1", 2)


def test_pack_unpack_roundtrip(rng):
    reg = Registry()
    reg.declare("P", 3)
    reg.declare("Z", 2, SQUARE)
    x = rng.standard_normal(reg.n_scalars)
    vals = reg.unpack(x)
    assert np.allclose(vals["P"], vals["P"].T)
    assert np.allclose(reg.pack(vals), x)


def test_affine_algebra_evaluates(rng):
    reg = Registry()
    P = reg.declare("P", 2)
    Z = reg.declare("Z", 2, SQUARE)
    A = rng.standard_normal((2, 2))
    e = P @ A + A.T @ P - 2.0 * Z.S + np.eye(2)
    p = np.array([[2.0, 0.5], [0.5, 1.0]])
    z = rng.standard_normal((2, 2))
    got = e.evaluate({"P": p, "Z": z})
    assert np.allclose(got, p @ A + A.T @ p - 2 * (z + z.T) + np.eye(2))


def test_scalar_star_only():
    reg = Registry()
    P = reg.declare("P", 2)
    with pytest.raises(ModelError):
        P * np.eye(2)


def test_lmi_evaluate_uses_mirror(rng):
    reg = Registry()
    P = reg.declare("P", 2)
    Z = reg.declare("Z", 2, SQUARE)
    lmi = make_lmi([[P, Z], [None, -P]], NONNEG, "test")
    p = np.eye(2)
    z = rng.standard_normal((2, 2))
    m = lmi.evaluate({"P": p, "Z": z})
    assert np.allclose(m[2:, :2], z.T)
    assert lmi.dim == 4


def test_lower_block_rejected():
    reg = Registry()
    P = reg.declare("P", 2)
    e = make_lmi([[P]], NONNEG, "x").blocks[(0, 0)]
    with pytest.raises(ModelError, match="below the diagonal"):
        LmiExpr((2, 2), {(0, 0): e, (1, 0): e}, NONNEG, "x")
    with pytest.raises(ModelError):
        single(P, "bogus", "x")


def test_missing_or_asymmetric_assignment():
    reg = Registry()
    P = reg.declare("P", 2)
    lmi = single(P, NONNEG, "P>=0")
    with pytest.raises(ModelError, match="missing"):
        lmi.evaluate({})
    with pytest.raises(ModelError, match="symmetric"):
        lmi.evaluate({"P": np.array([[1.0, 2.0], [0.0, 1.0]])})


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
def test_compiled_matches_structural(n, seed):
    r = np.random.default_rng(seed)
    reg = Registry()
    P = reg.declare("P", n)
    Z = reg.declare("Z", n, SQUARE)
    Y = reg.declare("Y", 1, SQUARE, cols=n)
    A = r.standard_normal((n, n))
    B = r.standard_normal((n, 1))
    C = r.standard_normal((n, n))
    lmi = make_lmi([[P @ A + A.T @ P, Z - B @ Y, C], [None, -Z.S, None], [None, None, 0.5 * P]],
                   STRICT_NEG, "rand", sizes=[n, n, n])
    x = r.standard_normal(reg.n_scalars)
    comp = compile_lmi(lmi)
    assert np.allclose(comp.evaluate(x), lmi.evaluate(reg.unpack(x)), atol=1e-10)


def test_coupling():
    reg = Registry()
    a = reg.declare("A", 2)
    b = reg.declare("B", 2)
    out = coupling_constraints(reg, [(a, b), (b, a)], 1.5)
    assert [l.label for l in out] == ["A<=mu*B", "B<=mu*A"]
    assert all(l.sense == NONNEG for l in out)
    with pytest.raises(ModelError):
        coupling_constraints(reg, [(a, b)], 1.0)


def test_constraint_set_rejects_foreign_vars():
    reg, other = Registry(), Registry()
    P = other.declare("P", 2)
    cs = ConstraintSet(reg)
    with pytest.raises(ModelError):
        cs.add(single(P, NONNEG, "foreign"))


def test_constraint_set_json():
    reg = Registry()
    P = reg.declare("P", 2)
    cs = ConstraintSet(reg)
    cs.add(single(-P, STRICT_NEG, "P>0", group="positivity"))
    assert cs.count() == 1 and cs.count("positivity") == 1 and cs.count("main") == 0
    assert '"P>0"' in cs.to_json()
