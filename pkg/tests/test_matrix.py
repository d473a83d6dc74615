import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ncslmi.matrix import MatrixError, as_matrix, as_symmetric, assemble_blocks, kron, max_eig, min_eig

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_promotion():
    assert as_matrix(3.0).shape == (1, 1)
    assert as_matrix([1, 2, 3]).shape == (1, 3)


@pytest.mark.parametrize("bad", [[], [[np.nan]], [[np.inf, 1.0]], np.zeros((2, 2, 2))])
def test_rejects_malformed(bad):
    with pytest.raises(MatrixError):
        as_matrix(bad)


def test_symmetric_tolerance():
    m = np.array([[1.0, 2.0], [2.0 + 1e-13, 3.0]])
    s = as_symmetric(m)
    assert np.array_equal(s, s.T)
    with pytest.raises(MatrixError, match="not symmetric"):
        as_symmetric([[1.0, 2.0], [2.1, 3.0]])
    with pytest.raises(MatrixError, match="square"):
        as_symmetric(np.ones((2, 3)))


def test_eigs_and_kron():
    m = np.diag([3.0, -1.0, 2.0])
    assert min_eig(m) == -1.0
    assert max_eig(m) == 3.0
    assert kron(np.eye(2), [[1, 2], [3, 4]]).shape == (4, 4)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (2, 2), elements=finite), arrays(float, (2, 3), elements=finite),
       arrays(float, (3, 3), elements=finite))
def test_assemble_is_symmetric(a, b, c):
    a = a + a.T
    c = c + c.T
    m = assemble_blocks([[a, b], [None, c]])
    assert m.shape == (5, 5)
    assert np.array_equal(m, m.T)
    assert np.array_equal(m[:2, 2:], b)
    assert np.array_equal(m[2:, :2], b.T)


def test_assemble_zero_rows_need_sizes():
    with pytest.raises(MatrixError):
        assemble_blocks([[np.eye(2), None], [None, None]])
    m = assemble_blocks([[np.eye(2), None], [None, None]], sizes=[2, 3])
    assert m.shape == (5, 5) and np.all(m[2:, 2:] == 0)


def test_assemble_shape_mismatch():
    with pytest.raises(MatrixError):
        assemble_blocks([[np.eye(2), np.ones((3, 2))], [None, np.eye(2)]])


def test_full_grid_must_be_symmetric():
    b = np.ones((2, 2))
    m = assemble_blocks([[np.eye(2), b], [b.T, np.eye(2)]], symmetrize_lower=False)
    assert np.array_equal(m, m.T)
    with pytest.raises(MatrixError):
        assemble_blocks([[np.eye(2), b], [np.zeros((2, 2)), np.eye(2)]], symmetrize_lower=False)
