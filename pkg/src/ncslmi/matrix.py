"""Dense real matrix helpers shared by the LMI layers.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.  The helpers
here validate finiteness, enforce exact symmetry and assemble symmetric block
matrices from an upper-triangular block grid.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

SYMMETRY_RTOL = 1e-10


class MatrixError(ValueError):
    """Raised for malformed, non-finite or inconsistent matrix input."""


def as_matrix(value, name: str = "matrix") -> np.ndarray:
    """Return ``value`` as a finite 2-D float array (scalars and vectors are promoted)."""
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise MatrixError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise MatrixError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise MatrixError(f"{name} has non-finite entries")
    return arr


def as_symmetric(value, name: str = "matrix") -> np.ndarray:
    """Average ``value`` with its transpose, rejecting visibly asymmetric input.

    The asymmetry tolerance is ``1e-10 * ||M||_F``; the result is bit-exactly
    symmetric.
    """
    m = as_matrix(value, name)
    if m.shape[0] != m.shape[1]:
        raise MatrixError(f"{name} must be square, got shape {m.shape}")
    asym = np.linalg.norm(m - m.T)
    if asym > SYMMETRY_RTOL * max(np.linalg.norm(m), 1e-300) and asym > 0.0:
        raise MatrixError(f"{name} is not symmetric (asymmetry {asym:.3e})")
    return (m + m.T) / 2.0


def kron(a, b) -> np.ndarray:
    """Kronecker product of two matrices."""
    return np.kron(as_matrix(a, "a"), as_matrix(b, "b"))


def min_eig(m) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    s = as_symmetric(m)
    return float(np.linalg.eigvalsh(s)[0])


def max_eig(m) -> float:
    """Largest eigenvalue of a symmetric matrix."""
    s = as_symmetric(m)
    return float(np.linalg.eigvalsh(s)[-1])


def _block_sizes(grid, sizes):
    nb = len(grid)
    if any(len(row) != nb for row in grid):
        raise MatrixError("block grid must be square")
    if sizes is not None:
        sizes = [int(s) for s in sizes]
        if len(sizes) != nb:
            raise MatrixError("sizes length does not match the block grid")
        return sizes
    found: list[int | None] = [None] * nb
    for r in range(nb):
        for c in range(nb):
            blk = grid[r][c]
            if blk is None:
                continue
            shape = np.shape(blk)
            for idx, dim in ((r, shape[0]), (c, shape[1])):
                if found[idx] is None:
                    found[idx] = dim
                elif found[idx] != dim:
                    raise MatrixError(f"inconsistent size for block row/col {idx}")
    if any(s is None for s in found):
        raise MatrixError("cannot infer every block size; pass sizes explicitly")
    return found


def assemble_blocks(
    grid: Sequence[Sequence[np.ndarray | None]],
    symmetrize_lower: bool = True,
    sizes: Sequence[int] | None = None,
) -> np.ndarray:
    """Assemble a symmetric matrix from a square grid of blocks.

    Parameters
    ----------
    grid : square nested sequence of arrays or ``None`` (zero block)
        With ``symmetrize_lower`` only the upper triangle (diagonal included)
        is read; lower blocks are written as transposes of their mirrors.
        Otherwise the full grid is used and the result must be symmetric.
    sizes : optional block sizes, needed when a whole block row is ``None``.

    Returns
    -------
    numpy.ndarray
        A bit-exactly symmetric matrix.
    """
    sizes = _block_sizes(grid, sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    n = int(offsets[-1])
    out = np.zeros((n, n))
    nb = len(sizes)
    for r in range(nb):
        for c in range(nb):
            if symmetrize_lower and c < r:
                continue
            blk = grid[r][c]
            if blk is None:
                continue
            blk = as_matrix(blk, f"block ({r},{c})")
            if blk.shape != (sizes[r], sizes[c]):
                raise MatrixError(
                    f"block ({r},{c}) has shape {blk.shape}, expected {(sizes[r], sizes[c])}"
                )
            rs = slice(offsets[r], offsets[r + 1])
            cs = slice(offsets[c], offsets[c + 1])
            if r == c and symmetrize_lower:
                out[rs, cs] = as_symmetric(blk, f"diagonal block {r}")
            else:
                out[rs, cs] = blk
                if symmetrize_lower:
                    out[cs, rs] = blk.T
    if not symmetrize_lower:
        return as_symmetric(out, "assembled matrix")
    return out
