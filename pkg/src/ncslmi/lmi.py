"""Structural modelling of linear matrix inequalities.

Decision variables live in a :class:`Registry`.  Affine matrix expressions are
built with ordinary operators (``@``, ``+``, ``-``, scalar ``*``, ``.T``)::

    reg = Registry()
    P = reg.declare("P", 2)
    lyap = P @ A + A.T @ P

An :class:`LmiExpr` arranges such expressions in an upper-triangular block
grid with a sign sense: ``strict_neg`` (the matrix is negative definite) or
``nonneg`` (positive semidefinite).  A :class:`ConstraintSet` bundles the
registry and the inequalities; it can be evaluated at an assignment or
compiled into the coefficient form consumed by :mod:`ncslmi.sdp`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .matrix import MatrixError, as_matrix, assemble_blocks

STRICT_NEG = "strict_neg"
NONNEG = "nonneg"
SYMMETRIC = "symmetric"
SQUARE = "square"


class ModelError(ValueError):
    """Raised for inconsistent LMI declarations or assignments."""


class _AffineOps:
    """Operator plumbing shared by variables and affine expressions."""

    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def _entry(self) -> "AffineEntry":
        raise NotImplementedError

    def __add__(self, other):
        return self._entry()._add(_to_entry(other, self._entry().shape))

    def __radd__(self, other):
        if isinstance(other, (int, float)) and other == 0:
            return self._entry()
        return _to_entry(other, self._entry().shape)._add(self._entry())

    def __sub__(self, other):
        return self + (-_to_entry(other, self._entry().shape))

    def __rsub__(self, other):
        return _to_entry(other, self._entry().shape) + (-self._entry())

    def __neg__(self):
        return self._entry()._scale(-1.0)

    def __mul__(self, other):
        if np.ndim(other) != 0:
            raise ModelError("use @ for matrix products; * takes scalars only")
        return self._entry()._scale(float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return self._entry()._right(as_matrix(other, "right factor"))

    def __rmatmul__(self, other):
        return self._entry()._left(as_matrix(other, "left factor"))

    @property
    def T(self):
        return self._entry()._transpose()

    @property
    def S(self):
        """``M + M^T``."""
        e = self._entry()
        return e + e._transpose()


@dataclass(frozen=True, eq=False)
class VarId(_AffineOps):
    """Handle of a registered decision variable."""

    index: int
    name: str
    rows: int
    cols: int
    kind: str
    offset: int

    @property
    def dim(self) -> int:
        return self.rows

    @property
    def n_scalars(self) -> int:
        if self.kind == SYMMETRIC:
            return self.rows * (self.rows + 1) // 2
        return self.rows * self.cols

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def _entry(self) -> "AffineEntry":
        term = Term(np.eye(self.rows), self, np.eye(self.cols), False)
        return AffineEntry(self.shape, None, (term,))

    def __hash__(self):
        return hash((self.index, self.name))

    def __eq__(self, other):
        return isinstance(other, VarId) and (self.index, self.name) == (other.index, other.name)

    def __repr__(self):
        return f"VarId({self.name!r}, {self.rows}x{self.cols}, {self.kind})"


@dataclass(frozen=True, eq=False)
class Term:
    """``left @ V @ right`` (or with ``V^T`` when ``transposed``)."""

    left: np.ndarray
    var: VarId
    right: np.ndarray
    transposed: bool

    @property
    def shape(self) -> tuple[int, int]:
        return (self.left.shape[0], self.right.shape[1])

    def value(self, v: np.ndarray) -> np.ndarray:
        return self.left @ (v.T if self.transposed else v) @ self.right

    def coefficients(self) -> np.ndarray:
        """Coefficient matrices of this term w.r.t. the variable's scalars.

        Returns an array of shape ``(var.n_scalars, rows, cols)``.
        """
        # c[a, b] = left[:, a] right[b, :]^T is the image of the unit matrix E_ab
        c = np.einsum("ia,bj->abij", self.left, self.right)
        if self.transposed:
            c = c.transpose(1, 0, 2, 3)
        v = self.var
        if v.kind == SYMMETRIC:
            iu, ju = np.triu_indices(v.rows)
            out = c[iu, ju] + c[ju, iu]
            diag = iu == ju
            out[diag] = c[iu[diag], ju[diag]]
            return out
        return c.reshape(v.rows * v.cols, *self.shape)


@dataclass(frozen=True, eq=False)
class AffineEntry(_AffineOps):
    """Constant matrix plus a sum of :class:`Term` objects."""

    shape: tuple[int, int]
    constant: np.ndarray | None = None
    terms: tuple[Term, ...] = ()

    def __post_init__(self):
        if self.constant is not None and self.constant.shape != self.shape:
            raise ModelError(f"constant shape {self.constant.shape} != {self.shape}")
        for t in self.terms:
            if t.shape != self.shape:
                raise ModelError(f"term shape {t.shape} != entry shape {self.shape}")
            inner = (t.var.cols, t.var.rows) if t.transposed else (t.var.rows, t.var.cols)
            if t.left.shape[1] != inner[0] or t.right.shape[0] != inner[1]:
                raise ModelError(f"term dims do not compose around variable {t.var.name}")

    def _entry(self) -> "AffineEntry":
        return self

    def _add(self, other: "AffineEntry") -> "AffineEntry":
        if other.shape != self.shape:
            raise ModelError(f"shape mismatch {self.shape} + {other.shape}")
        if self.constant is None:
            const = other.constant
        elif other.constant is None:
            const = self.constant
        else:
            const = self.constant + other.constant
        return AffineEntry(self.shape, const, self.terms + other.terms)

    def _scale(self, s: float) -> "AffineEntry":
        const = None if self.constant is None else s * self.constant
        terms = tuple(Term(s * t.left, t.var, t.right, t.transposed) for t in self.terms)
        return AffineEntry(self.shape, const, terms)

    def _left(self, m: np.ndarray) -> "AffineEntry":
        if m.shape[1] != self.shape[0]:
            raise ModelError(f"cannot left-multiply {self.shape} by {m.shape}")
        const = None if self.constant is None else m @ self.constant
        terms = tuple(Term(m @ t.left, t.var, t.right, t.transposed) for t in self.terms)
        return AffineEntry((m.shape[0], self.shape[1]), const, terms)

    def _right(self, m: np.ndarray) -> "AffineEntry":
        if m.shape[0] != self.shape[1]:
            raise ModelError(f"cannot right-multiply {self.shape} by {m.shape}")
        const = None if self.constant is None else self.constant @ m
        terms = tuple(Term(t.left, t.var, t.right @ m, t.transposed) for t in self.terms)
        return AffineEntry((self.shape[0], m.shape[1]), const, terms)

    def _transpose(self) -> "AffineEntry":
        const = None if self.constant is None else self.constant.T
        terms = tuple(
            Term(t.right.T, t.var, t.left.T, (not t.transposed) and t.var.kind != SYMMETRIC)
            for t in self.terms
        )
        return AffineEntry((self.shape[1], self.shape[0]), const, terms)

    def variables(self) -> set[VarId]:
        return {t.var for t in self.terms}

    def evaluate(self, assignment: Mapping[str, np.ndarray]) -> np.ndarray:
        out = np.zeros(self.shape) if self.constant is None else self.constant.copy()
        for t in self.terms:
            out += t.value(_lookup(assignment, t.var))
        return out


def _to_entry(value, shape) -> AffineEntry:
    if isinstance(value, _AffineOps):
        return value._entry()
    if isinstance(value, (int, float)) and value == 0:
        return AffineEntry(tuple(shape))
    m = as_matrix(value, "constant")
    return AffineEntry(m.shape, m, ())


def _lookup(assignment: Mapping[str, np.ndarray], var: VarId) -> np.ndarray:
    try:
        v = assignment[var.name]
    except KeyError:
        raise ModelError(f"assignment is missing variable {var.name}") from None
    v = np.asarray(v, dtype=float)
    if v.shape != var.shape:
        raise ModelError(f"variable {var.name} expects shape {var.shape}, got {v.shape}")
    if var.kind == SYMMETRIC and not np.allclose(v, v.T, rtol=0, atol=1e-12 * (1 + np.abs(v).max())):
        raise ModelError(f"variable {var.name} must be symmetric")
    return v


class Registry:
    """Ordered table of decision variables with unique names."""

    def __init__(self):
        self._vars: list[VarId] = []
        self._by_name: dict[str, VarId] = {}
        self._n_scalars = 0

    def declare(self, name: str, dim: int, kind: str = SYMMETRIC, cols: int | None = None) -> VarId:
        """Register a new variable.

        ``kind="square"`` declares an unstructured matrix; ``cols`` gives a
        rectangular shape ``dim x cols`` (defaults to ``dim``).
        """
        if name in self._by_name:
            raise ModelError(f"variable {name!r} already declared")
        if kind not in (SYMMETRIC, SQUARE):
            raise ModelError(f"unknown variable kind {kind!r}")
        dim = int(dim)
        cols = dim if cols is None else int(cols)
        if dim < 1 or cols < 1:
            raise ModelError("variable dimensions must be >= 1")
        if kind == SYMMETRIC and cols != dim:
            raise ModelError("symmetric variables are square")
        var = VarId(len(self._vars), name, dim, cols, kind, self._n_scalars)
        self._vars.append(var)
        self._by_name[name] = var
        self._n_scalars += var.n_scalars
        return var

    def __getitem__(self, name: str) -> VarId:
        return self._by_name[name]

    def __contains__(self, item) -> bool:
        if isinstance(item, VarId):
            return self._by_name.get(item.name) == item
        return item in self._by_name

    def __iter__(self):
        return iter(self._vars)

    def __len__(self):
        return len(self._vars)

    @property
    def n_scalars(self) -> int:
        return self._n_scalars

    def unpack(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Scalar vector -> ``{name: matrix}``."""
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self._n_scalars:
            raise ModelError(f"expected {self._n_scalars} scalars, got {x.size}")
        out = {}
        for v in self._vars:
            chunk = x[v.offset:v.offset + v.n_scalars]
            if v.kind == SYMMETRIC:
                m = np.zeros((v.rows, v.rows))
                iu, ju = np.triu_indices(v.rows)
                m[iu, ju] = chunk
                m[ju, iu] = chunk
            else:
                m = chunk.reshape(v.rows, v.cols).copy()
            out[v.name] = m
        return out

    def pack(self, assignment: Mapping[str, np.ndarray]) -> np.ndarray:
        x = np.zeros(self._n_scalars)
        for v in self._vars:
            m = _lookup(assignment, v)
            if v.kind == SYMMETRIC:
                x[v.offset:v.offset + v.n_scalars] = m[np.triu_indices(v.rows)]
            else:
                x[v.offset:v.offset + v.n_scalars] = m.ravel()
        return x


def declare_var(registry: Registry, name: str, dim: int, kind: str = SYMMETRIC, cols: int | None = None) -> VarId:
    return registry.declare(name, dim, kind, cols)


@dataclass(frozen=True, eq=False)
class LmiExpr:
    """A block-structured symmetric matrix inequality.

    ``blocks`` maps upper-triangular ``(row, col)`` block positions to affine
    entries; absent positions are zero blocks.
    """

    sizes: tuple[int, ...]
    blocks: Mapping[tuple[int, int], AffineEntry]
    sense: str
    label: str
    group: str = "main"
    vertex: tuple[int, int] | None = None

    def __post_init__(self):
        if self.sense not in (STRICT_NEG, NONNEG):
            raise ModelError(f"unknown sense {self.sense!r}")
        for (r, c), e in self.blocks.items():
            if c < r:
                raise ModelError(f"{self.label}: block ({r},{c}) is below the diagonal")
            if e.shape != (self.sizes[r], self.sizes[c]):
                raise ModelError(
                    f"{self.label}: block ({r},{c}) has shape {e.shape}, "
                    f"expected {(self.sizes[r], self.sizes[c])}"
                )

    @property
    def dim(self) -> int:
        return int(sum(self.sizes))

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)

    def variables(self) -> set[VarId]:
        out: set[VarId] = set()
        for e in self.blocks.values():
            out |= e.variables()
        return out

    def evaluate(self, assignment: Mapping[str, np.ndarray]) -> np.ndarray:
        nb = len(self.sizes)
        grid: list[list[np.ndarray | None]] = [[None] * nb for _ in range(nb)]
        for (r, c), e in self.blocks.items():
            grid[r][c] = e.evaluate(assignment)
        try:
            return assemble_blocks(grid, symmetrize_lower=True, sizes=self.sizes)
        except MatrixError as exc:
            raise ModelError(f"{self.label}: {exc}") from exc


def make_lmi(grid, sense: str, label: str, group: str = "main", vertex=None, sizes=None) -> LmiExpr:
    """Build an :class:`LmiExpr` from a nested grid (upper triangle read, ``None`` = 0)."""
    nb = len(grid)
    if sizes is None:
        sizes = [None] * nb
        for r in range(nb):
            for c in range(r, nb):
                if grid[r][c] is None:
                    continue
                shape = _to_entry(grid[r][c], (0, 0)).shape
                for idx, d in ((r, shape[0]), (c, shape[1])):
                    if sizes[idx] is None:
                        sizes[idx] = d
                    elif sizes[idx] != d:
                        raise ModelError(f"{label}: inconsistent size at block index {idx}")
        if any(s is None for s in sizes):
            raise ModelError(f"{label}: cannot infer block sizes")
    blocks = {}
    for r in range(nb):
        for c in range(r, nb):
            if grid[r][c] is not None:
                blocks[(r, c)] = _to_entry(grid[r][c], (sizes[r], sizes[c]))
    return LmiExpr(tuple(int(s) for s in sizes), blocks, sense, label, group, vertex)


def single(expr, sense: str, label: str, group: str = "main") -> LmiExpr:
    e = _to_entry(expr, (0, 0))
    if e.shape[0] != e.shape[1]:
        raise ModelError(f"{label}: single-block LMI must be square")
    return LmiExpr((e.shape[0],), {(0, 0): e}, sense, label, group)


def evaluate(expr: LmiExpr, assignment: Mapping[str, np.ndarray]) -> np.ndarray:
    return expr.evaluate(assignment)


def coupling_constraints(registry: Registry, pairs: Iterable[tuple[VarId, VarId]], mu: float) -> list[LmiExpr]:
    """``mu * V_j - V_i >= 0`` for each ``(V_i, V_j)`` pair."""
    if not mu > 1.0:
        raise ModelError(f"mu must exceed 1, got {mu}")
    out = []
    for vi, vj in pairs:
        if vi not in registry or vj not in registry:
            raise ModelError("coupling references an unregistered variable")
        if vi.kind != SYMMETRIC or vj.kind != SYMMETRIC or vi.shape != vj.shape:
            raise ModelError(f"cannot couple {vi.name} and {vj.name}")
        out.append(single(mu * vj - vi, NONNEG, f"{vi.name}<=mu*{vj.name}", group="coupling"))
    return out


@dataclass
class ConstraintSet:
    """Registry plus a list of inequalities and assembly metadata."""

    registry: Registry
    lmis: list[LmiExpr] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, *lmis: LmiExpr) -> None:
        for lmi in lmis:
            for v in lmi.variables():
                if v not in self.registry:
                    raise ModelError(f"{lmi.label} references unregistered variable {v.name}")
            self.lmis.append(lmi)

    def extend(self, lmis: Iterable[LmiExpr]) -> None:
        self.add(*lmis)

    def count(self, group: str | None = None) -> int:
        return sum(1 for l in self.lmis if group is None or l.group == group)

    def by_group(self, group: str) -> list[LmiExpr]:
        return [l for l in self.lmis if l.group == group]

    def __iter__(self):
        return iter(self.lmis)

    def __len__(self):
        return len(self.lmis)

    def to_dict(self) -> dict:
        """Debug dump: variable table and per-block term lists."""
        return {
            "meta": _jsonable(self.meta),
            "vars": [
                {"name": v.name, "index": v.index, "rows": v.rows, "cols": v.cols,
                 "kind": v.kind, "offset": v.offset}
                for v in self.registry
            ],
            "lmis": [
                {
                    "label": l.label,
                    "sense": l.sense,
                    "group": l.group,
                    "vertex": list(l.vertex) if l.vertex else None,
                    "sizes": list(l.sizes),
                    "blocks": [
                        {
                            "row": r,
                            "col": c,
                            "constant": None if e.constant is None else e.constant.tolist(),
                            "terms": [
                                {"var": t.var.name, "left": t.left.tolist(),
                                 "right": t.right.tolist(), "transpose": t.transposed}
                                for t in e.terms
                            ],
                        }
                        for (r, c), e in sorted(l.blocks.items())
                    ],
                }
                for l in self.lmis
            ],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass(frozen=True)
class CompiledLmi:
    """``F(x) = F0 + sum_k x_k F_k`` in column-major vectorised triplet form."""

    dim: int
    constant: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        vec = np.zeros(self.dim * self.dim)
        np.add.at(vec, self.rows, self.vals * x[self.cols])
        return self.constant + vec.reshape(self.dim, self.dim, order="F")


def compile_lmi(lmi: LmiExpr, drop_tol: float = 0.0) -> CompiledLmi:
    """Expand an LMI into constant matrix plus per-scalar coefficient triplets."""
    n = lmi.dim
    off = lmi.offsets
    const = np.zeros((n, n))
    per_var: dict[VarId, np.ndarray] = {}
    for (r, c), e in lmi.blocks.items():
        rs = slice(off[r], off[r + 1])
        cs = slice(off[c], off[c + 1])
        if e.constant is not None:
            if r == c:
                const[rs, cs] += (e.constant + e.constant.T) / 2.0
            else:
                const[rs, cs] += e.constant
                const[cs, rs] += e.constant.T
        for t in e.terms:
            coef = t.coefficients()
            acc = per_var.get(t.var)
            if acc is None:
                acc = per_var[t.var] = np.zeros((t.var.n_scalars, n, n))
            if r == c:
                acc[:, rs, cs] += (coef + coef.transpose(0, 2, 1)) / 2.0
            else:
                acc[:, rs, cs] += coef
                acc[:, cs, rs] += coef.transpose(0, 2, 1)
    rows, cols, vals = [], [], []
    for v, acc in per_var.items():
        flat = acc.transpose(0, 2, 1).reshape(v.n_scalars, n * n)  # column-major vec
        k, idx = np.nonzero(np.abs(flat) > drop_tol)
        rows.append(idx)
        cols.append(v.offset + k)
        vals.append(flat[k, idx])
    if rows:
        rows_a, cols_a, vals_a = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        rows_a = cols_a = np.zeros(0, dtype=int)
        vals_a = np.zeros(0)
    return CompiledLmi(n, const, rows_a, cols_a, vals_a)


def compile_set(cs: ConstraintSet) -> list[CompiledLmi]:
    return [compile_lmi(l) for l in cs.lmis]


def grid_of(nb: int) -> list[list]:
    """Empty ``nb x nb`` block grid (all ``None``)."""
    return [[None] * nb for _ in range(nb)]


def sum_entries(items: Sequence, shape) -> AffineEntry:
    out = AffineEntry(tuple(shape))
    for it in items:
        out = out + it
    return out
