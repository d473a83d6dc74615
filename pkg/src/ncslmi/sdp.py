"""Feasibility of LMI systems as a conic program.

Homogeneous systems (every inequality linear in the variables, no constant
term) are solved in *margin form*: each strict inequality is scaled by its
coefficient size and required to satisfy ``Gamma_l(x) / c_l <= -I``, every
non-strict one ``N_l(x) / c_l >= 0``, while a scalar ``lambda`` bounds the
symmetric variables from above (``V <= lambda I``) and the remaining
variables elementwise.  Minimising ``lambda`` picks the best conditioned
solution; by homogeneity nothing is lost.  A primal infeasibility
certificate from the solver means the LMIs admit no solution.

Systems with constant terms fall back to a phase-I program
``Gamma_l(x) / c_l <= t I`` with boxed variables; they are infeasible when
the optimal ``t`` is positive.

The conic program is handed to ``clarabel``.  A result is reported feasible
only after :func:`check_certificate` has confirmed the returned point against
the original, unscaled inequalities.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .lmi import STRICT_NEG, SYMMETRIC, CompiledLmi, ConstraintSet, compile_lmi

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
INCONCLUSIVE = "inconclusive"

BOX_BOUND = 1e6
GENERAL_BOUND = 1e3    # |z| <= GENERAL_BOUND * lambda for non-symmetric variables


def _default_tol() -> float:
    env = os.environ.get("NCS_SOLVER_TOL")
    if env:
        try:
            val = float(env)
        except ValueError:
            raise ValueError(f"NCS_SOLVER_TOL is not a number: {env!r}") from None
        if not val > 0:
            raise ValueError("NCS_SOLVER_TOL must be positive")
        return val
    return 1e-7


@dataclass
class SolverOptions:
    """Knobs for :func:`solve_feasibility`.

    ``tol`` is the certificate tolerance (relative to the spectral norm of
    each constraint matrix) and the phase-I threshold for declaring
    infeasibility.  ``time_limit`` is in seconds and is passed to the solver.
    """

    tol: float = field(default_factory=_default_tol)
    max_iters: int = 200
    time_limit: float = 60.0
    verbose: bool = False


@dataclass
class LmiMargin:
    label: str
    group: str
    sense: str
    margin: float
    scale: float
    ok: bool


@dataclass
class CertificateReport:
    """Per-inequality eigenvalue margins at a candidate point.

    ``margin`` is ``lambda_max`` for strict inequalities and ``lambda_min``
    for non-strict ones.  ``worst_margin`` maps both to the "must be
    negative" convention and takes the maximum.
    """

    ok: bool
    worst_margin: float
    worst_label: str
    margins: list[LmiMargin]

    def failed(self) -> list[LmiMargin]:
        return [m for m in self.margins if not m.ok]


@dataclass
class FeasibilityResult:
    """Outcome of one feasibility solve.

    ``assignment`` is the verified point when feasible; an inconclusive
    result may carry the solver's unverified last point for diagnostics.
    """

    status: str
    assignment: dict | None
    t: float
    solver_status: str
    iterations: int
    elapsed: float
    report: CertificateReport | None = None
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


def _congruence(mat: np.ndarray, sizes, W: np.ndarray | None) -> np.ndarray:
    if W is None or any(sz != W.shape[0] for sz in sizes):
        return mat
    Wb = np.kron(np.eye(len(sizes)), W)
    return Wb.T @ mat @ Wb


def check_certificate(cs: ConstraintSet, assignment: Mapping[str, np.ndarray], tol: float | None = None,
                      congruence: np.ndarray | None = None) -> CertificateReport:
    """Re-evaluate every inequality of ``cs`` at ``assignment``.

    A strict inequality passes if ``lambda_max < -tol * ||Gamma||_2``; a
    non-strict one if ``lambda_min > -tol * ||N||_2``.

    ``congruence`` is an optional invertible ``n x n`` matrix ``W``; each
    inequality whose blocks all have size ``n`` is then judged as
    ``(I (x) W)' Gamma (I (x) W)``, which has the same inertia.  This measures
    margins in balanced state coordinates.  The reported ``margin`` is always
    the eigenvalue of the untransformed matrix.
    """
    tol = _default_tol() if tol is None else float(tol)
    if congruence is not None:
        congruence = np.asarray(congruence, dtype=float)
    margins = []
    worst = -math.inf
    worst_label = ""
    all_ok = True
    for lmi in cs.lmis:
        m = lmi.evaluate(assignment)
        raw = np.linalg.eigvalsh(m)
        eig = raw if congruence is None else np.linalg.eigvalsh(_congruence(m, lmi.sizes, congruence))
        scale = float(max(abs(eig[0]), abs(eig[-1])))
        if lmi.sense == STRICT_NEG:
            margin = float(raw[-1])
            ok = eig[-1] < -tol * scale
            signed = margin
        else:
            margin = float(raw[0])
            ok = eig[0] > -tol * scale
            signed = -margin
        ok = bool(ok and np.all(np.isfinite(eig)))
        all_ok &= ok
        if signed > worst:
            worst, worst_label = signed, lmi.label
        margins.append(LmiMargin(lmi.label, lmi.group, lmi.sense, margin, scale, ok))
    return CertificateReport(bool(all_ok), float(worst), worst_label, margins)


def _coef_scale(c: CompiledLmi) -> float:
    if c.vals.size == 0:
        return max(float(np.linalg.norm(c.constant)), 1.0)
    sq = np.zeros(int(c.cols.max()) + 1)
    np.add.at(sq, c.cols, c.vals ** 2)
    return max(float(np.sqrt(sq.max())), float(np.linalg.norm(c.constant)), 1e-300)


MARGIN = "margin"
PHASE1 = "phase1"


def _svec_index(dim: int):
    """Row/column of each entry of the column-major upper-triangle vector."""
    j = np.repeat(np.arange(dim), np.arange(1, dim + 1))
    i = np.concatenate([np.arange(k + 1) for k in range(dim)])
    return i, j


def _svec(m: np.ndarray) -> np.ndarray:
    i, j = _svec_index(m.shape[0])
    return m[i, j] * np.where(i == j, 1.0, math.sqrt(2.0))


@dataclass
class StandardForm:
    """``min q'z  s.t.  A z + s = b,  s in K`` with ``z = [x; w]``.

    ``w`` is the bound ``lambda`` on all variables (margin form) or the
    phase-I level ``t``.  ``cones`` lists ``(kind, dim)`` in row order with
    kinds ``zero``, ``nonneg`` and ``psd`` (scaled upper-triangle vectors).
    """

    q: np.ndarray
    a_rows: np.ndarray
    a_cols: np.ndarray
    a_vals: np.ndarray
    b: np.ndarray
    cones: list
    n_x: int
    scales: list
    mode: str

    @property
    def n_rows(self) -> int:
        return self.b.size

    def matrix(self):
        from scipy import sparse
        return sparse.csc_matrix((self.a_vals, (self.a_rows, self.a_cols)),
                                 shape=(self.n_rows, self.n_x + 1))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "q": self.q.tolist(),
            "A": {"rows": self.a_rows.tolist(), "cols": self.a_cols.tolist(),
                  "vals": self.a_vals.tolist(), "shape": [self.n_rows, self.n_x + 1]},
            "b": self.b.tolist(),
            "cones": [list(c) for c in self.cones],
            "scales": self.scales,
        }


def positive_variables(cs: ConstraintSet) -> list:
    """Symmetric variables ``V`` constrained by a strict inequality ``-V < 0``."""
    out = []
    seen = set()
    for lmi in cs.lmis:
        if lmi.sense != STRICT_NEG or len(lmi.sizes) != 1:
            continue
        e = lmi.blocks.get((0, 0))
        if e is None or e.constant is not None and np.any(e.constant) or len(e.terms) != 1:
            continue
        t = e.terms[0]
        n = t.var.rows
        if t.var.kind != SYMMETRIC or t.var.name in seen:
            continue
        if t.left.shape == (n, n) and t.right.shape == (n, n):
            a, b = t.left[0, 0], t.right[0, 0]
            if np.allclose(t.left, a * np.eye(n)) and np.allclose(t.right, b * np.eye(n)) \
                    and abs(a * b + 1.0) < 1e-12:
                seen.add(t.var.name)
                out.append(t.var)
    return out


class _Builder:
    def __init__(self, nx):
        self.nx = nx
        self.rows, self.cols, self.vals, self.b = [], [], [], []
        self.cones = []
        self.r0 = 0

    def block(self, kind, dim, b, rows=(), cols=(), vals=()):
        for r, c, v in zip(rows, cols, vals):
            self.rows.append(self.r0 + np.asarray(r, dtype=int))
            self.cols.append(np.asarray(c, dtype=int))
            self.vals.append(np.asarray(v, dtype=float))
        self.b.append(np.asarray(b, dtype=float))
        nrow = dim * (dim + 1) // 2 if kind == "psd" else dim
        self.cones.append((kind, dim))
        self.r0 += nrow

    def psd(self, comp: CompiledLmi, sign: float, scale: float, shift: float = 0.0, w_coef: float = 0.0):
        """Cone row ``sign * F(x) / scale + shift I + w_coef * w I``."""
        d = comp.dim
        i, j = comp.rows % d, comp.rows // d
        up = i <= j
        i, j = i[up], j[up]
        weight = np.where(i == j, 1.0, math.sqrt(2.0))
        srow = j * (j + 1) // 2 + i
        diag = np.arange(d) * (np.arange(d) + 3) // 2
        b = _svec(sign * comp.constant / scale + shift * np.eye(d))
        parts = [(srow, comp.cols[up], -sign * weight * comp.vals[up] / scale)]
        if w_coef:
            parts.append((diag, np.full(d, self.nx), np.full(d, -w_coef)))
        self.block("psd", d, b, *zip(*parts))

    def finish(self, q, scales, mode) -> StandardForm:
        cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)  # noqa: E731
        return StandardForm(q, cat(self.rows, int), cat(self.cols, int), cat(self.vals, float),
                            cat(self.b, float), self.cones, self.nx, scales, mode)


def _variable_bounds(bld: _Builder, reg, sym_shift: float, w_coef: float, general: float | None):
    """``V <= shift I + w_coef w I`` for symmetric variables, ``|z| <= general * w`` otherwise."""
    for v in reg:
        if v.kind == SYMMETRIC:
            n = v.rows
            iu, ju = np.triu_indices(n)  # storage order of the variable
            srow = ju * (ju + 1) // 2 + iu
            weight = np.where(iu == ju, 1.0, math.sqrt(2.0))
            diag = np.arange(n) * (np.arange(n) + 3) // 2
            rows = [srow]
            cols = [v.offset + np.arange(v.n_scalars)]
            vals = [weight]
            if w_coef:
                rows.append(diag)
                cols.append(np.full(n, bld.nx))
                vals.append(np.full(n, -w_coef))
            bld.block("psd", n, _svec(sym_shift * np.eye(n)), rows, cols, vals)
        elif general is not None:
            k = v.offset + np.arange(v.n_scalars)
            m = k.size
            r = np.arange(m)
            # w*general - z >= 0 and w*general + z >= 0
            bld.block("nonneg", 2 * m, np.zeros(2 * m),
                      [r, m + r, np.arange(2 * m)],
                      [k, k, np.full(2 * m, bld.nx)],
                      [np.ones(m), -np.ones(m), np.full(2 * m, -general)])


def is_homogeneous(cs: ConstraintSet) -> bool:
    return all(not np.any(compile_lmi(l).constant) for l in cs.lmis)


def build_standard_form(cs: ConstraintSet, mode: str | None = None, box: float = BOX_BOUND) -> StandardForm:
    """Cone program whose solution decides ``cs``.

    ``margin`` (default for homogeneous sets): every strict inequality gets
    the unit margin ``Gamma/c <= -I`` and the common bound ``lambda`` on the
    variables is minimised.  Any strictly feasible point can be rescaled to
    meet the margin, so the program is feasible exactly when ``cs`` is, and
    minimising ``lambda`` keeps the point well conditioned.

    ``phase1``: ``Gamma/c <= t I`` with ``t`` minimised under a box; needed
    when the inequalities have constant parts.  For homogeneous sets solved
    this way the symmetric variables are also bounded by ``I`` and the traces
    of the positive ones normalised.
    """
    reg = cs.registry
    nx = reg.n_scalars
    comps = [compile_lmi(l) for l in cs.lmis]
    if mode is None:
        mode = MARGIN if all(not np.any(c.constant) for c in comps) else PHASE1
    if mode not in (MARGIN, PHASE1):
        raise ValueError(f"unknown mode {mode!r}")
    bld = _Builder(nx)
    homogeneous = all(not np.any(c.constant) for c in comps)
    if mode == PHASE1:
        positive = positive_variables(cs)
        if positive and homogeneous:
            cols = np.concatenate([v.offset + np.nonzero(np.subtract(*np.triu_indices(v.rows)) == 0)[0]
                                   for v in positive])
            bld.block("zero", 1, [1.0], [np.zeros(cols.size, int)], [cols], [np.ones(cols.size)])
        nz = nx + 1
        idx = np.arange(nz)
        bld.block("nonneg", 2 * nz, np.full(2 * nz, box), [idx, nz + idx], [idx, idx],
                  [np.ones(nz), -np.ones(nz)])
    scales = []
    for lmi, comp in zip(cs.lmis, comps):
        scale = _coef_scale(comp)
        scales.append(scale)
        if lmi.sense == STRICT_NEG:
            if mode == MARGIN:
                bld.psd(comp, -1.0, scale, shift=-1.0)
            else:
                bld.psd(comp, -1.0, scale, w_coef=1.0)
        else:
            bld.psd(comp, 1.0, scale)
    if mode == MARGIN:
        _variable_bounds(bld, reg, 0.0, 1.0, GENERAL_BOUND)
    elif homogeneous:
        _variable_bounds(bld, reg, 1.0, 0.0, None)
    q = np.zeros(nx + 1)
    q[nx] = 1.0
    return bld.finish(q, scales, mode)


def dump_standard_form(cs: ConstraintSet, path, mode: str | None = None) -> None:
    """Write the cone program of ``cs`` as JSON for offline inspection."""
    sf = build_standard_form(cs, mode)
    with open(path, "w") as fh:
        json.dump(sf.to_dict(), fh)


def _cones(sf: StandardForm):
    import clarabel
    make = {"zero": clarabel.ZeroConeT, "nonneg": clarabel.NonnegativeConeT,
            "psd": clarabel.PSDTriangleConeT}
    return [make[k](d) for k, d in sf.cones]


def solve_feasibility(cs: ConstraintSet, options: SolverOptions | None = None,
                      mode: str | None = None) -> FeasibilityResult:
    """Decide feasibility of the inequalities in ``cs``.

    Returns a :class:`FeasibilityResult` whose status is ``feasible`` (with a
    verified assignment), ``infeasible`` (the cone solver returned a
    certificate of primal infeasibility, or the phase-I optimum is positive
    beyond ``tol``) or ``inconclusive``.  ``t`` is the phase-I level, or
    ``-1/lambda`` in the margin form (negative means strictly feasible).
    """
    import clarabel
    from scipy import sparse

    opts = options or SolverOptions()
    start = time.perf_counter()
    sf = build_standard_form(cs, mode)
    settings = clarabel.DefaultSettings()
    settings.verbose = bool(opts.verbose)
    settings.max_iter = int(opts.max_iters)
    if opts.time_limit and math.isfinite(opts.time_limit):
        settings.time_limit = float(opts.time_limit)
    P = sparse.csc_matrix((sf.n_x + 1, sf.n_x + 1))
    try:
        sol = clarabel.DefaultSolver(P, sf.q, sf.matrix(), sf.b, _cones(sf), settings).solve()
    except Exception as exc:  # the bindings raise plain exceptions on bad data
        return FeasibilityResult(INCONCLUSIVE, None, math.nan, "error", 0,
                                 time.perf_counter() - start, None, str(exc))
    elapsed = time.perf_counter() - start
    status = str(sol.status)
    iters = int(sol.iterations)
    if status == "PrimalInfeasible":
        # Farkas direction y: A'y ~ 0, b'y < 0; no feasible z has |z|_inf below |b'y| / |A'y|_1
        y = np.asarray(sol.z, dtype=float)
        resid = float(np.abs(sf.matrix().T @ y).sum())
        reach = abs(float(sf.b @ y)) / resid if resid > 0 else math.inf
        return FeasibilityResult(INFEASIBLE, None, math.inf, status, iters, elapsed, None,
                                 f"cone solver certificate of infeasibility (excludes |z| < {reach:.2e})")
    z = np.asarray(sol.x, dtype=float)
    if z.size != sf.n_x + 1 or not np.all(np.isfinite(z)):
        return FeasibilityResult(INCONCLUSIVE, None, math.nan, status, iters, elapsed, None,
                                 f"solver returned no usable point ({status})")
    w = float(z[-1])
    t = w if sf.mode == PHASE1 else (-1.0 / w if w > 0 else math.nan)
    assignment = cs.registry.unpack(z[:-1])
    report = check_certificate(cs, assignment, opts.tol)
    if report.ok:
        return FeasibilityResult(FEASIBLE, assignment, t, status, iters, elapsed, report)
    if sf.mode == PHASE1 and status == "Solved" and t > opts.tol:
        return FeasibilityResult(INFEASIBLE, None, t, status, iters, elapsed, report,
                                 f"phase-I optimum {t:.3e} > 0")
    return FeasibilityResult(INCONCLUSIVE, assignment, t, status, iters, elapsed, report,
                             f"certificate failed at {report.worst_label} "
                             f"(margin {report.worst_margin:.3e}), solver status {status}")
