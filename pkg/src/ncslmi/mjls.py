"""Markovian jump delay modes: mean-square analysis and synthesis LMIs.

The delay mode follows a continuous-time Markov chain with rate matrix
``Pi``.  Each mode ``i`` and vertex ``j`` contributes one LMI over the blocks::

    x(t) | x(t - tau_i) | x(t - h_i) | x(t - h_{i+1}) | S Schur | T Schur

The synthesis LMI adds a leading slack block and one extra block before the
Schur pair; the slack ``X`` is shared by all modes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bisection import BisectionResult, bisect_max
from .coords import ANALYSIS, SYNTHESIS, analysis_coordinates, solve_balanced, synthesis_coordinates
from .lmi import NONNEG, SQUARE, STRICT_NEG, ConstraintSet, Registry, grid_of, make_lmi, single
from .model import DelayGrid, Gains, MjlsDelaySystem, Plant, closed_loop, shifted_matrices, validate_rate_matrix, vertex_weights
from .sdp import FEASIBLE, INCONCLUSIVE, SolverOptions
from .switched import COND_LIMIT, Outcome, RecoveryError, _margins


@dataclass(frozen=True)
class MjlsConstants:
    """Scalars entering the stochastic LMIs.

    ``kappa`` is 1-based.  ``c_Q`` and ``c_R`` multiply ``Q_kappa`` and
    ``R_kappa``; for two modes they reduce to ``delta_1`` and ``delta_2``.
    """

    eta: float
    kappa: int
    delta_max: float
    eps1: tuple[float, ...]
    eps2: tuple[float, ...]
    c_Q: float
    c_R: float

    def to_dict(self) -> dict:
        return {"eta": self.eta, "kappa": self.kappa, "delta_max": self.delta_max,
                "eps1": list(self.eps1), "eps2": list(self.eps2), "c_Q": self.c_Q, "c_R": self.c_R}


def compute_constants(grid: DelayGrid, Pi, eta_gain: float = 1.0) -> MjlsConstants:
    """Scalars of the stochastic LMIs for ``grid`` and rate matrix ``Pi``.

    ``eta_gain`` scales the rate-dependent parts of ``eps1`` and ``eps2``;
    values above 1 give a more conservative (still valid) bound.
    """
    if not eta_gain >= 1.0:
        raise ValueError("eta_gain must be at least 1")
    M = grid.M
    P = validate_rate_matrix(Pi, M)
    rates = np.abs(np.diag(P))
    eta = float(rates.max())
    kappa = int(np.argmax(rates)) + 1  # argmax returns the first maximiser
    h = grid.boundaries
    deltas = grid.deltas
    dmax = max(deltas)
    h1, hM, hM1 = h[0], h[M - 1], h[M]
    eps1 = tuple(h[i] ** 2 + eta_gain * eta * (hM ** 3 - h1 ** 3) / 2.0 for i in range(M))
    eps2 = tuple(deltas[i] ** 2 + eta_gain * eta * dmax * (hM1 ** 2 - h1 ** 2) / 2.0 for i in range(M))
    c_Q = hM - h1
    c_R = hM1 - h[1] if M >= 1 else 0.0
    return MjlsConstants(eta, kappa, dmax, eps1, eps2, c_Q, c_R)


@dataclass
class _Vars:
    P: list
    Q: list
    R: list
    S: object
    T: object
    Qb: object
    Rb: object
    Z: object


def _declare(reg: Registry, M: int, n: int) -> _Vars:
    r = range(1, M + 1)
    P = [reg.declare(f"P_{i}", n) for i in r]
    Q = [reg.declare(f"Q_{i}", n) for i in r]
    R = [reg.declare(f"R_{i}", n) for i in r]
    S = reg.declare("S", n)
    T = reg.declare("T", n)
    Qb = reg.declare("Qbar", n)
    Rb = reg.declare("Rbar", n)
    Z = reg.declare("Z", n, SQUARE)
    return _Vars(P, Q, R, S, T, Qb, Rb, Z)


def _weighted(Pi_row, vars_):
    return sum(float(p) * v for p, v in zip(Pi_row, vars_) if p != 0.0)


def _generator_terms(v: _Vars, Pi: np.ndarray, i: int, grid: DelayGrid, c: MjlsConstants, eta_weighted: bool):
    """``sum_j pi_ij P_j + Q_i + h_M Qbar + c_Q Q_k + R_i + h_{M+1} Rbar + c_R R_k - S``."""
    M = grid.M
    w = c.eta if eta_weighted else 1.0
    k = c.kappa - 1
    expr = (v.Q[i] + grid.boundaries[M - 1] * v.Qb + (w * c.c_Q) * v.Q[k]
            + v.R[i] + grid.boundaries[M] * v.Rb + (w * c.c_R) * v.R[k] - v.S)
    return expr + _weighted(Pi[i], v.P)


def _small_lmis(cs: ConstraintSet, v: _Vars, Pi: np.ndarray, M: int) -> None:
    cs.add(make_lmi([[v.T, v.Z], [None, v.T]], NONNEG, "recip[T,Z]", group="reciprocal"))
    for i in range(M):
        for name, bar, fam in (("Qbar", v.Qb, v.Q), ("Rbar", v.Rb, v.R)):
            cs.add(single(bar - _weighted(Pi[i], fam), NONNEG, f"sum_pi_{fam[0].name[0]}[{i + 1}]<={name}", group="rate_bound"))
    for var in v.P + v.Q + v.R + [v.S, v.T, v.Qb, v.Rb]:
        cs.add(single(-var, STRICT_NEG, f"{var.name}>0", group="positivity"))


def build_mjls_analysis_lmis(sys: MjlsDelaySystem, alpha: float, eta_weighted: bool = False, eta_gain: float = 1.0) -> ConstraintSet:
    """Mean-square analysis inequalities at decay rate ``alpha``.

    ``eta_weighted`` multiplies the ``Q_kappa`` and ``R_kappa`` terms by
    ``eta`` as the functional's derivative suggests; the default keeps the
    unweighted form.
    """
    if not (alpha > 0 and math.isfinite(alpha)):
        raise ValueError(f"alpha must be positive, got {alpha}")
    M, n, grid = sys.M, sys.n, sys.grid
    Pi = sys.Pi
    c = compute_constants(grid, Pi, eta_gain)
    reg = Registry()
    v = _declare(reg, M, n)
    cs = ConstraintSet(reg, meta={"kind": "mjls_analysis", "alpha": alpha, "Pi": Pi.tolist(),
                                  "constants": c.to_dict(), "eta_weighted": eta_weighted, "eta_gain": eta_gain})
    sh = shifted_matrices(sys.base, alpha)
    Aa = sh.A_alpha
    ups = v.T - v.Z
    for i in range(M):
        P = v.P[i]
        phi = Aa.T @ P + P @ Aa + _generator_terms(v, Pi, i, grid, c, eta_weighted)
        r1, r2 = math.sqrt(c.eps1[i]), math.sqrt(c.eps2[i])
        for j in range(2):
            Aij = sh.vertices[i][j]
            g = grid_of(6)
            g[0][0] = phi
            g[0][1] = P @ Aij
            g[0][2] = v.S
            g[0][4] = r1 * (Aa.T @ v.S)
            g[0][5] = r2 * (Aa.T @ v.T)
            g[1][1] = -(ups + ups.T)
            g[1][2] = ups.T
            g[1][3] = ups
            g[1][4] = r1 * (Aij.T @ v.S)
            g[1][5] = r2 * (Aij.T @ v.T)
            g[2][2] = -(v.Q[i] + v.S + v.T)
            g[2][3] = v.Z
            g[3][3] = -(v.R[i] + v.T)
            g[4][4] = -v.S
            g[5][5] = -v.T
            cs.add(make_lmi(g, STRICT_NEG, f"Gamma_{i + 1}{j + 1}", "main", (i + 1, j + 1), [n] * 6))
    _small_lmis(cs, v, Pi, M)
    return cs


def build_mjls_synthesis_lmis(plant: Plant, grid: DelayGrid, Pi, alpha: float,
                              eta_weighted: bool = False, eta_gain: float = 1.0) -> ConstraintSet:
    """Synthesis inequalities with a shared slack ``X`` and ``Y_i = K_i X``."""
    if not (alpha > 0 and math.isfinite(alpha)):
        raise ValueError(f"alpha must be positive, got {alpha}")
    M, n, m = grid.M, plant.n, plant.m
    Pi = validate_rate_matrix(Pi, M)
    c = compute_constants(grid, Pi, eta_gain)
    reg = Registry()
    v = _declare(reg, M, n)
    X = reg.declare("X", n, SQUARE)
    Y = [reg.declare(f"Y_{i + 1}", m, SQUARE, cols=n) for i in range(M)]
    cs = ConstraintSet(reg, meta={"kind": "mjls_synthesis", "alpha": alpha, "Pi": Pi.tolist(),
                                  "constants": c.to_dict(), "eta_weighted": eta_weighted, "eta_gain": eta_gain})
    Aa = alpha * np.eye(n) + plant.A
    rho = vertex_weights(grid, alpha)
    ups = v.T - v.Z
    for i in range(M):
        P = v.P[i]
        beth = _generator_terms(v, Pi, i, grid, c, eta_weighted) - P
        r1, r2 = math.sqrt(c.eps1[i]), math.sqrt(c.eps2[i])
        for j in range(2):
            g = grid_of(8)
            g[0][0] = -(X + X.T)
            g[0][1] = Aa @ X + P
            g[0][2] = rho[i][j] * (plant.B @ Y[i])
            g[0][5] = X
            g[0][6] = r1 * v.S
            g[0][7] = r2 * v.T
            g[1][1] = beth
            g[1][3] = v.S
            g[2][2] = -(ups + ups.T)
            g[2][3] = ups.T
            g[2][4] = ups
            g[3][3] = -(v.Q[i] + v.S + v.T)
            g[3][4] = v.Z
            g[4][4] = -(v.R[i] + v.T)
            g[5][5] = -P
            g[5][6] = -r1 * v.S
            g[5][7] = -r2 * v.T
            g[6][6] = -v.S
            g[7][7] = -v.T
            cs.add(make_lmi(g, STRICT_NEG, f"Psi_{i + 1}{j + 1}", "main", (i + 1, j + 1), [n] * 8))
    _small_lmis(cs, v, Pi, M)
    return cs


@dataclass
class MjlsCertificate:
    assignment: dict
    alpha: float
    Pi: np.ndarray
    constants: MjlsConstants
    margins: dict = field(default_factory=dict)
    gains: Gains | None = None
    reanalysis: Outcome | None = None

    def to_dict(self) -> dict:
        out = {
            "alpha": self.alpha,
            "Pi": self.Pi.tolist(),
            "constants": self.constants.to_dict(),
            "variables": {k: v.tolist() for k, v in self.assignment.items()},
            "margins": dict(self.margins),
        }
        if self.gains is not None:
            out["gains"] = self.gains.to_list()
            out["recovery_cond"] = list(self.gains.recovery_cond)
        if self.reanalysis is not None:
            out["reanalysis"] = {
                "status": self.reanalysis.status,
                "margins": self.reanalysis.certificate.margins if self.reanalysis.certificate else {},
            }
        return out


def analyze_mjls(sys: MjlsDelaySystem, alpha: float, opts: SolverOptions | None = None,
                 eta_weighted: bool = False, eta_gain: float = 1.0) -> Outcome:
    cs = build_mjls_analysis_lmis(sys, alpha, eta_weighted, eta_gain)
    res, _ = solve_balanced(
        cs, lambda co: build_mjls_analysis_lmis(MjlsDelaySystem(co.system(sys.base), sys.Pi), alpha,
                                                eta_weighted, eta_gain),
        ANALYSIS, analysis_coordinates(sys.base), "P_1", opts)
    if res.status != FEASIBLE:
        return Outcome(res.status, None, res, res.message)
    cert = MjlsCertificate(res.assignment, alpha, sys.Pi, compute_constants(sys.grid, sys.Pi, eta_gain), _margins(res))
    return Outcome(FEASIBLE, cert, res)


def synthesize_mjls(plant: Plant, grid: DelayGrid, Pi, alpha: float, opts: SolverOptions | None = None,
                    recertify: bool = True, eta_weighted: bool = False, eta_gain: float = 1.0) -> Outcome:
    cs = build_mjls_synthesis_lmis(plant, grid, Pi, alpha, eta_weighted, eta_gain)
    gain_vars = {f"Y_{i + 1}" for i in range(grid.M)}
    res, _ = solve_balanced(
        cs, lambda co: build_mjls_synthesis_lmis(co.plant(plant), grid, Pi, alpha, eta_weighted, eta_gain),
        SYNTHESIS, synthesis_coordinates(plant), "X", opts, gain_vars=gain_vars)
    if res.status != FEASIBLE:
        return Outcome(res.status, None, res, res.message)
    a = res.assignment
    X = a["X"]
    cond = float(np.linalg.cond(X))
    if not cond <= COND_LIMIT:
        return Outcome(INCONCLUSIVE, None, res, f"ill-conditioned recovery: cond(X) = {cond:.3e}")
    Ks = tuple(np.linalg.solve(X.T, a[f"Y_{i + 1}"].T).T for i in range(grid.M))
    gains = Gains(Ks, (cond,) * grid.M)
    Pi = validate_rate_matrix(Pi, grid.M)
    cert = MjlsCertificate(a, alpha, Pi, compute_constants(grid, Pi, eta_gain), _margins(res), gains)
    if recertify:
        sys = MjlsDelaySystem(closed_loop(plant, gains, grid), Pi)
        cert.reanalysis = analyze_mjls(sys, alpha, opts, eta_weighted, eta_gain)
        if not cert.reanalysis.feasible:
            return Outcome(cert.reanalysis.status, cert, res,
                           f"re-analysis of recovered gains is {cert.reanalysis.status}")
    return Outcome(FEASIBLE, cert, res)


def max_decay_rate_mjls(sys: MjlsDelaySystem, alpha_lo: float = 1e-3, alpha_hi: float = 10.0, tol: float = 1e-3,
                        opts: SolverOptions | None = None, eta_weighted: bool = False, eta_gain: float = 1.0,
                        max_iter: int = 40) -> BisectionResult:
    def probe(alpha):
        out = analyze_mjls(sys, alpha, opts, eta_weighted, eta_gain)
        return out.status, out.certificate

    return bisect_max(probe, alpha_lo, alpha_hi, tol, max_iter)


def max_decay_rate_mjls_synthesis(plant: Plant, grid: DelayGrid, Pi, alpha_lo: float = 1e-3,
                                  alpha_hi: float = 10.0, tol: float = 1e-3, opts: SolverOptions | None = None,
                                  recertify: bool = True, eta_weighted: bool = False, eta_gain: float = 1.0,
                                  max_iter: int = 40) -> BisectionResult:
    def probe(alpha):
        out = synthesize_mjls(plant, grid, Pi, alpha, opts, recertify, eta_weighted, eta_gain)
        return out.status, out.certificate

    return bisect_max(probe, alpha_lo, alpha_hi, tol, max_iter)


__all__ = [
    "MjlsCertificate",
    "MjlsConstants",
    "RecoveryError",
    "analyze_mjls",
    "build_mjls_analysis_lmis",
    "build_mjls_synthesis_lmis",
    "compute_constants",
    "max_decay_rate_mjls",
    "max_decay_rate_mjls_synthesis",
    "synthesize_mjls",
]
