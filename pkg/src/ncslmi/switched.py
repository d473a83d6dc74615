"""Deterministic switching under an average dwell-time constraint.

Analysis LMIs certify exponential stability of a closed loop with decay rate
``alpha`` over every switching signal with average dwell time at least
``ln(mu) / alpha``.  Synthesis LMIs produce one feedback gain per delay mode.

Block layout of the analysis LMI for mode ``i`` and vertex ``j`` (each block
is ``n x n``)::

    x(t) | x(t - tau_k), k = 1..M | x(t - h_k), k = 1..M+1 | (h_k S, delta_k T) Schur pairs

The synthesis LMI prepends a slack row for ``x'(t)`` and inserts one extra
row between the delay blocks and the Schur pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bisection import BisectionResult, bisect_max
from .coords import ANALYSIS, SYNTHESIS, analysis_coordinates, solve_balanced, synthesis_coordinates
from .lmi import (
    NONNEG,
    SQUARE,
    STRICT_NEG,
    ConstraintSet,
    Registry,
    coupling_constraints,
    grid_of,
    make_lmi,
    single,
)
from .model import DelayGrid, Gains, Plant, SwitchedDelaySystem, closed_loop, shifted_matrices, vertex_weights
from .sdp import FEASIBLE, INCONCLUSIVE, INFEASIBLE, FeasibilityResult, SolverOptions

COND_LIMIT = 1e8


class RecoveryError(RuntimeError):
    """Gain recovery hit an ill-conditioned slack matrix."""


def dwell_time_bound(mu: float, alpha: float) -> float:
    """``ln(mu) / alpha``: the smallest certified average dwell time."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not mu >= 1:
        raise ValueError(f"mu must be at least 1, got {mu}")
    return math.log(mu) / alpha


def _check(alpha, mu):
    if not (alpha > 0 and math.isfinite(alpha)):
        raise ValueError(f"alpha must be positive and finite, got {alpha}")
    if not (mu > 1 and math.isfinite(mu)):
        raise ValueError(f"mu must exceed 1, got {mu}")


def _name(base: str, i: int, k: int | None, M: int) -> str:
    if k is None:
        return f"{base}_{i}"
    return f"{base}_{i}{k}" if M < 10 else f"{base}_{i}_{k}"


@dataclass
class _Family:
    P: list
    Q: list
    R: list
    S: list
    T: list
    Z: list


def _declare_family(reg: Registry, M: int, n: int, prefix: str = "") -> _Family:
    rng = range(1, M + 1)
    P = [reg.declare(_name(prefix + "P", i, None, M), n) for i in rng]
    fam = {}
    for base in "QRST":
        fam[base] = [[reg.declare(_name(prefix + base, i, k, M), n) for k in rng] for i in rng]
    Z = [[reg.declare(_name(prefix + "Z", i, k, M), n, SQUARE) for k in rng] for i in rng]
    return _Family(P, fam["Q"], fam["R"], fam["S"], fam["T"], Z)


def _xi(fam: _Family, i: int, k: int, M: int):
    """``Xi_ik`` for 0-based ``i`` and 1-based ``k`` in 1..M+1."""
    parts = []
    if k <= M:
        parts += [fam.Q[i][k - 1], fam.S[i][k - 1], fam.T[i][k - 1]]
    if k >= 2:
        parts += [fam.R[i][k - 2], fam.T[i][k - 2]]
    return sum(parts)


def _delay_blocks(g, fam: _Family, i: int, M: int, tau0: int, hh0: int) -> None:
    """Fill the ``tau_k`` and ``h_k`` blocks shared by analysis and synthesis."""
    for k in range(1, M + 1):
        T, Z = fam.T[i][k - 1], fam.Z[i][k - 1]
        ups = T - Z
        tk = tau0 + k - 1
        g[tk][tk] = -(ups + ups.T)
        g[tk][hh0 + k - 1] = ups.T
        g[tk][hh0 + k] = ups
    for k in range(1, M + 2):
        hk = hh0 + k - 1
        g[hk][hk] = -_xi(fam, i, k, M)
        if k <= M:
            g[hk][hk + 1] = fam.Z[i][k - 1]


def _additional(cs: ConstraintSet, reg: Registry, fam: _Family, M: int, n: int, mu: float,
                reciprocal_coupling: bool = False) -> None:
    rng = range(M)
    for i in rng:
        for k in rng:
            T, Z = fam.T[i][k], fam.Z[i][k]
            cs.add(make_lmi([[T, Z], [None, T]], NONNEG, f"recip[{T.name},{Z.name}]", group="reciprocal"))
    pairs = []
    for i in rng:
        for j in rng:
            if i != j:
                pairs.append((fam.P[i], fam.P[j]))
    for V in (fam.Q, fam.R, fam.S, fam.T):
        for i in rng:
            for j in rng:
                if i == j:
                    continue
                for k in rng:
                    pairs.append((V[i][k], V[j][k]))
    cs.extend(coupling_constraints(reg, pairs, mu))
    if reciprocal_coupling:
        for i in rng:
            for j in rng:
                if i == j:
                    continue
                for k in rng:
                    Ti, Zi, Tj, Zj = fam.T[i][k], fam.Z[i][k], fam.T[j][k], fam.Z[j][k]
                    d = mu * Tj - Ti
                    cs.add(make_lmi([[d, mu * Zj - Zi], [None, d]], NONNEG,
                                    f"[{Ti.name},{Zi.name}]<=mu*[{Tj.name},{Zj.name}]", group="coupling"))
    for v in fam.P + [x for V in (fam.Q, fam.R, fam.S, fam.T) for row in V for x in row]:
        cs.add(single(-v, STRICT_NEG, f"{v.name}>0", group="positivity"))


def build_analysis_lmis(sys: SwitchedDelaySystem, alpha: float, mu: float) -> ConstraintSet:
    """Analysis inequalities for a closed loop at decay rate ``alpha``."""
    _check(alpha, mu)
    M, n = sys.M, sys.n
    grid = sys.grid
    reg = Registry()
    fam = _declare_family(reg, M, n)
    cs = ConstraintSet(reg, meta={"kind": "analysis", "alpha": alpha, "mu": mu,
                                  "grid": list(grid.boundaries), "M": M, "n": n})
    sh = shifted_matrices(sys, alpha)
    Aa = sh.A_alpha
    nb = 4 * M + 2
    hh0 = M + 1
    for i in range(M):
        P = fam.P[i]
        phi = P @ Aa + Aa.T @ P + sum(fam.Q[i][k] + fam.R[i][k] - fam.S[i][k] for k in range(M))
        for j in range(2):
            Aij = sh.vertices[i][j]
            g = grid_of(nb)
            g[0][0] = phi
            g[0][1 + i] = P @ Aij
            for k in range(1, M + 1):
                g[0][hh0 + k - 1] = fam.S[i][k - 1]
            _delay_blocks(g, fam, i, M, 1, hh0)
            for k in range(1, M + 1):
                sS = 2 * M + 2 * k
                sT = sS + 1
                S, T = fam.S[i][k - 1], fam.T[i][k - 1]
                hk, dk = grid.lower(k), grid.delta(k)
                g[0][sS] = hk * (Aa.T @ S)
                g[0][sT] = dk * (Aa.T @ T)
                g[1 + i][sS] = hk * (Aij.T @ S)
                g[1 + i][sT] = dk * (Aij.T @ T)
                g[sS][sS] = -S
                g[sT][sT] = -T
            cs.add(make_lmi(g, STRICT_NEG, f"Gamma_{i + 1}{j + 1}", "main", (i + 1, j + 1), [n] * nb))
    _additional(cs, reg, fam, M, n, mu)
    return cs


def build_synthesis_lmis(plant: Plant, grid: DelayGrid, alpha: float, mu: float,
                         reciprocal_coupling: bool = True) -> ConstraintSet:
    """Synthesis inequalities with per-mode slack ``X_i`` and ``Y_i = K_i X_i``.

    ``reciprocal_coupling`` also couples the reciprocal blocks
    ``[[T_ik, Z_ik], [*, T_ik]]`` across modes, which is what brings the
    number of additional inequalities to ``M(5M^2 - 3M - 1)``.
    """
    _check(alpha, mu)
    M, n, m = grid.M, plant.n, plant.m
    reg = Registry()
    fam = _declare_family(reg, M, n)
    X = [reg.declare(f"X_{i + 1}", n, SQUARE) for i in range(M)]
    Y = [reg.declare(f"Y_{i + 1}", m, SQUARE, cols=n) for i in range(M)]
    cs = ConstraintSet(reg, meta={"kind": "synthesis", "alpha": alpha, "mu": mu,
                                  "grid": list(grid.boundaries), "M": M, "n": n, "m": m})
    Aa = alpha * np.eye(n) + plant.A
    B = plant.B
    rho = vertex_weights(grid, alpha)
    nb = 4 * M + 4
    hh0 = M + 2
    extra = 2 * M + 3
    for i in range(M):
        P, Xi = fam.P[i], X[i]
        lam = sum(fam.Q[i][k] + fam.R[i][k] - fam.S[i][k] for k in range(M)) - P
        for j in range(2):
            g = grid_of(nb)
            g[0][0] = -(Xi + Xi.T)
            g[0][1] = Aa @ Xi + P
            g[0][2 + i] = rho[i][j] * (B @ Y[i])
            g[0][extra] = Xi
            g[1][1] = lam
            for k in range(1, M + 1):
                g[1][hh0 + k - 1] = fam.S[i][k - 1]
            _delay_blocks(g, fam, i, M, 2, hh0)
            g[extra][extra] = -P
            for k in range(1, M + 1):
                sS = 2 * M + 2 + 2 * k
                sT = sS + 1
                S, T = fam.S[i][k - 1], fam.T[i][k - 1]
                hk, dk = grid.lower(k), grid.delta(k)
                g[0][sS] = hk * S
                g[0][sT] = dk * T
                g[extra][sS] = -hk * S
                g[extra][sT] = -dk * T
                g[sS][sS] = -S
                g[sT][sT] = -T
            cs.add(make_lmi(g, STRICT_NEG, f"Theta_{i + 1}{j + 1}", "main", (i + 1, j + 1), [n] * nb))
    _additional(cs, reg, fam, M, n, mu, reciprocal_coupling)
    return cs


# --------------------------------------------------------------------------
# certificates

@dataclass
class AnalysisCertificate:
    assignment: dict
    alpha: float
    mu: float
    margins: dict = field(default_factory=dict)

    @property
    def tau_a(self) -> float:
        return dwell_time_bound(self.mu, self.alpha)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "mu": self.mu,
            "tau_a": self.tau_a,
            "variables": {k: v.tolist() for k, v in self.assignment.items()},
            "margins": dict(self.margins),
        }


@dataclass
class SynthesisCertificate:
    assignment: dict
    alpha: float
    mu: float
    gains: Gains
    margins: dict = field(default_factory=dict)
    reanalysis: "Outcome | None" = None

    def to_dict(self) -> dict:
        out = {
            "alpha": self.alpha,
            "mu": self.mu,
            "tau_a": dwell_time_bound(self.mu, self.alpha),
            "gains": self.gains.to_list(),
            "recovery_cond": list(self.gains.recovery_cond),
            "variables": {k: v.tolist() for k, v in self.assignment.items()},
            "margins": dict(self.margins),
        }
        if self.reanalysis is not None:
            out["reanalysis"] = {
                "status": self.reanalysis.status,
                "margins": self.reanalysis.certificate.margins if self.reanalysis.certificate else {},
            }
        return out


@dataclass
class Outcome:
    """Tri-state result of a certify/synthesize call."""

    status: str
    certificate: object | None
    result: FeasibilityResult | None
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


def _margins(res: FeasibilityResult) -> dict:
    if res.report is None:
        return {}
    return {m.label: m.margin for m in res.report.margins}


def analyze(sys: SwitchedDelaySystem, alpha: float, mu: float, opts: SolverOptions | None = None) -> Outcome:
    """Certify ``sys`` at decay rate ``alpha`` (solved in balanced coordinates)."""
    cs = build_analysis_lmis(sys, alpha, mu)
    res, _ = solve_balanced(cs, lambda c: build_analysis_lmis(c.system(sys), alpha, mu), ANALYSIS,
                            analysis_coordinates(sys), "P_1", opts)
    if res.status != FEASIBLE:
        return Outcome(res.status, None, res, res.message)
    return Outcome(FEASIBLE, AnalysisCertificate(res.assignment, alpha, mu, _margins(res)), res)


def recover_gains(Y: list[np.ndarray], X: list[np.ndarray], cond_limit: float = COND_LIMIT) -> Gains:
    """``K_i = Y_i X_i^{-1}``; raises :class:`RecoveryError` above ``cond_limit``."""
    Ks, conds = [], []
    for i, (y, x) in enumerate(zip(Y, X)):
        c = float(np.linalg.cond(x))
        if not c <= cond_limit:
            raise RecoveryError(f"ill-conditioned recovery: cond(X_{i + 1}) = {c:.3e}")
        Ks.append(np.linalg.solve(x.T, y.T).T)
        conds.append(c)
    return Gains(tuple(Ks), tuple(conds))


def synthesize(plant: Plant, grid: DelayGrid, alpha: float, mu: float, opts: SolverOptions | None = None,
               recertify: bool = True, reciprocal_coupling: bool = True) -> Outcome:
    """Solve the synthesis LMIs, recover gains and re-certify by analysis."""
    cs = build_synthesis_lmis(plant, grid, alpha, mu, reciprocal_coupling)
    gain_vars = {f"Y_{i}" for i in range(1, grid.M + 1)}
    res, _ = solve_balanced(cs, lambda c: build_synthesis_lmis(c.plant(plant), grid, alpha, mu, reciprocal_coupling),
                            SYNTHESIS, synthesis_coordinates(plant), "X_1", opts, gain_vars=gain_vars)
    if res.status != FEASIBLE:
        return Outcome(res.status, None, res, res.message)
    a = res.assignment
    M = grid.M
    try:
        gains = recover_gains([a[f"Y_{i}"] for i in range(1, M + 1)], [a[f"X_{i}"] for i in range(1, M + 1)])
    except RecoveryError as exc:
        return Outcome(INCONCLUSIVE, None, res, str(exc))
    cert = SynthesisCertificate(a, alpha, mu, gains, _margins(res))
    if recertify:
        cert.reanalysis = analyze(closed_loop(plant, gains, grid), alpha, mu, opts)
        if not cert.reanalysis.feasible:
            return Outcome(cert.reanalysis.status, cert, res,
                           f"re-analysis of recovered gains is {cert.reanalysis.status}")
    return Outcome(FEASIBLE, cert, res)


def max_decay_rate(sys: SwitchedDelaySystem, mu: float, alpha_lo: float = 1e-3, alpha_hi: float = 10.0,
                   tol: float = 1e-3, opts: SolverOptions | None = None, max_iter: int = 40) -> BisectionResult:
    """Bisection on ``alpha`` for the analysis LMIs; payload is the certificate."""

    def probe(alpha):
        out = analyze(sys, alpha, mu, opts)
        return out.status, out.certificate

    return bisect_max(probe, alpha_lo, alpha_hi, tol, max_iter)


def max_decay_rate_synthesis(plant: Plant, grid: DelayGrid, mu: float, alpha_lo: float = 1e-3,
                             alpha_hi: float = 10.0, tol: float = 1e-3, opts: SolverOptions | None = None,
                             recertify: bool = True, max_iter: int = 40) -> BisectionResult:
    """Largest ``alpha`` for which synthesis (and, optionally, re-analysis) succeeds."""

    def probe(alpha):
        out = synthesize(plant, grid, alpha, mu, opts, recertify)
        return out.status, out.certificate

    return bisect_max(probe, alpha_lo, alpha_hi, tol, max_iter)


def max_delay_nonswitching(plant: Plant, h_min: float, alpha: float, mu: float, h_hi: float,
                           tol: float = 1e-3, opts: SolverOptions | None = None) -> BisectionResult:
    """Largest upper delay bound ``h`` such that one gain on ``[h_min, h)`` reaches ``alpha``.

    The result is sensitive to solver tolerances near the boundary.
    """

    def probe(h):
        out = synthesize(plant, DelayGrid((h_min, h)), alpha, mu, opts)
        return out.status, out.certificate

    lo = h_min + max(tol, 1e-6)
    return bisect_max(probe, lo, h_hi, tol)


__all__ = [
    "AnalysisCertificate",
    "SynthesisCertificate",
    "Outcome",
    "RecoveryError",
    "analyze",
    "build_analysis_lmis",
    "build_synthesis_lmis",
    "dwell_time_bound",
    "max_decay_rate",
    "max_decay_rate_synthesis",
    "max_delay_nonswitching",
    "recover_gains",
    "synthesize",
    "INFEASIBLE",
]
