"""Balanced state coordinates for better conditioned LMI solves.

The inequalities of this package are covariant under a change of state
coordinates ``x = T z``: solving them for the transformed matrices and mapping
the variables back gives an exact certificate for the original system, and
the two sets of inequalities are related by a congruence.  Picking ``T`` so
that the expected Lyapunov matrix is close to the identity keeps interior
point iterates well scaled, which matters for plants whose natural Lyapunov
matrices are ill-conditioned (the nine-bus model is one).

Analysis variables transform as ``V = T^{-T} V_z T^{-1}``; synthesis
variables (which live in the inverse space) as ``V = T V_z T'`` and
``Y = Y_z T'``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .lmi import ConstraintSet
from .model import Plant, SwitchedDelaySystem
from .sdp import FEASIBLE, INCONCLUSIVE, INFEASIBLE, FeasibilityResult, SolverOptions, check_certificate, solve_feasibility

ANALYSIS = "analysis"
SYNTHESIS = "synthesis"


@dataclass(frozen=True)
class Coordinates:
    """``x = T z``."""

    T: np.ndarray

    @classmethod
    def identity(cls, n: int) -> "Coordinates":
        return cls(np.eye(n))

    @classmethod
    def from_lyapunov(cls, P: np.ndarray, inverse: bool = False) -> "Coordinates | None":
        """``T = P^{-1/2}`` (or ``P^{1/2}`` with ``inverse``), scaled to unit norm."""
        P = 0.5 * (np.asarray(P, dtype=float) + np.asarray(P, dtype=float).T)
        w, V = np.linalg.eigh(P)
        if not np.all(np.isfinite(w)) or w[0] <= 0 or w[-1] / w[0] > 1e14:
            return None
        T = V @ np.diag(w ** (0.5 if inverse else -0.5)) @ V.T
        return cls(T / np.linalg.norm(T, 2))

    @property
    def n(self) -> int:
        return self.T.shape[0]

    @property
    def Tinv(self) -> np.ndarray:
        return np.linalg.inv(self.T)

    def system(self, sys: SwitchedDelaySystem) -> SwitchedDelaySystem:
        Ti = self.Tinv
        return SwitchedDelaySystem(Ti @ sys.A @ self.T, tuple(Ti @ a @ self.T for a in sys.delayed), sys.grid)

    def plant(self, plant: Plant) -> Plant:
        Ti = self.Tinv
        return Plant(Ti @ plant.A @ self.T, Ti @ plant.B)

    def back(self, assignment: dict, kind: str, gain_vars=()) -> dict:
        """Map working-coordinate variables to the original coordinates.

        ``gain_vars`` names the synthesis variables that carry a gain factor
        (``Y = K X``) and only transform on the right.
        """
        n, T, Ti = self.n, self.T, self.Tinv
        out = {}
        for name, v in assignment.items():
            v = np.asarray(v, dtype=float)
            if kind == ANALYSIS:
                out[name] = Ti.T @ v @ Ti if v.shape == (n, n) else v
            elif name in gain_vars:
                out[name] = v @ T.T
            elif v.shape == (n, n):
                out[name] = T @ v @ T.T
            else:
                out[name] = v
            if v.shape == (n, n) and np.array_equal(v, v.T):
                out[name] = 0.5 * (out[name] + out[name].T)
        return out

    def congruence(self, kind: str) -> np.ndarray:
        """``W`` with ``(I (x) W)' Gamma (I (x) W)`` equal to the working-coordinate LMI."""
        return self.T if kind == ANALYSIS else self.Tinv.T


def _lyap(Acl: np.ndarray) -> np.ndarray | None:
    if not np.all(np.isfinite(Acl)) or np.max(np.linalg.eigvals(Acl).real) >= 0:
        return None
    try:
        P = sla.solve_continuous_lyapunov(Acl.T, -np.eye(Acl.shape[0]))
    except (ValueError, np.linalg.LinAlgError):
        return None
    return P


def analysis_coordinates(sys: SwitchedDelaySystem) -> Coordinates:
    """Coordinates from the Lyapunov matrix of the delay-free averaged loop."""
    Acl = sys.A + sum(sys.delayed) / len(sys.delayed)
    P = _lyap(Acl)
    c = Coordinates.from_lyapunov(P) if P is not None else None
    return c or Coordinates.identity(sys.n)


def synthesis_coordinates(plant: Plant) -> Coordinates:
    """Coordinates from a unit-weight LQR design of the delay-free plant."""
    n, m = plant.n, plant.m
    try:
        S = sla.solve_continuous_are(plant.A, plant.B, np.eye(n), np.eye(m))
        K = -plant.B.T @ S
    except (ValueError, np.linalg.LinAlgError):
        return Coordinates.identity(n)
    P = _lyap(plant.A + plant.B @ K)
    c = Coordinates.from_lyapunov(P) if P is not None else None
    return c or Coordinates.identity(n)


def solve_balanced(cs: ConstraintSet, build: Callable[[Coordinates], ConstraintSet], kind: str,
                   coords: Coordinates, refine: str | None, opts: SolverOptions | None = None,
                   retries: int = 1, gain_vars=()) -> tuple[FeasibilityResult, Coordinates]:
    """Solve ``build(coords)`` and certify the mapped point against ``cs``.

    When the certificate fails, the working coordinates are re-derived from
    the variable named ``refine`` of the last point and the solve repeated
    (at most ``retries`` times).  An infeasibility verdict in any working
    coordinates is final since the change of coordinates is exact.
    """
    opts = opts or SolverOptions()
    start = time.perf_counter()
    last = None
    iters = 0
    for attempt in range(retries + 1):
        res = solve_feasibility(build(coords), opts)
        iters += res.iterations
        if res.status == INFEASIBLE:
            res.elapsed = time.perf_counter() - start
            res.iterations = iters
            return res, coords
        if res.assignment is None:
            last = res
            break
        asg = coords.back(res.assignment, kind, gain_vars)
        report = check_certificate(cs, asg, opts.tol, coords.congruence(kind))
        elapsed = time.perf_counter() - start
        if report.ok:
            return FeasibilityResult(FEASIBLE, asg, res.t, res.solver_status, iters, elapsed, report), coords
        last = FeasibilityResult(INCONCLUSIVE, asg, res.t, res.solver_status, iters, elapsed, report,
                                 f"certificate failed at {report.worst_label} "
                                 f"(margin {report.worst_margin:.3e}), solver status {res.solver_status}")
        if refine is None or refine not in asg or attempt == retries:
            break
        nxt = Coordinates.from_lyapunov(asg[refine], inverse=(kind == SYNTHESIS))
        if nxt is None:
            break
        coords = nxt
    last.elapsed = time.perf_counter() - start
    last.iterations = iters
    return last, coords
