"""Bisection on the decay rate for quasi-convex feasibility problems."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from .sdp import FEASIBLE, INCONCLUSIVE


class NoCertifiedRate(RuntimeError):
    """The lower end of the bracket is not certified."""


@dataclass
class Probe:
    alpha: float
    status: str


@dataclass
class BisectionResult:
    alpha_star: float
    payload: Any
    probes: list[Probe] = field(default_factory=list)
    iterations: int = 0
    hi_feasible: bool = False

    @property
    def inconclusive_probes(self) -> list[float]:
        return [p.alpha for p in self.probes if p.status == INCONCLUSIVE]

    @property
    def flagged(self) -> bool:
        return bool(self.inconclusive_probes)


def bisect_max(
    probe: Callable[[float], tuple[str, Any]],
    lo: float,
    hi: float,
    tol: float = 1e-3,
    max_iter: int = 40,
) -> BisectionResult:
    """Largest ``alpha`` in ``[lo, hi]`` accepted by ``probe``, to within ``tol``.

    ``probe(alpha)`` returns ``(status, payload)``.  Only ``feasible`` moves
    the lower end; ``inconclusive`` is treated like ``infeasible`` and
    recorded.  ``payload`` of the last feasible probe is returned.
    """
    if not 0 < lo < hi:
        raise ValueError(f"need 0 < alpha_lo < alpha_hi, got {lo}, {hi}")
    probes = []
    status, payload = probe(lo)
    probes.append(Probe(lo, status))
    if status != FEASIBLE:
        raise NoCertifiedRate(f"no certified decay rate above floor {lo:g} (status {status})")
    status_hi, payload_hi = probe(hi)
    probes.append(Probe(hi, status_hi))
    if status_hi == FEASIBLE:
        return BisectionResult(hi, payload_hi, probes, 0, True)
    best = payload
    it = 0
    while hi - lo > tol and it < max_iter:
        it += 1
        mid = 0.5 * (lo + hi)
        status, pl = probe(mid)
        probes.append(Probe(mid, status))
        if status == FEASIBLE:
            lo, best = mid, pl
        else:
            hi = mid
    return BisectionResult(lo, best, probes, it, False)
