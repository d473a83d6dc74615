"""Delay traces, closed-loop DDE integration and empirical decay estimates.

A :class:`DelayTrace` is a right-continuous mode signal plus a piecewise
linear delay waveform.  :func:`simulate` integrates

    x'(t) = A x(t) + A_sigma(t) x(t - tau(t)),    x(s) = phi(s) for s <= 0

with classical RK4 on a uniform output grid.  Steps are split at every kink of
the right-hand side that is known in advance: mode switches, waveform knots
and the times where ``t - tau(t)`` crosses a switch, 0, or an earlier such
crossing (a few generations deep).
The stored history is interpolated with cubic Hermite polynomials so that the
delayed term is as accurate as the integrator itself.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .model import DelayGrid, SwitchedDelaySystem, validate_rate_matrix

WAVEFORMS = ("random_walk", "constant", "sinusoid")
EDGE_GAP = 1e-6        # the waveform stays this far below the open upper bound
SAMPLE_PERIOD = 1e-3   # knot spacing of the sampled waveforms (absolute grid)
SINE_PERIOD = 0.1
_BLOWUP = 1e100
DIVERGE_GROWTH = 1e6     # final / initial norm above which a run counts as diverged
_MERGE = 1e-12
CROSSING_GENERATIONS = 3


class SimulationError(ValueError):
    pass


# --------------------------------------------------------------------------
# traces


@dataclass
class DelayTrace:
    """Mode events plus a piecewise linear delay waveform.

    ``events`` is a list of ``(time, mode)`` with strictly increasing times,
    the first at 0.  ``knot_t``/``knot_d`` describe the delay; a switch time
    appears twice (left limit, then the new value) which keeps the waveform
    right-continuous.
    """

    events: list
    knot_t: np.ndarray
    knot_d: np.ndarray
    horizon: float
    seed: int | None = None
    waveform: str = "custom"

    def __post_init__(self):
        self.knot_t = np.asarray(self.knot_t, dtype=float)
        self.knot_d = np.asarray(self.knot_d, dtype=float)
        self._ev_t = np.array([e[0] for e in self.events], dtype=float)
        self._ev_m = np.array([e[1] for e in self.events], dtype=int)

    @classmethod
    def constant(cls, tau: float, horizon: float, mode: int = 1) -> "DelayTrace":
        """A single-mode trace with a fixed delay."""
        return cls([(0.0, mode)], [0.0, horizon], [tau, tau], horizon, None, "constant")

    @property
    def switch_times(self) -> np.ndarray:
        return self._ev_t[1:]

    def mode(self, t: float) -> int:
        k = int(np.searchsorted(self._ev_t, t, side="right")) - 1
        return int(self._ev_m[max(k, 0)])

    def delay(self, t: float) -> float:
        """Right-continuous delay value."""
        kt, kd = self.knot_t, self.knot_d
        p = int(np.searchsorted(kt, t, side="right")) - 1
        p = min(max(p, 0), len(kt) - 2)
        t0, t1 = kt[p], kt[p + 1]
        if t1 <= t0:
            return float(kd[p + 1])
        w = (t - t0) / (t1 - t0)
        return float(kd[p] + w * (kd[p + 1] - kd[p]))

    def occupancy(self, M: int) -> np.ndarray:
        """Fraction of ``[0, horizon)`` spent in each mode."""
        ends = np.append(self._ev_t[1:], self.horizon)
        occ = np.zeros(M)
        np.add.at(occ, self._ev_m - 1, ends - self._ev_t)
        return occ / self.horizon

    def holding_times(self, mode: int) -> np.ndarray:
        """Completed sojourns in ``mode`` (the censored last one is dropped)."""
        ends = self._ev_t[1:]
        starts = self._ev_t[:-1]
        sel = self._ev_m[:-1] == mode
        return ends[sel] - starts[sel]

    def check(self, grid: DelayGrid) -> None:
        """Raise unless every knot lies in its mode's interval."""
        if len(self._ev_t) == 0 or self._ev_t[0] != 0.0:
            raise SimulationError("first event must be at t = 0")
        if np.any(np.diff(self._ev_t) <= 0):
            raise SimulationError("event times must be strictly increasing")
        if np.any((self._ev_m < 1) | (self._ev_m > grid.M)):
            raise SimulationError("event mode outside 1..M")
        for p in range(len(self.knot_t) - 1):
            a, b = self.knot_t[p], self.knot_t[p + 1]
            if b <= a:
                continue
            i = self.mode(0.5 * (a + b))
            lo, hi = grid.lower(i), grid.upper(i)
            for d in (self.knot_d[p], self.knot_d[p + 1]):
                if not (lo <= d < hi):
                    raise SimulationError(f"delay {d} outside mode {i} interval [{lo}, {hi})")

    def to_dict(self, knot_horizon: float | None = None) -> dict:
        """JSON-ready form; ``knot_horizon`` drops waveform knots beyond that time."""
        kt, kd = self.knot_t, self.knot_d
        out = {
            "events": [[float(t), int(m)] for t, m in self.events],
            "waveform": self.waveform,
            "seed": self.seed,
            "horizon": self.horizon,
        }
        if knot_horizon is not None and knot_horizon < self.horizon:
            k = min(int(np.searchsorted(kt, knot_horizon, side="right")) + 1, len(kt))
            kt, kd = kt[:k], kd[:k]
            out["knot_horizon"] = float(knot_horizon)
        out["knots"] = [[float(t), float(d)] for t, d in zip(kt, kd)]
        return out

    def to_json(self, path=None, knot_horizon: float | None = None) -> str:
        text = json.dumps(self.to_dict(knot_horizon))
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "DelayTrace":
        knots = np.asarray(d["knots"], dtype=float)
        return cls([tuple(e) for e in d["events"]], knots[:, 0], knots[:, 1],
                   float(d["horizon"]), d.get("seed"), d.get("waveform", "custom"))


def _segment_knots(lo, hi, s0, s1, waveform, rng):
    """Knots of the delay on the mode segment ``[s0, s1]``."""
    top = hi - EDGE_GAP
    if waveform == "constant":
        mid = 0.5 * (lo + hi)
        return np.array([s0, s1]), np.array([mid, mid])
    k0 = math.floor(s0 / SAMPLE_PERIOD) + 1
    k1 = math.ceil(s1 / SAMPLE_PERIOD) - 1
    inner = np.arange(k0, k1 + 1) * SAMPLE_PERIOD if k1 >= k0 else np.empty(0)
    inner = inner[(inner > s0 + _MERGE) & (inner < s1 - _MERGE)]
    ts = np.concatenate(([s0], inner, [s1]))
    if waveform == "sinusoid":
        amp = 0.5 * (top - lo)
        phase = rng.uniform(0, 2 * np.pi)
        d = lo + amp + amp * np.sin(2 * np.pi * (ts - s0) / SINE_PERIOD + phase)
        return ts, np.clip(d, lo, top)
    if waveform == "random_walk":
        sd = (hi - lo) / 50.0
        d = np.empty(len(ts))
        d[0] = rng.uniform(lo, top)
        steps = rng.normal(0.0, sd, len(ts) - 1)
        for k in range(1, len(ts)):
            d[k] = min(max(d[k - 1] + steps[k - 1], lo), top)
        return ts, d
    raise SimulationError(f"unknown waveform {waveform!r}; choose from {WAVEFORMS}")


def _build_trace(grid, events, horizon, seed, waveform, rng) -> DelayTrace:
    kt, kd = [], []
    bounds = [e[0] for e in events] + [horizon]
    for (s0, mode), s1 in zip(events, bounds[1:]):
        ts, ds = _segment_knots(grid.lower(mode), grid.upper(mode), s0, s1, waveform, rng)
        kt.append(ts)
        kd.append(ds)
    return DelayTrace(list(events), np.concatenate(kt), np.concatenate(kd), horizon, seed, waveform)


def _check_horizon(horizon):
    if not (horizon > 0 and math.isfinite(horizon)):
        raise SimulationError(f"horizon must be positive and finite, got {horizon}")


def gen_adt_trace(grid: DelayGrid, tau_a: float, N0: float = 1, horizon: float = 4.0,
                  seed: int = 0, waveform: str = "random_walk",
                  mean_hold: float | None = None, initial_mode: int | None = None) -> DelayTrace:
    """Random switching signal that satisfies the average dwell-time bound.

    Candidate switch times are drawn with exponential gaps (mean ``mean_hold``,
    default ``tau_a``) and pushed later whenever a window ending at the switch
    would break ``N(T, t) <= N0 + (T - t) / tau_a``.  The next mode is drawn
    uniformly among the other modes.
    """
    _check_horizon(horizon)
    if not tau_a > 0:
        raise SimulationError("tau_a must be positive")
    if N0 < 1:
        raise SimulationError("N0 must be at least 1")
    if waveform not in WAVEFORMS:
        raise SimulationError(f"unknown waveform {waveform!r}; choose from {WAVEFORMS}")
    rng = np.random.default_rng(seed)
    M = grid.M
    mode = int(rng.integers(1, M + 1)) if initial_mode is None else int(initial_mode)
    events = [(0.0, mode)]
    if M > 1 and math.isfinite(tau_a):
        hold = tau_a if mean_hold is None else mean_hold
        sw: list[float] = []
        t = 0.0
        while True:
            cand = t + rng.exponential(hold)
            m = len(sw) + 1    # index of the candidate among switches
            # window [e_a, cand] holds m - a + 1 switches
            earliest = max((sw[a] + tau_a * (m - a - N0) for a in range(len(sw))), default=0.0)
            cand = max(cand, earliest + 1e-9 * max(1.0, tau_a))
            if cand >= horizon:
                break
            nxt = int(rng.integers(1, M))
            mode = nxt if nxt < mode else nxt + 1
            sw.append(cand)
            events.append((cand, mode))
            t = cand
    return _build_trace(grid, events, horizon, seed, waveform, rng)


def gen_markov_trace(grid: DelayGrid, Pi, horizon: float, seed: int = 0,
                     waveform: str = "random_walk", initial_mode: int = 1) -> DelayTrace:
    """Continuous-time Markov chain trace with exponential holding times."""
    _check_horizon(horizon)
    Pi = validate_rate_matrix(Pi, grid.M)
    rng = np.random.default_rng(seed)
    mode = int(initial_mode)
    events = [(0.0, mode)]
    t = 0.0
    while True:
        rate = -Pi[mode - 1, mode - 1]
        if rate <= 0:
            break  # absorbing
        t += rng.exponential(1.0 / rate)
        if t >= horizon:
            break
        p = Pi[mode - 1].copy()
        p[mode - 1] = 0.0
        mode = int(rng.choice(grid.M, p=p / p.sum())) + 1
        events.append((t, mode))
    return _build_trace(grid, events, horizon, seed, waveform, rng)


@dataclass
class AdtReport:
    ok: bool
    worst_slack: float
    worst_window: tuple | None = None   # (t_start, t_end, switches, bound)

    def __bool__(self):
        return self.ok


def verify_adt(trace: DelayTrace, tau_a: float, N0: float = 1, tol: float = 1e-9) -> AdtReport:
    """Check every event-aligned window against the dwell-time bound."""
    e = np.asarray(trace.switch_times, dtype=float)
    if len(e) == 0:
        return AdtReport(True, math.inf)
    worst, where = math.inf, None
    for b in range(len(e)):
        a = np.arange(b + 1)
        count = b - a + 1
        bound = N0 + (e[b] - e[a]) / tau_a
        slack = bound - count
        k = int(np.argmin(slack))
        if slack[k] < worst:
            worst = float(slack[k])
            where = (float(e[k]), float(e[b]), int(count[k]), float(bound[k]))
    return AdtReport(worst >= -tol, worst, where)


# --------------------------------------------------------------------------
# integration


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    mode: np.ndarray
    delay: np.ndarray
    step: float
    phi: str = "constant x0"
    diverged: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.x, axis=1)

    def to_csv(self, path) -> None:
        n = self.x.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["mode", "delay"])
            for k in range(len(self.t)):
                w.writerow([f"{self.t[k]:.12g}"] + [f"{v:.12g}" for v in self.x[k]]
                           + [int(self.mode[k]), f"{self.delay[k]:.12g}"])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], np.array(rows[1:], dtype=float)
        n = len(head) - 3
        t = body[:, 0]
        step = float(t[1] - t[0]) if len(t) > 1 else 0.0
        return cls(t, body[:, 1:1 + n], body[:, 1 + n].astype(int), body[:, 2 + n], step)


def _crossings(kt, kd, targets, horizon):
    """Times where ``t - tau(t)`` equals one of ``targets``."""
    targets = np.sort(np.asarray(targets, dtype=float))
    out = []
    if len(targets) == 0:
        return np.empty(0)
    for p in range(len(kt) - 1):
        u0, u1 = kt[p], kt[p + 1]
        if u1 <= u0:
            continue
        d0, d1 = kd[p], kd[p + 1]
        s0, s1 = u0 - d0, u1 - d1
        lo, hi = min(s0, s1), max(s0, s1)
        i0 = np.searchsorted(targets, lo, side="right")
        i1 = np.searchsorted(targets, hi, side="left")
        if i1 <= i0:
            continue
        for b in targets[i0:i1]:
            t = u0 + (b - s0) / (s1 - s0) * (u1 - u0)
            if u0 < t < u1 and t <= horizon:
                out.append(t)
    return np.array(out)


def simulate(sys: SwitchedDelaySystem, trace: DelayTrace, x0=None,
             phi: Callable[[float], np.ndarray] | None = None, step: float = 1e-3,
             horizon: float | None = None) -> Trajectory:
    """Integrate the closed loop along ``trace``.

    Parameters
    ----------
    x0 : array_like, optional
        Initial state; defaults to ``phi(0)`` or a vector of ones.
    phi : callable, optional
        History on ``[-h_{M+1}, 0]``.  Defaults to the constant ``x0``.
    step : float
        Output and integration step; must not exceed ``h_1 / 4``.

    The run is flagged ``diverged`` when the state overflows (integration
    stops there) or ends more than ``DIVERGE_GROWTH`` times larger than
    ``x0``.
    """
    grid = sys.grid
    h1 = grid.lower(1)
    if not step > 0:
        raise SimulationError("step must be positive")
    if step > h1 / 4 + 1e-15:
        raise SimulationError(f"step {step} exceeds h_1/4 = {h1 / 4}")
    horizon = trace.horizon if horizon is None else float(horizon)
    _check_horizon(horizon)
    if horizon > trace.horizon + 1e-12:
        raise SimulationError("simulation horizon exceeds the trace horizon")
    n = sys.n
    if x0 is None:
        x0 = phi(0.0) if phi is not None else np.ones(n)
    x0 = np.asarray(x0, dtype=float).reshape(n)
    if phi is None:
        phi_fn = lambda s: x0  # noqa: E731
        phi_desc = "constant x0"
    else:
        phi_fn = lambda s: np.asarray(phi(s), dtype=float).reshape(n)  # noqa: E731
        phi_desc = getattr(phi, "__name__", "callable")

    A = sys.A
    Ad = sys.delayed
    kt, kd = trace.knot_t, trace.knot_d
    last_knot = min(int(np.searchsorted(kt, horizon, side="right")) + 1, len(kt))
    kt, kd = kt[:last_knot], kd[:last_knot]
    sw = trace.switch_times
    sw = sw[sw < horizon]
    N = int(math.floor(horizon / step + 1e-9))

    # x' jumps at 0 and at switches; each propagation through the delay moves
    # the jump one derivative higher, so a few generations suffice for RK4
    gens = [np.append(sw, 0.0)]
    for _ in range(CROSSING_GENERATIONS):
        gens.append(_crossings(kt, kd, gens[-1], horizon))
    bps = np.concatenate([kt] + gens)
    bps = np.unique(bps[(bps > _MERGE) & (bps < N * step - _MERGE)])

    cap = N + len(bps) + 2
    T = np.empty(cap)
    X = np.empty((cap, n))
    Dr = np.empty((cap, n))   # right derivative at node
    Dl = np.empty((cap, n))   # left derivative at node
    T[0] = 0.0
    X[0] = x0
    count = [1]

    def hist(s):
        if s <= 0.0:
            return phi_fn(s)
        c = count[0]
        k = int(np.searchsorted(T[:c], s, side="right")) - 1
        if k >= c - 1:
            if s - T[c - 1] > 1e-12:
                raise SimulationError("delayed argument beyond stored history")
            return X[c - 1]
        ta, tb = T[k], T[k + 1]
        hh = tb - ta
        th = (s - ta) / hh
        th2, th3 = th * th, th * th * th
        return ((2 * th3 - 3 * th2 + 1) * X[k] + (th3 - 2 * th2 + th) * hh * Dr[k]
                + (3 * th2 - 2 * th3) * X[k + 1] + (th3 - th2) * hh * Dl[k + 1])

    def advance(t0, t1):
        c = count[0]
        mid = 0.5 * (t0 + t1)
        p = int(np.searchsorted(kt, mid, side="right")) - 1
        ua, ub = kt[p], kt[p + 1]
        slope = (kd[p + 1] - kd[p]) / (ub - ua)
        Ai = Ad[trace.mode(mid) - 1]
        tau = lambda t: kd[p] + slope * (t - ua)  # noqa: E731
        x = X[c - 1]
        h = t1 - t0
        g0 = Ai @ hist(t0 - tau(t0))
        gm = Ai @ hist(mid - tau(mid))
        g1 = Ai @ hist(t1 - tau(t1))
        k1 = A @ x + g0
        k2 = A @ (x + 0.5 * h * k1) + gm
        k3 = A @ (x + 0.5 * h * k2) + gm
        k4 = A @ (x + h * k3) + g1
        x1 = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        Dr[c - 1] = k1
        T[c] = t1
        X[c] = x1
        Dl[c] = A @ x1 + g1
        count[0] = c + 1
        return x1

    ts = np.arange(N + 1) * step
    xs = np.empty((N + 1, n))
    xs[0] = x0
    diverged = False
    j = 0
    t = 0.0
    last = N
    for k in range(N):
        target = ts[k + 1]
        while j < len(bps) and bps[j] < target - _MERGE:
            if bps[j] > t + _MERGE:
                advance(t, bps[j])
                t = bps[j]
            j += 1
        while j < len(bps) and bps[j] <= target + _MERGE:
            j += 1
        x1 = advance(t, target)
        t = target
        if not np.all(np.isfinite(x1)) or np.max(np.abs(x1)) > _BLOWUP:
            diverged = True
            last = k
            break
        xs[k + 1] = x1
    good = last + 1
    x_ref = max(float(np.linalg.norm(x0)), 1e-300)
    if np.linalg.norm(xs[good - 1]) > DIVERGE_GROWTH * x_ref:
        diverged = True
    ts = ts[:good]
    modes = np.array([trace.mode(s) for s in ts])
    delays = np.array([trace.delay(s) for s in ts])
    return Trajectory(ts, xs[:good], modes, delays, step, phi_desc, diverged,
                      {"seed": trace.seed, "waveform": trace.waveform})


# --------------------------------------------------------------------------
# decay estimation


def estimate_decay(traj, discard_fraction: float = 0.1, t=None) -> float:
    """Least-squares decay rate of the peak envelope of ``||x(t)||``.

    ``traj`` is a :class:`Trajectory` or a sample array (then ``t`` is
    required).  Interior local maxima of the norm form the envelope; with fewer
    than three peaks the raw log-norm is fitted instead.  Positive means
    decaying.
    """
    if isinstance(traj, Trajectory):
        t, norms = traj.t, traj.norms
    else:
        x = np.asarray(traj, dtype=float)
        norms = np.abs(x) if x.ndim == 1 else np.linalg.norm(x, axis=1)
        t = np.asarray(t, dtype=float)
    if not 0 <= discard_fraction < 1:
        raise SimulationError("discard_fraction must lie in [0, 1)")
    if len(t) == 0 or np.all(norms == 0):
        raise SimulationError("degenerate trajectory (all-zero)")
    keep = t >= t[0] + discard_fraction * (t[-1] - t[0])
    tt, nn = t[keep], norms[keep]
    if len(tt) < 20:
        raise SimulationError(f"need at least 20 samples after discard, got {len(tt)}")
    inner = (nn[1:-1] > nn[:-2]) & (nn[1:-1] >= nn[2:])
    idx = np.nonzero(inner)[0] + 1
    if len(idx) >= 3:
        tt, nn = tt[idx], nn[idx]
    pos = nn > 0
    if pos.sum() < 2:
        raise SimulationError("degenerate trajectory (all-zero)")
    slope = np.polyfit(tt[pos], np.log(nn[pos]), 1)[0]
    return float(-slope)
