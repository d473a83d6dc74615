"""Plants, delay grids, switching regimes, gains and closed loops.

All times are stored in seconds.  Configuration files may give the delay grid
in milliseconds (``"unit": "ms"``) or seconds.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .matrix import MatrixError, as_matrix


class ConfigError(ValueError):
    """Malformed or inconsistent system description."""


_UNITS = {"s": 1.0, "ms": 1e-3}


@dataclass(frozen=True)
class DelayGrid:
    """Boundaries ``h_1 < ... < h_{M+1}`` (seconds); mode ``i`` owns ``[h_i, h_{i+1})``."""

    boundaries: tuple[float, ...]

    def __post_init__(self):
        b = tuple(float(x) for x in self.boundaries)
        if len(b) < 2:
            raise ConfigError("a delay grid needs at least two boundaries")
        if not all(math.isfinite(x) for x in b):
            raise ConfigError("delay boundaries must be finite")
        if b[0] < 0:
            raise ConfigError("delay boundaries must be non-negative")
        if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise ConfigError(f"delay boundaries must be strictly increasing: {b}")
        object.__setattr__(self, "boundaries", b)

    @classmethod
    def from_values(cls, values: Sequence[float], unit: str = "s") -> "DelayGrid":
        if unit not in _UNITS:
            raise ConfigError(f"unknown time unit {unit!r} (use 's' or 'ms')")
        return cls(tuple(float(v) * _UNITS[unit] for v in values))

    @property
    def M(self) -> int:
        return len(self.boundaries) - 1

    @property
    def h(self) -> tuple[float, ...]:
        return self.boundaries

    def lower(self, i: int) -> float:
        """``h_i`` for 1-based mode ``i``."""
        return self.boundaries[i - 1]

    def upper(self, i: int) -> float:
        return self.boundaries[i]

    def delta(self, i: int) -> float:
        """``delta_i = h_{i+1} - h_i`` (1-based)."""
        return self.boundaries[i] - self.boundaries[i - 1]

    @property
    def deltas(self) -> tuple[float, ...]:
        return tuple(self.delta(i) for i in range(1, self.M + 1))

    def mode_of(self, tau: float) -> int:
        """1-based mode whose half-open interval contains ``tau``."""
        b = self.boundaries
        if not (b[0] <= tau < b[-1]):
            raise ValueError(f"delay {tau} outside [{b[0]}, {b[-1]})")
        return bisect.bisect_right(b, tau)

    def to_dict(self, unit: str = "ms") -> dict:
        s = _UNITS[unit]
        return {"boundaries": [x / s for x in self.boundaries], "unit": unit}


@dataclass(frozen=True)
class Plant:
    """``x' = A x + B u``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        try:
            A = as_matrix(self.A, "A")
            B = np.array(self.B, dtype=float)
            if B.ndim == 1:
                B = B.reshape(-1, 1)  # a flat B is a single input column
            B = as_matrix(B, "B")
        except MatrixError as exc:
            raise ConfigError(str(exc)) from exc
        if A.shape[0] != A.shape[1]:
            raise ConfigError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ConfigError(f"B has {B.shape[0]} rows but A is {A.shape[0]}x{A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class SwitchedDelaySystem:
    """``x' = A x + A_sigma x(t - tau_sigma(t))`` with one delayed matrix per mode."""

    A: np.ndarray
    delayed: tuple[np.ndarray, ...]
    grid: DelayGrid

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        if A.shape[0] != A.shape[1]:
            raise ConfigError("A must be square")
        mats = tuple(as_matrix(a, f"A_{i + 1}") for i, a in enumerate(self.delayed))
        if len(mats) != self.grid.M:
            raise ConfigError(f"{len(mats)} delayed matrices for a {self.grid.M}-mode grid")
        for i, a in enumerate(mats):
            if a.shape != A.shape:
                raise ConfigError(f"A_{i + 1} has shape {a.shape}, expected {A.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "delayed", mats)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def M(self) -> int:
        return self.grid.M


def validate_rate_matrix(Pi, M: int | None = None) -> np.ndarray:
    """Return a rate matrix with its diagonal reset to minus the off-diagonal row sums."""
    try:
        P = as_matrix(Pi, "Pi")
    except MatrixError as exc:
        raise ConfigError(str(exc)) from exc
    if P.shape[0] != P.shape[1]:
        raise ConfigError("Pi must be square")
    if M is not None and P.shape[0] != M:
        raise ConfigError(f"Pi is {P.shape[0]}x{P.shape[0]} for a {M}-mode grid")
    off = P - np.diag(np.diag(P))
    if np.any(off < 0):
        raise ConfigError("off-diagonal transition rates must be non-negative")
    rows = off.sum(axis=1)
    scale = max(1.0, float(np.abs(P).max()))
    if np.any(np.abs(np.diag(P) + rows) > 1e-9 * scale):
        raise ConfigError("rows of Pi must sum to zero")
    out = off.copy()
    out[np.diag_indices_from(out)] = -rows
    return out


@dataclass(frozen=True)
class MjlsDelaySystem:
    """Switched delay system whose mode is a continuous-time Markov chain."""

    base: SwitchedDelaySystem
    Pi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Pi", validate_rate_matrix(self.Pi, self.base.M))

    @property
    def grid(self) -> DelayGrid:
        return self.base.grid

    @property
    def M(self) -> int:
        return self.base.M

    @property
    def n(self) -> int:
        return self.base.n


def two_mode_rates(p: float, q: float) -> np.ndarray:
    """``[[-p, p], [q, -q]]``."""
    return validate_rate_matrix([[-p, p], [q, -q]])


@dataclass(frozen=True)
class Gains:
    """Per-mode feedback matrices ``K_i`` (``m x n``) with recovery diagnostics."""

    K: tuple[np.ndarray, ...]
    recovery_cond: tuple[float, ...] = ()

    def __post_init__(self):
        mats = []
        for i, k in enumerate(self.K):
            arr = np.array(k, dtype=float)
            if arr.ndim == 1:
                arr = arr.reshape(1, -1)
            try:
                mats.append(as_matrix(arr, f"K_{i + 1}"))
            except MatrixError as exc:
                raise ConfigError(str(exc)) from exc
        if not mats:
            raise ConfigError("at least one gain is required")
        if any(k.shape != mats[0].shape for k in mats):
            raise ConfigError("all gains must share one shape")
        object.__setattr__(self, "K", tuple(mats))
        object.__setattr__(self, "recovery_cond", tuple(float(c) for c in self.recovery_cond))

    def __len__(self):
        return len(self.K)

    def to_list(self) -> list:
        return [k.tolist() for k in self.K]


def closed_loop(plant: Plant, gains: Gains, grid: DelayGrid) -> SwitchedDelaySystem:
    """``A_i = B K_i``; a single gain is shared by every mode."""
    K = gains.K
    if len(K) == 1 and grid.M > 1:
        K = K * grid.M
    if len(K) != grid.M:
        raise ConfigError(f"{len(K)} gains for a {grid.M}-mode grid")
    for i, k in enumerate(K):
        if k.shape != (plant.m, plant.n):
            raise ConfigError(f"K_{i + 1} has shape {k.shape}, expected {(plant.m, plant.n)}")
    return SwitchedDelaySystem(plant.A.copy(), tuple(plant.B @ k for k in K), grid)


@dataclass(frozen=True)
class ShiftedMatrices:
    """``A_alpha = alpha I + A`` and vertex matrices ``rho_ij A_i``."""

    alpha: float
    A_alpha: np.ndarray
    rho: tuple[tuple[float, float], ...]
    vertices: tuple[tuple[np.ndarray, np.ndarray], ...]


def vertex_weights(grid: DelayGrid, alpha: float) -> tuple[tuple[float, float], ...]:
    """``rho_ij = exp(alpha h_{i+j-1})`` for ``j = 1, 2``."""
    return tuple(
        (math.exp(alpha * grid.lower(i)), math.exp(alpha * grid.upper(i)))
        for i in range(1, grid.M + 1)
    )


def shifted_matrices(sys: SwitchedDelaySystem, alpha: float) -> ShiftedMatrices:
    if not alpha >= 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    rho = vertex_weights(sys.grid, alpha)
    verts = tuple((r1 * a, r2 * a) for (r1, r2), a in zip(rho, sys.delayed))
    return ShiftedMatrices(float(alpha), alpha * np.eye(sys.n) + sys.A, rho, verts)


def invariant_distribution(Pi) -> np.ndarray:
    """Stationary distribution of an irreducible rate matrix."""
    from scipy.sparse.csgraph import connected_components

    P = validate_rate_matrix(Pi)
    M = P.shape[0]
    if M > 1:
        adj = (P - np.diag(np.diag(P))) > 0
        ncomp, _ = connected_components(adj.astype(float), directed=True, connection="strong")
        if ncomp != 1:
            raise ConfigError("rate matrix is reducible; the invariant distribution is not unique")
    lhs = np.vstack([P.T, np.ones((1, M))])
    rhs = np.zeros(M + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


# --------------------------------------------------------------------------
# configuration files

_MATRIX = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_VECTOR_OR_MATRIX = {"oneOf": [_MATRIX, {"type": "array", "minItems": 1, "items": {"type": "number"}}]}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["plant", "grid"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "plant": {
            "type": "object",
            "required": ["A", "B"],
            "properties": {"A": _MATRIX, "B": _VECTOR_OR_MATRIX},
        },
        "grid": {
            "type": "object",
            "required": ["boundaries"],
            "properties": {
                "boundaries": {"type": "array", "minItems": 2, "items": {"type": "number"}},
                "unit": {"enum": ["s", "ms"]},
            },
        },
        "gains": {"type": "array", "minItems": 1, "items": _VECTOR_OR_MATRIX},
        "markov": {
            "type": "object",
            "required": ["Pi"],
            "properties": {"Pi": _MATRIX},
        },
    },
}


@dataclass(frozen=True)
class SystemConfig:
    plant: Plant
    grid: DelayGrid
    gains: Gains | None = None
    Pi: np.ndarray | None = None
    name: str = ""
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)

    def switched(self) -> SwitchedDelaySystem:
        if self.gains is None:
            raise ConfigError("configuration has no gains")
        return closed_loop(self.plant, self.gains, self.grid)

    def mjls(self) -> MjlsDelaySystem:
        if self.Pi is None:
            raise ConfigError("configuration has no markov.Pi")
        return MjlsDelaySystem(self.switched(), self.Pi)

    def with_gains(self, gains: Gains) -> "SystemConfig":
        raw = dict(self.raw)
        raw["gains"] = gains.to_list()
        return SystemConfig(self.plant, self.grid, gains, self.Pi, self.name, raw)


def config_hash(raw: Mapping) -> str:
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def parse_config(raw: Mapping) -> SystemConfig:
    """Validate a configuration mapping and build the model objects."""
    import jsonschema

    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            msgs.append(f"{where}: {e.message}")
        raise ConfigError("invalid configuration: " + "; ".join(msgs))
    plant = Plant(raw["plant"]["A"], raw["plant"]["B"])
    g = raw["grid"]
    grid = DelayGrid.from_values(g["boundaries"], g.get("unit", "s"))
    gains = None
    if "gains" in raw:
        gains = Gains(tuple(raw["gains"]))
        k0 = gains.K[0]
        if k0.shape != (plant.m, plant.n):
            raise ConfigError(f"gains/0: shape {k0.shape}, expected {(plant.m, plant.n)}")
        if len(gains) not in (1, grid.M):
            raise ConfigError(f"gains: {len(gains)} entries for a {grid.M}-mode grid")
    Pi = None
    if "markov" in raw:
        Pi = validate_rate_matrix(raw["markov"]["Pi"], grid.M)
    return SystemConfig(plant, grid, gains, Pi, str(raw.get("name", "")), dict(raw))


def load_config(path) -> SystemConfig:
    """Read a JSON configuration file; syntax errors report line and column."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(raw)


def bundled_config_path(name: str) -> Path:
    """Path of a configuration shipped in ``ncslmi/data``."""
    here = Path(__file__).parent / "data"
    p = here / (name if name.endswith(".json") else name + ".json")
    if not p.exists():
        raise FileNotFoundError(f"no bundled configuration {name!r}")
    return p
