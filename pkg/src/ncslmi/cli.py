"""Command line front end.

Subcommands ``analyze``, ``synthesize``, ``bisect`` and ``simulate`` act on a
system configuration (JSON); ``--mjls`` selects the Markov-modulated path.
``table`` reruns the bundled DC motor sweeps.  Exit codes: 0 feasible or
success, 1 usage or configuration error, 2 infeasible, 3 inconclusive.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bisection import NoCertifiedRate
from .mjls import analyze_mjls, max_decay_rate_mjls, max_decay_rate_mjls_synthesis, synthesize_mjls
from .model import (ConfigError, DelayGrid, Gains, MjlsDelaySystem, SystemConfig, bundled_config_path,
                    invariant_distribution, load_config, two_mode_rates)
from .sdp import FEASIBLE, INCONCLUSIVE, INFEASIBLE, SolverOptions
from .sim import (SimulationError, estimate_decay, gen_adt_trace, gen_markov_trace, simulate, verify_adt,
                  DelayTrace, WAVEFORMS)
from .switched import analyze, dwell_time_bound, max_decay_rate, max_decay_rate_synthesis, synthesize

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_INCONCLUSIVE = 3

_EXIT = {FEASIBLE: EXIT_OK, INFEASIBLE: EXIT_INFEASIBLE, INCONCLUSIVE: EXIT_INCONCLUSIVE}

REPORT_SECTIONS = ("JOB", "SYSTEM", "PARAMETERS", "RESULT", "DIAGNOSTICS")

# DC motor sweeps: (alpha, grid in ms, non-switching h_max in ms)
TABLE1_ROWS = (
    (3.00, (20, 100, 200, 300), 158),
    (2.42, (20, 100, 250, 300), 204),
    (2.78, (20, 70, 200, 300), 173),
    (2.27, (20, 70, 250, 300), 219),
)
# (p, q, alpha) on the two-mode grid (20, 70, 300) ms
TABLE2_ROWS = (
    (3.5, 0.5, 1.07), (3.5, 2.0, 1.08), (3.5, 3.5, 1.09), (2.0, 3.5, 1.10), (0.5, 3.5, 1.10),
    (2.5, 0.5, 1.23), (2.5, 1.5, 1.25), (2.5, 2.5, 1.25), (1.5, 2.5, 1.25), (0.5, 2.5, 1.26),
    (1.5, 0.5, 1.43), (0.5, 1.5, 1.46), (1.5, 1.5, 1.45),
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# output helpers

def fmt(x) -> str:
    """Numbers with 12 significant digits; everything else via ``str``."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".12g")
    if isinstance(x, (list, tuple, np.ndarray)):
        return "[" + ", ".join(fmt(v) for v in np.asarray(x, dtype=object).tolist()) + "]"
    return str(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2) + "\n")


def write_report(path: Path, sections: dict) -> None:
    """Plain-text report; sections appear in :data:`REPORT_SECTIONS` order."""
    lines = [f"ncslmi {__version__} report", ""]
    for name in REPORT_SECTIONS:
        lines.append(f"[{name}]")
        for k, v in sections.get(name, {}).items():
            lines.append(f"{k} = {fmt(v)}")
        lines.append("")
    path.write_text("\n".join(lines))


def read_report(path) -> dict:
    """Parse a report back into ``{section: {key: value-string}}``."""
    out: dict = {}
    cur = None
    for line in Path(path).read_text().splitlines():
        if line.startswith("[") and line.endswith("]"):
            cur = out.setdefault(line[1:-1], {})
        elif cur is not None and " = " in line:
            k, v = line.split(" = ", 1)
            cur[k] = v
    return out


# --------------------------------------------------------------------------
# shared plumbing

def _load(args) -> SystemConfig:
    cfg = load_config(args.config)
    if getattr(args, "gains", None):
        cfg = cfg.with_gains(_read_gains(args.gains))
    return cfg


def _read_gains(path) -> Gains:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if isinstance(data, dict):
        if "gains" not in data:
            raise ConfigError(f"{path}: no 'gains' field")
        data = data["gains"]
    return Gains(tuple(data))


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _options(args) -> SolverOptions:
    opts = SolverOptions()
    if getattr(args, "time_limit", None):
        opts.time_limit = args.time_limit
    return opts


def _mu(args, cfg: SystemConfig) -> float:
    if not args.mu > 1:
        raise UsageError("--mu must exceed 1")
    return args.mu


def _pi(args, cfg: SystemConfig):
    if cfg.Pi is None:
        raise ConfigError("markov.Pi: required with --mjls")
    return cfg.Pi


def _job_section(args, cfg: SystemConfig, command: str, seed=None) -> dict:
    return {
        "command": command,
        "config": str(args.config),
        "config_hash": cfg.config_hash,
        "seed": "none" if seed is None else seed,
        "solver_tol": SolverOptions().tol,
        "mjls": bool(getattr(args, "mjls", False)),
    }


def _system_section(cfg: SystemConfig) -> dict:
    out = {
        "name": cfg.name or "<unnamed>",
        "n": cfg.plant.n,
        "m": cfg.plant.m,
        "modes": cfg.grid.M,
        "boundaries_s": list(cfg.grid.h),
    }
    if cfg.gains is not None:
        for i, k in enumerate(cfg.gains.K, 1):
            out[f"K_{i}"] = k.ravel()
    if cfg.Pi is not None:
        out["Pi"] = cfg.Pi.ravel()
    return out


def _failure(res) -> dict:
    if res is None:
        return {}
    d = {"solver_status": res.solver_status, "t": res.t, "iterations": res.iterations, "elapsed_s": res.elapsed}
    if res.report is not None:
        d["worst_margin"] = res.report.worst_margin
        d["worst_label"] = res.report.worst_label
        d["failed"] = [m.label for m in res.report.failed()]
    return d


# --------------------------------------------------------------------------
# subcommands

def cmd_analyze(args) -> int:
    cfg = _load(args)
    if cfg.gains is None:
        raise ConfigError("gains: required for analysis")
    out = _outdir(args)
    opts = _options(args)
    t0 = time.perf_counter()
    if args.mjls:
        sysm = MjlsDelaySystem(cfg.switched(), _pi(args, cfg))
        res = analyze_mjls(sysm, args.alpha, opts, eta_gain=args.eta_gain)
        params = {"alpha": args.alpha, "eta_gain": args.eta_gain}
    else:
        mu = _mu(args, cfg)
        res = analyze(cfg.switched(), args.alpha, mu, opts)
        params = {"alpha": args.alpha, "mu": mu, "tau_a": dwell_time_bound(mu, args.alpha)}
    elapsed = time.perf_counter() - t0
    result = {"status": res.status, "message": res.message or "-", "elapsed_s": elapsed}
    if res.feasible:
        cert = res.certificate.to_dict()
        cert.update(status=FEASIBLE, config_hash=cfg.config_hash)
        write_json(out / "certificate.json", cert)
        if not args.mjls:
            result["tau_a"] = cert["tau_a"]
        result["worst_margin"] = res.result.report.worst_margin
        diag = {"margin_" + k: v for k, v in cert["margins"].items()}
    else:
        diag = _failure(res.result)
        write_json(out / "infeasibility.json", {"status": res.status, "message": res.message,
                                                "config_hash": cfg.config_hash, **params, **diag})
    write_report(out / "report.txt", {"JOB": _job_section(args, cfg, "analyze"), "SYSTEM": _system_section(cfg),
                                      "PARAMETERS": params, "RESULT": result, "DIAGNOSTICS": diag})
    print(f"analyze: {res.status} at alpha={fmt(args.alpha)}" + (f" ({res.message})" if res.message else ""))
    return _EXIT[res.status]


def cmd_synthesize(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    opts = _options(args)
    t0 = time.perf_counter()
    if args.mjls:
        res = synthesize_mjls(cfg.plant, cfg.grid, _pi(args, cfg), args.alpha, opts, eta_gain=args.eta_gain)
        params = {"alpha": args.alpha, "eta_gain": args.eta_gain}
    else:
        mu = _mu(args, cfg)
        res = synthesize(cfg.plant, cfg.grid, args.alpha, mu, opts)
        params = {"alpha": args.alpha, "mu": mu, "tau_a": dwell_time_bound(mu, args.alpha)}
    elapsed = time.perf_counter() - t0
    result = {"status": res.status, "message": res.message or "-", "elapsed_s": elapsed}
    cert = res.certificate
    if cert is not None and getattr(cert, "gains", None) is not None:
        re = cert.reanalysis
        data = {
            "status": res.status,
            "config_hash": cfg.config_hash,
            **params,
            "gains": cert.gains.to_list(),
            "recovery_cond": list(cert.gains.recovery_cond),
            "synthesis_margins": cert.margins,
            "reanalysis": {
                "status": re.status if re else "skipped",
                "margins": re.certificate.margins if re and re.certificate else {},
            },
        }
        write_json(out / "gains.json", data)
        write_json(out / "closed_loop.json", cfg.with_gains(cert.gains).raw)
        for i, k in enumerate(cert.gains.K, 1):
            result[f"K_{i}"] = k.ravel()
        result["recovery_cond"] = list(cert.gains.recovery_cond)
        result["reanalysis"] = data["reanalysis"]["status"]
        diag = {"synthesis_worst_margin": res.result.report.worst_margin}
        if re is not None and re.result is not None and re.result.report is not None:
            diag["reanalysis_worst_margin"] = re.result.report.worst_margin
    else:
        diag = _failure(res.result)
        write_json(out / "infeasibility.json", {"status": res.status, "message": res.message,
                                                "config_hash": cfg.config_hash, **params, **diag})
    write_report(out / "report.txt", {"JOB": _job_section(args, cfg, "synthesize"), "SYSTEM": _system_section(cfg),
                                      "PARAMETERS": params, "RESULT": result, "DIAGNOSTICS": diag})
    print(f"synthesize: {res.status} at alpha={fmt(args.alpha)}" + (f" ({res.message})" if res.message else ""))
    return _EXIT[res.status]


def cmd_bisect(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    opts = _options(args)
    lo, hi, tol = args.alpha_lo, args.alpha_hi, args.tol
    if not 0 < lo < hi:
        raise UsageError("need 0 < --alpha-lo < --alpha-hi")
    params = {"alpha_lo": lo, "alpha_hi": hi, "tol": tol, "synthesis": args.synthesis}
    mu = None
    try:
        if args.mjls:
            Pi = _pi(args, cfg)
            params["eta_gain"] = args.eta_gain
            if args.synthesis:
                br = max_decay_rate_mjls_synthesis(cfg.plant, cfg.grid, Pi, lo, hi, tol, opts, eta_gain=args.eta_gain)
            else:
                if cfg.gains is None:
                    raise ConfigError("gains: required unless --synthesis is given")
                br = max_decay_rate_mjls(MjlsDelaySystem(cfg.switched(), Pi), lo, hi, tol, opts,
                                         eta_gain=args.eta_gain)
        else:
            mu = _mu(args, cfg)
            params["mu"] = mu
            if args.synthesis:
                br = max_decay_rate_synthesis(cfg.plant, cfg.grid, mu, lo, hi, tol, opts)
            else:
                if cfg.gains is None:
                    raise ConfigError("gains: required unless --synthesis is given")
                br = max_decay_rate(cfg.switched(), mu, lo, hi, tol, opts)
    except NoCertifiedRate as exc:
        write_json(out / "bisect.json", {"status": INFEASIBLE, "message": str(exc),
                                         "config_hash": cfg.config_hash, **params})
        write_report(out / "report.txt", {"JOB": _job_section(args, cfg, "bisect"), "SYSTEM": _system_section(cfg),
                                          "PARAMETERS": params, "RESULT": {"status": INFEASIBLE, "message": str(exc)}})
        print(f"bisect: {exc}")
        return EXIT_INFEASIBLE
    tau = dwell_time_bound(mu, br.alpha_star) if mu is not None else None
    data = {
        "status": FEASIBLE,
        "config_hash": cfg.config_hash,
        **params,
        "alpha_star": br.alpha_star,
        "tau_a_star": tau,
        "hi_feasible": br.hi_feasible,
        "iterations": br.iterations,
        "flagged": br.flagged,
        "inconclusive_probes": br.inconclusive_probes,
        "probes": [{"alpha": p.alpha, "status": p.status} for p in br.probes],
    }
    gains = getattr(br.payload, "gains", None)
    if gains is not None:
        data["gains"] = gains.to_list()
    write_json(out / "bisect.json", data)
    result = {"status": FEASIBLE, "alpha_star": br.alpha_star, "tau_a_star": "n/a" if tau is None else tau,
              "hi_feasible": br.hi_feasible, "flagged": br.flagged}
    diag = {"iterations": br.iterations, "probes": [p.alpha for p in br.probes],
            "statuses": [p.status for p in br.probes]}
    write_report(out / "report.txt", {"JOB": _job_section(args, cfg, "bisect"), "SYSTEM": _system_section(cfg),
                                      "PARAMETERS": params, "RESULT": result, "DIAGNOSTICS": diag})
    msg = f"bisect: alpha*={fmt(br.alpha_star)}"
    if tau is not None:
        msg += f" tau_a*={fmt(tau)}"
    print(msg + (" (flagged: inconclusive probes)" if br.flagged else ""))
    return EXIT_OK


def _parse_x0(text, n):
    if text is None:
        return np.ones(n)
    try:
        x0 = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError(f"--x0: not a comma-separated list of numbers: {text!r}") from None
    if x0.shape != (n,):
        raise UsageError(f"--x0 has {x0.size} entries, the plant has {n} states")
    return x0


def cmd_simulate(args) -> int:
    cfg = _load(args)
    if cfg.gains is None:
        raise ConfigError("gains: required for simulation (use --gains FILE)")
    out = _outdir(args)
    grid = cfg.grid
    kind = args.trace or ("markov" if args.mjls else "adt")
    params = {"trace": kind, "horizon": args.horizon, "waveform": args.waveform, "step": args.step}
    if kind == "markov":
        trace = gen_markov_trace(grid, _pi(args, cfg), args.horizon, args.seed, args.waveform)
    elif kind == "adt":
        tau_a = args.tau_a
        if tau_a is None:
            if grid.M > 1:
                raise UsageError("--tau-a is required for an ADT trace")
            tau_a = math.inf
        trace = gen_adt_trace(grid, tau_a, args.N0, args.horizon, args.seed, args.waveform)
        params.update(tau_a=tau_a, N0=args.N0)
    else:
        if args.delay is None:
            raise UsageError("--delay is required for a constant trace")
        trace = DelayTrace.constant(args.delay, args.horizon, grid.mode_of(args.delay))
        params["delay"] = args.delay
    trace.check(grid)
    sim_h = args.horizon if args.sim_horizon is None else min(args.sim_horizon, args.horizon)
    params["sim_horizon"] = sim_h
    x0 = _parse_x0(args.x0, cfg.plant.n)
    traj = simulate(cfg.switched(), trace, x0=x0, step=args.step, horizon=sim_h)
    traj.to_csv(out / "trajectory.csv")
    trace.to_json(out / "trace.json", knot_horizon=sim_h)
    occ = trace.occupancy(grid.M)
    try:
        alpha_hat = estimate_decay(traj)
    except SimulationError as exc:
        alpha_hat = float("nan")
        params["estimate_note"] = str(exc)
    summary = {
        "config_hash": cfg.config_hash,
        "seed": args.seed,
        **params,
        "alpha_hat": alpha_hat,
        "diverged": traj.diverged,
        "final_norm": float(traj.norms[-1]),
        "switches": int(len(trace.switch_times)),
        "occupancy": occ.tolist(),
    }
    if cfg.Pi is not None:
        summary["invariant_distribution"] = invariant_distribution(cfg.Pi).tolist()
    if kind == "adt":
        rep = verify_adt(trace, params["tau_a"], args.N0)
        summary["adt_ok"] = rep.ok
        summary["adt_worst_slack"] = rep.worst_slack
    write_json(out / "summary.json", summary)
    result = {k: summary[k] for k in ("alpha_hat", "diverged", "final_norm", "switches", "occupancy")}
    diag = {k: v for k, v in summary.items() if k in ("invariant_distribution", "adt_ok", "adt_worst_slack")}
    diag["samples"] = len(traj.t)
    write_report(out / "report.txt", {"JOB": _job_section(args, cfg, "simulate", args.seed),
                                      "SYSTEM": _system_section(cfg), "PARAMETERS": params,
                                      "RESULT": result, "DIAGNOSTICS": diag})
    flag = " diverged" if traj.diverged else ""
    print(f"simulate: alpha_hat={fmt(alpha_hat)}{flag} occupancy={fmt(occ)}")
    return EXIT_OK


# --------------------------------------------------------------------------
# batch sweeps

def _dc_plant():
    return load_config(bundled_config_path("dc_motor")).plant


def _table1_row(row, mu=1.4, tol=1e-3):
    alpha, hs, hmax = row
    plant = _dc_plant()
    grid = DelayGrid.from_values(hs, "ms")
    at_row = synthesize(plant, grid, alpha, mu)
    best = max_decay_rate_synthesis(plant, grid, mu, 0.1, 6.0, tol)
    nonsw = max_decay_rate_synthesis(plant, DelayGrid.from_values((hs[0], hmax), "ms"), mu, 0.1, 8.0, tol)
    return {"alpha": alpha, "grid_ms": list(hs), "h_max_ms": hmax, "status_at_alpha": at_row.status,
            "alpha_star": best.alpha_star, "alpha_star_nonswitching": nonsw.alpha_star}


def _table2_row(row, eta_gain=1.0, tol=5e-3):
    p, q, alpha = row
    plant = _dc_plant()
    grid = DelayGrid.from_values((20, 70, 300), "ms")
    Pi = two_mode_rates(p, q)
    br = max_decay_rate_mjls_synthesis(plant, grid, Pi, 0.1, 4.0, tol, eta_gain=eta_gain)
    return {"p": p, "q": q, "alpha": alpha, "alpha_star": br.alpha_star,
            "ratio": br.alpha_star / alpha, "pi_inf": invariant_distribution(Pi).tolist(),
            "gains": br.payload.gains.to_list() if br.payload is not None else None}


def run_table(which: int, jobs: int = 1, eta_gain: float = 1.0) -> list[dict]:
    """Rows of the DC motor sweep ``which`` (1: switching ADT, 2: Markov)."""
    if which == 1:
        fn, rows, extra = _table1_row, TABLE1_ROWS, ()
    elif which == 2:
        fn, rows, extra = _table2_row, TABLE2_ROWS, (eta_gain,)
    else:
        raise UsageError("table must be 1 or 2")
    if jobs <= 1:
        return [fn(r, *extra) for r in rows]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        futs = [ex.submit(fn, r, *extra) for r in rows]
        return [f.result() for f in futs]


def cmd_table(args) -> int:
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    out = _outdir(args)
    t0 = time.perf_counter()
    rows = run_table(args.which, args.jobs, args.eta_gain)
    write_json(out / f"table{args.which}.json", rows)
    result = {}
    for i, r in enumerate(rows, 1):
        result[f"row_{i}"] = [v for k, v in r.items() if k not in ("gains", "grid_ms", "pi_inf")]
    job = {"command": f"table {args.which}", "config": "bundled dc_motor", "config_hash": "-", "seed": "none",
           "solver_tol": SolverOptions().tol, "jobs": args.jobs}
    cols = list(k for k in rows[0] if k not in ("gains", "grid_ms", "pi_inf"))
    write_report(out / "report.txt", {"JOB": job, "PARAMETERS": {"eta_gain": args.eta_gain, "columns": cols},
                                      "RESULT": result,
                                      "DIAGNOSTICS": {"elapsed_s": time.perf_counter() - t0}})
    for r in rows:
        print("  ".join(f"{k}={fmt(v)}" for k, v in r.items() if k not in ("gains", "pi_inf")))
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ncslmi", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ncslmi {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, alpha_required=True):
        sp.add_argument("config", help="system configuration (JSON)")
        sp.add_argument("--mjls", action="store_true", help="Markov-modulated delays (needs markov.Pi)")
        sp.add_argument("--mu", type=float, default=1.4,
                        help="Lyapunov jump bound, deterministic path (default 1.4; irrelevant for one mode)")
        sp.add_argument("--eta-gain", type=float, default=1.0, help="scale on the rate-coupling constants (>= 1)")
        sp.add_argument("--gains", help="JSON file with gains overriding the configuration")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--time-limit", type=float, help="per-solve time limit in seconds")
        if alpha_required:
            sp.add_argument("--alpha", type=float, required=True, help="target decay rate")

    common(sub.add_parser("analyze", help="certify given gains at a decay rate"))
    common(sub.add_parser("synthesize", help="design gains for a decay rate"))
    b = sub.add_parser("bisect", help="largest certified decay rate")
    common(b, alpha_required=False)
    b.add_argument("--alpha-lo", type=float, default=1e-2)
    b.add_argument("--alpha-hi", type=float, default=10.0)
    b.add_argument("--tol", type=float, default=1e-3)
    b.add_argument("--synthesis", action="store_true", help="bisect the synthesis problem instead")

    s = sub.add_parser("simulate", help="integrate the closed loop along a random delay trace")
    common(s, alpha_required=False)
    s.add_argument("--trace", choices=("adt", "markov", "constant"))
    s.add_argument("--tau-a", type=float, help="average dwell time of the ADT trace (s)")
    s.add_argument("--N0", type=float, default=1.0, help="chatter bound of the ADT trace")
    s.add_argument("--delay", type=float, help="delay of a constant trace (s)")
    s.add_argument("--waveform", choices=WAVEFORMS, default="random_walk")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--horizon", type=float, default=4.0, help="trace horizon (s)")
    s.add_argument("--sim-horizon", type=float, help="integration horizon (s), at most the trace horizon")
    s.add_argument("--step", type=float, default=1e-3)
    s.add_argument("--x0", help="initial state, comma separated (default all ones)")

    t = sub.add_parser("table", help="rerun a bundled DC motor sweep")
    t.add_argument("which", type=int, choices=(1, 2))
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--eta-gain", type=float, default=1.0)
    t.add_argument("--out", default=".")
    return p


_COMMANDS = {"analyze": cmd_analyze, "synthesize": cmd_synthesize, "bisect": cmd_bisect,
             "simulate": cmd_simulate, "table": cmd_table}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "eta_gain", 1.0) < 1:
            raise UsageError("--eta-gain must be at least 1")
        return _COMMANDS[args.command](args)
    except (ConfigError, UsageError, SimulationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
