"""Command-line front end.

Subcommands: ``simulate``, ``solve``, ``scan {delta|extremists}``, ``chaos``,
``bounds``, ``report``.  Every run writes its outputs plus a ``manifest.json``
holding the fully resolved configuration, the seed, the package version and
wall time; re-running with the same manifest reproduces the CSV outputs
bit-for-bit.  Exit codes: 0 success, 2 configuration error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .agents import ModelParams, initial_state, run_until_frozen
from .analysis import (
    bound_oracle,
    chaoticity_check,
    classify,
    scan_delta,
    scan_extremists,
)
from .kinetic import NegativityError, NonFiniteError, SolverConfig, solve
from .measures import (
    EmpiricalMeasure,
    PiecewiseConstantDensity,
    beta_density,
    blocks_density,
    density_to_json,
    extremists_density,
    sample_from_density,
    uniform_density,
)


class ConfigError(Exception):
    pass


def parse_init(spec: str, cell_count: int) -> PiecewiseConstantDensity:
    """Initial-condition spec: uniform | beta(a,b) | blocks([...]) | csv(path)
    | extremists(alpha)."""
    spec = spec.strip()
    if spec == "uniform":
        return uniform_density(cell_count)
    m = re.fullmatch(r"beta\(([^,]+),([^)]+)\)", spec)
    if m:
        return beta_density(float(m.group(1)), float(m.group(2)), cell_count)
    m = re.fullmatch(r"extremists\(([^)]+)\)", spec)
    if m:
        return extremists_density(float(m.group(1)), cell_count)
    m = re.fullmatch(r"blocks\((.+)\)", spec, flags=re.DOTALL)
    if m:
        try:
            blocks = json.loads(m.group(1))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--init blocks(...): invalid JSON: {exc}") from exc
        return blocks_density(blocks, cell_count)
    m = re.fullmatch(r"csv\((.+)\)", spec)
    if m:
        path = m.group(1)
        if not os.path.exists(path):
            raise ConfigError(f"--init csv({path}): file does not exist")
        return PiecewiseConstantDensity.from_csv(path)
    raise ConfigError(f"--init: unrecognized spec {spec!r}")


def parse_grid(spec: str) -> list:
    """start:stop:step range (inclusive start, stop included within rounding)
    or a comma-separated list."""
    spec = str(spec).strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid {spec!r}: expected start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ConfigError(f"grid {spec!r}: need step > 0 and stop >= start")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        vals = [start + k * step for k in range(n)]
    else:
        vals = [float(p) for p in spec.split(",") if p.strip()]
    # round to 12 significant digits so emitted grids are stable
    return [float(np.format_float_positional(v, precision=12, unique=False, fractional=False))
            for v in vals]


def _utcnow() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class Manifest:
    def __init__(self, command: str, config: dict, out_dir: str):
        self.data = {
            "command": command,
            "config": config,
            "seed": config.get("seed"),
            "version": __version__,
            "created_utc": _utcnow(),
            "wall_time_s": None,
            "outputs": [],
        }
        self.out_dir = out_dir
        self._t0 = time.perf_counter()

    def path_for(self, name: str) -> str:
        self.data["outputs"].append(name)
        return os.path.join(self.out_dir, name)

    def write(self) -> None:
        self.data["wall_time_s"] = round(time.perf_counter() - self._t0, 3)
        path = os.path.join(self.out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _load_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"--config {path}: file does not exist")
    with open(path) as fh:
        data = json.load(fh)
    # a manifest is accepted in place of a bare config
    if "config" in data and "version" in data:
        return dict(data["config"])
    return dict(data)


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults <- config file <- explicitly passed flags."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        cfg.update(_load_config_file(args.config))
    for key, val in vars(args).items():
        if key in ("config", "func") or val is None:
            continue
        cfg[key] = val
    return cfg


def _prepare_out(cfg: dict) -> str:
    out = cfg.get("out") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _resolve(args, {
        "n": 100, "delta": 0.5, "w": 0.5, "seed": 0, "max_steps": 1_000_000,
        "freeze_window": 1000, "freeze_tol": 1e-9, "init": "uniform",
        "grid": 200, "poisson": False, "out": ".", "format": "csv",
    })
    out = _prepare_out(cfg)
    man = Manifest("simulate", cfg, out)
    params = ModelParams(delta=cfg["delta"], w=cfg["w"])
    rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"]))
    density = parse_init(cfg["init"], cfg["grid"])
    opinions = sample_from_density(density, cfg["n"], rng)
    state = initial_state(opinions, seed=cfg["seed"])
    final, record, report = run_until_frozen(
        state, params, max_steps=cfg["max_steps"],
        freeze_window=cfg["freeze_window"], freeze_tol=cfg["freeze_tol"],
        poisson=cfg["poisson"])
    if cfg["format"] == "json":
        _write_json(man.path_for("results.json"), {
            "trajectory": [r for r in record.rows()],
            "opinions": [float(v) for v in final.opinions],
            "report": report.to_json(),
        })
    else:
        record.to_csv(man.path_for("trajectory.csv"))
        EmpiricalMeasure(final.opinions).to_csv(man.path_for("opinions.csv"), header="opinion")
        _write_json(man.path_for("report.json"), report.to_json())
    man.write()
    return 0


def _solver_config(cfg: dict, params: ModelParams) -> SolverConfig:
    snaps = cfg.get("snapshots", ())
    if isinstance(snaps, str):
        snaps = tuple(float(s) for s in snaps.split(",") if s.strip())
    return SolverConfig(params=params, cell_count=cfg["grid"], dt=cfg["dt"],
                        horizon=cfg["horizon"], negativity_policy=cfg["negativity"],
                        snapshot_times=tuple(snaps))


def cmd_solve(args) -> int:
    cfg = _resolve(args, {
        "init": "uniform", "delta": 0.4, "w": 0.5, "grid": 200, "dt": 0.1,
        "horizon": 100.0, "snapshots": "", "negativity": "reject",
        "out": ".", "format": "csv", "seed": 0,
    })
    out = _prepare_out(cfg)
    man = Manifest("solve", cfg, out)
    params = ModelParams(delta=cfg["delta"], w=cfg["w"])
    solver_cfg = _solver_config(cfg, params)
    f0 = parse_init(cfg["init"], cfg["grid"])
    snaps, diag = solve(f0, solver_cfg)
    report = classify(snaps[-1][1], params)
    if cfg["format"] == "json":
        _write_json(man.path_for("results.json"), {
            "snapshots": [{"t": t, "density": density_to_json(d)} for t, d in snaps],
            "report": report.to_json(),
            "mu1_drift": diag.mu1_drift(),
        })
    else:
        for t, dens in snaps:
            dens.to_csv(man.path_for(f"density_t{t:g}.csv"))
        diag.to_csv(man.path_for("diagnostics.csv"))
        _write_json(man.path_for("report.json"), report.to_json())
    man.write()
    return 0


def cmd_scan(args) -> int:
    mode = args.mode
    cfg = _resolve(args, {
        "init": "uniform", "w": 0.5, "grid": 200, "dt": 0.1, "horizon": 100.0,
        "negativity": "reject", "out": ".", "format": "csv", "seed": 0,
        "threads": 1, "cap": None,
        "deltas": "0.1:0.6:0.1", "alpha": "0:1:0.1", "delta": "0.5:1:0.05",
    })
    out = _prepare_out(cfg)
    man = Manifest(f"scan {mode}", cfg, out)
    params = ModelParams(delta=0.5, w=cfg["w"])  # per-point delta overrides
    solver_cfg = SolverConfig(params=params, cell_count=cfg["grid"], dt=cfg["dt"],
                              horizon=cfg["horizon"], negativity_policy=cfg["negativity"])
    if mode == "delta":
        cap = cfg["cap"] if cfg["cap"] is not None else (5 if str(cfg["init"]).startswith("beta") else 7)
        f0 = parse_init(cfg["init"], cfg["grid"])
        result = scan_delta(f0, cfg["w"], parse_grid(cfg["deltas"]), solver_cfg,
                            cap=cap, max_workers=cfg["threads"])
    else:
        cap = cfg["cap"] if cfg["cap"] is not None else 7
        result = scan_extremists(parse_grid(cfg["alpha"]), parse_grid(cfg["delta"]),
                                 cfg["w"], solver_cfg, cap=cap, max_workers=cfg["threads"])
    result.to_csv(man.path_for("scan.csv"))
    errors = [{"delta": p.delta, "alpha": p.alpha, "error": p.error}
              for p in result.points if p.error]
    if errors:
        _write_json(man.path_for("scan_errors.json"), errors)
    man.write()
    return 0


def cmd_chaos(args) -> int:
    cfg = _resolve(args, {
        "init": "uniform", "delta": 0.3, "w": 0.5, "grid": 200, "dt": 0.02,
        "t_check": 5.0, "n_list": "100,1000,10000", "seeds": 20,
        "simulator": "both", "out": ".", "format": "csv", "seed": 0,
        "threads": 1,
    })
    out = _prepare_out(cfg)
    man = Manifest("chaos", cfg, out)
    params = ModelParams(delta=cfg["delta"], w=cfg["w"])
    f0 = parse_init(cfg["init"], cfg["grid"])
    n_list = [int(v) for v in parse_grid(str(cfg["n_list"]))]
    seed_seq = np.random.SeedSequence(cfg["seed"])
    seeds = [int(s.generate_state(1)[0]) for s in seed_seq.spawn(int(cfg["seeds"]))]
    solver_cfg = SolverConfig(params=params, cell_count=cfg["grid"], dt=cfg["dt"],
                              horizon=max(cfg["t_check"], cfg["dt"]),
                              snapshot_times=(cfg["t_check"],))
    sims = ("auxiliary", "discrete") if cfg["simulator"] == "both" else (cfg["simulator"],)
    rows = []
    for simulator in sims:
        rows.extend(chaoticity_check(f0, params, n_list, cfg["t_check"], seeds,
                                     solver_cfg=solver_cfg, simulator=simulator,
                                     max_workers=cfg["threads"]))
    import csv as _csv
    with open(man.path_for("chaoticity.csv"), "w", newline="") as fh:
        wr = _csv.writer(fh)
        wr.writerow(["n", "simulator", "median_kolmogorov", "median_wasserstein1", "n_seeds"])
        for r in rows:
            wr.writerow([r.n, r.simulator, repr(r.median_kolmogorov),
                         repr(r.median_wasserstein1), r.n_seeds])
    man.write()
    return 0


def cmd_bounds(args) -> int:
    cfg = _resolve(args, {
        "init": "uniform", "delta": 0.6, "w": 0.5, "grid": 200, "dt": 0.1,
        "horizon": 100.0, "negativity": "reject", "alpha": None,
        "out": ".", "format": "csv", "seed": 0,
    })
    out = _prepare_out(cfg)
    man = Manifest("bounds", cfg, out)
    params = ModelParams(delta=cfg["delta"], w=cfg["w"])
    alpha = cfg.get("alpha")
    if alpha is not None:
        alpha = float(alpha)
        f0 = extremists_density(alpha, cfg["grid"])
    else:
        f0 = parse_init(cfg["init"], cfg["grid"])
    solver_cfg = SolverConfig(params=params, cell_count=cfg["grid"], dt=cfg["dt"],
                              horizon=cfg["horizon"], negativity_policy=cfg["negativity"])
    snaps, diag = solve(f0, solver_cfg)
    observed = classify(snaps[-1][1], params)
    verdicts = [
        bound_oracle("diameter", m0=f0, params=params, observed=observed),
        bound_oracle("uniform_half", m0=f0, params=params, observed=observed),
        bound_oracle("symmetric_h", m0=f0, params=params, observed=observed),
        bound_oracle("sigma_envelope", params=params, sigma_series=diag.sigma,
                     times=diag.times),
    ]
    if alpha is not None:
        verdicts.append(bound_oracle("extremist_cie", params=params, alpha=alpha,
                                     observed=observed))
    with open(man.path_for("bounds.jsonl"), "w") as fh:
        for v in verdicts:
            fh.write(json.dumps(v.to_json(), sort_keys=True) + "\n")
    _write_json(man.path_for("report.json"), observed.to_json())
    man.write()
    return 0


def cmd_report(args) -> int:
    from . import report as report_mod
    cfg = _resolve(args, {"src": ".", "out": None})
    src = cfg["src"]
    man_path = os.path.join(src, "manifest.json")
    if not os.path.exists(man_path):
        raise ConfigError(f"--src {src}: no manifest.json found")
    out = cfg["out"] or os.path.join(src, "figures")
    os.makedirs(out, exist_ok=True)
    written = report_mod.render(src, out)
    man = Manifest("report", {"src": src, "out": out}, out)
    man.data["outputs"] = [os.path.basename(p) for p in written]
    man.write()
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (or a manifest.json); flags override")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="worker pool size for scans")
    p.add_argument("--format", choices=("csv", "json"), help="output format")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bcmodel",
        description="Bounded-confidence opinion dynamics: simulation, kinetic solver, analysis.")
    ap.add_argument("--version", action="version", version=f"bcmodel {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", help="finite-N stochastic simulation until frozen")
    p.add_argument("--n", type=int, help="number of peers")
    p.add_argument("--delta", type=float, help="deviation threshold")
    p.add_argument("--w", type=float, help="confidence factor")
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--freeze-window", dest="freeze_window", type=int)
    p.add_argument("--freeze-tol", dest="freeze_tol", type=float)
    p.add_argument("--init", help="initial law: uniform | beta(a,b) | blocks([...]) | csv(path)")
    p.add_argument("--grid", type=int, help="cells used to discretize --init for sampling")
    p.add_argument("--poisson", action="store_const", const=True,
                   help="use the Poisson-clock (auxiliary) variant")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="deterministic kinetic solve")
    p.add_argument("--init", help="uniform | beta(a,b) | blocks([...]) | csv(path)")
    p.add_argument("--delta", type=float)
    p.add_argument("--w", type=float)
    p.add_argument("--grid", type=int, help="number of cells I")
    p.add_argument("--dt", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--snapshots", help="comma-separated snapshot times")
    p.add_argument("--negativity", choices=("reject", "clamp_renormalize"))
    _add_common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("scan", help="bifurcation scans")
    p.add_argument("mode", choices=("delta", "extremists"))
    p.add_argument("--init", help="initial law for delta scans")
    p.add_argument("--deltas", help="delta grid start:stop:step for delta scans")
    p.add_argument("--alpha", help="alpha grid start:stop:step (extremists)")
    p.add_argument("--delta", help="delta grid start:stop:step (extremists)")
    p.add_argument("--w", type=float)
    p.add_argument("--grid", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--negativity", choices=("reject", "clamp_renormalize"))
    p.add_argument("--cap", type=int, help="component-count reporting cap")
    _add_common(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("chaos", help="empirical mean-field (chaoticity) comparison")
    p.add_argument("--init")
    p.add_argument("--delta", type=float)
    p.add_argument("--w", type=float)
    p.add_argument("--grid", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-check", dest="t_check", type=float)
    p.add_argument("--n-list", dest="n_list", help="comma-separated system sizes")
    p.add_argument("--seeds", type=int, help="number of seeds per system size")
    p.add_argument("--simulator", choices=("auxiliary", "discrete", "both"))
    _add_common(p)
    p.set_defaults(func=cmd_chaos)

    p = sub.add_parser("bounds", help="evaluate theoretical consensus bounds against a solve")
    p.add_argument("--init")
    p.add_argument("--delta", type=float)
    p.add_argument("--w", type=float)
    p.add_argument("--grid", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--negativity", choices=("reject", "clamp_renormalize"))
    p.add_argument("--alpha", type=float,
                   help="use the extremists/undecided initial condition with this alpha")
    _add_common(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("report", help="render figures for a finished run directory")
    p.add_argument("--src", help="directory containing manifest.json")
    p.add_argument("--out", help="figure output directory (default: <src>/figures)")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NegativityError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
