"""Limit-state classification, bifurcation scans, theoretical-bound oracles,
and the empirical mean-field (chaoticity) comparison."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .agents import ModelParams, OpinionState, Simulation, clusters
from .kinetic import SolverConfig, solve
from .measures import (
    EmpiricalMeasure,
    PiecewiseConstantDensity,
    extremists_density,
    kolmogorov_distance,
    moments,
    sample_from_density,
    wasserstein1_distance,
)

LEVEL_FLOOR = 1e-10      # density below this counts as an empty cell
MASS_THRESHOLD = 0.01    # a component needs at least 1% of the total mass


@dataclass(frozen=True)
class ConsensusReport:
    components: tuple                 # ((position, mass), ...)
    classification: str               # "total" | "partial" | "unresolved"
    mass_threshold: float
    source: str                       # "kinetic" | "agent"
    steps: int | None = None
    frozen: bool | None = None

    @property
    def n_components(self) -> int:
        return len(self.components)

    def is_total(self) -> bool:
        return self.classification == "total"

    def with_classification(self, classification: str) -> "ConsensusReport":
        return replace(self, classification=classification)

    def with_run_info(self, steps: int, frozen: bool) -> "ConsensusReport":
        return replace(self, steps=steps, frozen=frozen)

    def to_json(self) -> dict:
        out = {
            "components": [{"position": p, "mass": m} for p, m in self.components],
            "classification": self.classification,
            "n_components": self.n_components,
            "mass_threshold": self.mass_threshold,
            "source": self.source,
        }
        if self.steps is not None:
            out["steps"] = self.steps
        if self.frozen is not None:
            out["frozen"] = self.frozen
        return out


def classify(density: PiecewiseConstantDensity, params: ModelParams,
             mass_threshold: float = MASS_THRESHOLD,
             level_floor: float = LEVEL_FLOOR) -> ConsensusReport:
    """Detect consensus components of a (near-)converged density.

    Components are maximal runs of cells with level above ``level_floor``,
    reported at their center of mass; components below ``mass_threshold``
    are dropped.  If two surviving components sit closer than
    ``delta - 2/I`` the state has not converged yet and the classification
    is "unresolved".
    """
    I = density.cell_count
    occupied = density.levels > level_floor
    comps = []
    edges = density.edges
    k = 0
    while k < I:
        if not occupied[k]:
            k += 1
            continue
        k2 = k
        while k2 + 1 < I and occupied[k2 + 1]:
            k2 += 1
        sel = slice(k, k2 + 1)
        mass = float(np.sum(density.levels[sel]) / I)
        if mass > 0:
            mom = np.sum(density.levels[sel] * (edges[k + 1:k2 + 2] ** 2 - edges[k:k2 + 1] ** 2)) / 2.0
            comps.append((float(mom / mass), mass))
        k = k2 + 1
    comps = [(p, m) for p, m in comps if m >= mass_threshold]
    classification = "total" if len(comps) == 1 else "partial"
    gap_floor = params.delta - 2.0 / I
    for (p1, _), (p2, _) in zip(comps[:-1], comps[1:]):
        if p2 - p1 < gap_floor:
            classification = "unresolved"
    return ConsensusReport(components=tuple(comps), classification=classification,
                           mass_threshold=mass_threshold, source="kinetic")


def classify_agents(state: OpinionState, params: ModelParams,
                    mass_threshold: float = MASS_THRESHOLD,
                    freeze_tol: float = 1e-9) -> ConsensusReport:
    """Consensus report for a frozen (or near-frozen) finite-N state."""
    part = clusters(state, params)
    n = state.size
    comps = []
    unresolved = False
    for idx, (lo, hi) in zip(part.blocks, part.ranges):
        if hi - lo > freeze_tol:
            unresolved = True
        mass = len(idx) / n
        if mass >= mass_threshold:
            comps.append((float(state.opinions[idx].mean()), mass))
    comps.sort()
    classification = "unresolved" if unresolved else ("total" if len(comps) == 1 else "partial")
    return ConsensusReport(components=tuple(comps), classification=classification,
                           mass_threshold=mass_threshold, source="agent")


def first_half_center_of_mass(density: PiecewiseConstantDensity) -> float:
    """Center of mass of the restriction to [0, 1/2); NaN if massless there."""
    I = density.cell_count
    edges = density.edges
    rights = np.minimum(edges[1:], 0.5)
    lefts = np.minimum(edges[:-1], 0.5)
    widths = np.maximum(rights - lefts, 0.0)
    mass = float(np.sum(density.levels * widths))
    if mass <= 0:
        return float("nan")
    mom = float(np.sum(density.levels * (rights ** 2 - lefts ** 2)) / 2.0)
    return mom / mass


# ---------------------------------------------------------------------------
# Parameter scans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanPoint:
    delta: float
    alpha: float | None
    w: float
    report: ConsensusReport | None
    n_components_capped: int | None
    first_half_com: float
    error: str | None = None


@dataclass
class ScanResult:
    points: list = field(default_factory=list)
    cap: int | None = None

    def rows(self):
        for p in self.points:
            yield {
                "delta": p.delta,
                "alpha": "" if p.alpha is None else p.alpha,
                "w": p.w,
                "n_components": "" if p.n_components_capped is None else p.n_components_capped,
                "positions": ";".join(repr(float(c[0])) for c in (p.report.components if p.report else ())),
                "masses": ";".join(repr(float(c[1])) for c in (p.report.components if p.report else ())),
                "first_half_com": p.first_half_com,
            }

    def to_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["delta", "alpha", "w", "n_components", "positions",
                         "masses", "first_half_com"])
            for r in self.rows():
                fh_com = r["first_half_com"]
                wr.writerow([repr(float(r["delta"])), r["alpha"] if r["alpha"] == "" else repr(float(r["alpha"])),
                             repr(float(r["w"])), r["n_components"], r["positions"], r["masses"],
                             "nan" if isinstance(fh_com, float) and math.isnan(fh_com) else repr(float(fh_com))])


def _scan_one(args):
    f0, cfg, delta, alpha, w, cap = args
    params = ModelParams(delta=delta, w=w)
    cfg_pt = replace(cfg, params=params)
    try:
        snaps, _ = solve(f0, cfg_pt, collect_diagnostics=False)
        final = snaps[-1][1]
        report = classify(final, params)
        n = report.n_components if report.classification != "unresolved" else report.n_components
        capped = min(n, cap) if cap is not None else n
        return ScanPoint(delta=delta, alpha=alpha, w=w, report=report,
                         n_components_capped=capped,
                         first_half_com=first_half_center_of_mass(final))
    except Exception as exc:  # per-point failures are recorded, the scan continues
        return ScanPoint(delta=delta, alpha=alpha, w=w, report=None,
                         n_components_capped=None, first_half_com=float("nan"),
                         error=f"{type(exc).__name__}: {exc}")


def _run_points(tasks, max_workers: int):
    if max_workers <= 1 or len(tasks) <= 1:
        return [_scan_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_scan_one, tasks))


def scan_delta(f0: PiecewiseConstantDensity, w: float, delta_grid,
               cfg: SolverConfig, cap: int = 7, max_workers: int = 1) -> ScanResult:
    """One kinetic solve per threshold value; component counts capped for reporting."""
    delta_grid = [float(d) for d in delta_grid]
    if any(d2 <= d1 for d1, d2 in zip(delta_grid[:-1], delta_grid[1:])):
        raise ValueError("delta grid must be strictly increasing")
    tasks = [(f0, cfg, d, None, w, cap) for d in delta_grid]
    return ScanResult(points=_run_points(tasks, max_workers), cap=cap)


def scan_extremists(alpha_grid, delta_grid, w: float, cfg: SolverConfig,
                    cap: int = 7, max_workers: int = 1) -> ScanResult:
    """Extremists-vs-undecided scan over (alpha, delta) pairs.

    The initial condition puts mass (1-alpha)/2 in single cells at 0 and 1
    and alpha at 1/2; thresholds below 1/2 would allow no interaction at all,
    so the delta grid is restricted to [1/2, 1].
    """
    alpha_grid = [float(a) for a in alpha_grid]
    delta_grid = [float(d) for d in delta_grid]
    if any(a < 0 or a > 1 for a in alpha_grid):
        raise ValueError("alpha values must lie in [0,1]")
    if any(d < 0.5 or d > 1.0 for d in delta_grid):
        raise ValueError("delta values must lie in [1/2, 1] for the extremists scenario")
    if any(g2 <= g1 for g1, g2 in zip(delta_grid[:-1], delta_grid[1:])):
        raise ValueError("delta grid must be strictly increasing")
    tasks = []
    for alpha in alpha_grid:
        f0 = extremists_density(alpha, cfg.cell_count)
        for d in delta_grid:
            tasks.append((f0, cfg, d, alpha, w, cap))
    return ScanResult(points=_run_points(tasks, max_workers), cap=cap)


# ---------------------------------------------------------------------------
# Theoretical-bound oracles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundVerdict:
    name: str
    hypothesis_checks: dict
    hypothesis_holds: bool
    predicted: str
    observed: str | None
    agrees: bool | None

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "hypothesis_checks": {k: bool(v) for k, v in self.hypothesis_checks.items()},
            "hypothesis_holds": bool(self.hypothesis_holds),
            "predicted": self.predicted,
            "observed": self.observed,
            "agrees": self.agrees,
        }


def _mean_abs_dev(density: PiecewiseConstantDensity, center: float) -> float:
    """integral of |x - center| against the density, exact per cell."""
    e = density.edges
    total = 0.0
    for lev, lo, hi in zip(density.levels, e[:-1], e[1:]):
        if lev == 0.0:
            continue
        if hi <= center:
            total += lev * (center * (hi - lo) - (hi * hi - lo * lo) / 2.0)
        elif lo >= center:
            total += lev * ((hi * hi - lo * lo) / 2.0 - center * (hi - lo))
        else:
            total += lev * ((center - lo) ** 2 + (hi - center) ** 2) / 2.0
    return float(total)


def max_components_for(delta: float) -> int:
    """Packing bound: positions pairwise more than delta apart inside [0,1]."""
    return int(math.floor(1.0 / delta)) + 1 if delta < 1.0 else 1


def _match(predicted: str, report: ConsensusReport) -> bool:
    c = report.n_components
    if report.classification == "unresolved":
        return False
    if predicted == "total":
        return report.classification == "total"
    if predicted.startswith("c != "):
        return c != int(predicted.split()[-1])
    if predicted.startswith("c <= "):
        return c <= int(predicted.split()[-1])
    raise ValueError(f"unknown prediction {predicted!r}")


def bound_oracle(name: str, *, m0: PiecewiseConstantDensity | None = None,
                 params: ModelParams | None = None,
                 observed: ConsensusReport | None = None,
                 alpha: float | None = None,
                 sigma_series: np.ndarray | None = None,
                 times: np.ndarray | None = None,
                 h=None, n: int | None = None, q: float | None = None,
                 sigma_slack: float = 1e-3) -> BoundVerdict:
    """Evaluate one of the named consensus/envelope bounds.

    ``diameter``        supp(m0) narrower than delta => total consensus.
    ``uniform_half``    uniform m0 and delta > 1/2 => total consensus.
    ``symmetric_h``     symmetric m0 and delta > 2 E|x - 1/2| => the limit
                        cannot have exactly 2 components; combined with the
                        packing bound this upgrades to total when delta > 1/2.
                        With user-supplied (h, n, q), q a strict lower bound
                        of <h, .> over symmetric n-component consensuses,
                        <h, m0> <= q rules out exactly n components.
    ``extremist_cie``   three-atom extremists/undecided start: total when
                        delta > 1 - alpha (alpha <= 1/2) or delta > 1/2
                        (alpha >= 1/2).
    ``sigma_envelope``  sigma(t) >= sigma(0) exp(-4 w (1-w) t) - slack along
                        a solved trajectory.
    """
    if name == "diameter":
        mom = moments(m0, 2)
        diam = mom.ess_sup - mom.ess_inf
        checks = {"diameter_lt_delta": diam < params.delta}
        holds = all(checks.values())
        predicted = "total"
        agrees = _match(predicted, observed) if (holds and observed is not None) else None
        return BoundVerdict(name, checks, holds, predicted,
                            observed.classification if observed else None, agrees)

    if name == "uniform_half":
        is_uniform = bool(np.max(np.abs(m0.levels - 1.0)) <= 1e-12)
        checks = {"m0_uniform": is_uniform, "delta_gt_half": params.delta > 0.5}
        holds = all(checks.values())
        predicted = "total"
        agrees = _match(predicted, observed) if (holds and observed is not None) else None
        return BoundVerdict(name, checks, holds, predicted,
                            observed.classification if observed else None, agrees)

    if name == "symmetric_h":
        symmetric = m0.is_symmetric()
        if h is None:
            spread = _mean_abs_dev(m0, 0.5)
            checks = {"m0_symmetric": symmetric,
                      "delta_gt_2_mean_abs_dev": params.delta > 2.0 * spread}
            holds = all(checks.values())
            predicted = "total" if (holds and max_components_for(params.delta) <= 2) else "c != 2"
        else:
            if n is None or q is None:
                raise ValueError("general symmetric_h needs h, n and q")
            e = m0.edges
            # exact cellwise integral of h via Simpson (h convex, small cells)
            hv = 0.0
            for lev, lo, hi in zip(m0.levels, e[:-1], e[1:]):
                hv += lev * (hi - lo) * (h(lo) + 4.0 * h(0.5 * (lo + hi)) + h(hi)) / 6.0
            checks = {"m0_symmetric": symmetric, "h_m0_le_q": hv <= q}
            holds = all(checks.values())
            predicted = f"c != {n}"
        agrees = _match(predicted, observed) if (holds and observed is not None) else None
        return BoundVerdict(name, checks, holds, predicted,
                            observed.classification if observed else None, agrees)

    if name == "extremist_cie":
        if alpha is None:
            raise ValueError("extremist_cie needs alpha")
        cond = (alpha <= 0.5 and params.delta > 1.0 - alpha) or \
               (alpha >= 0.5 and params.delta > 0.5)
        checks = {"corollary_condition": cond}
        holds = cond
        predicted = "total"
        agrees = _match(predicted, observed) if (holds and observed is not None) else None
        return BoundVerdict(name, checks, holds, predicted,
                            observed.classification if observed else None, agrees)

    if name == "sigma_envelope":
        if sigma_series is None or times is None:
            raise ValueError("sigma_envelope needs sigma_series and times")
        rate = 4.0 * params.w * (1.0 - params.w)
        envelope = sigma_series[0] * np.exp(-rate * np.asarray(times)) - sigma_slack
        ok = bool(np.all(np.asarray(sigma_series) >= envelope))
        checks = {"always_applicable": True}
        return BoundVerdict(name, checks, True, "sigma stays above envelope",
                            "holds" if ok else "violated", ok)

    raise ValueError(f"unknown bound name {name!r}")


# ---------------------------------------------------------------------------
# Chaoticity (mean-field validation)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChaoticityRow:
    n: int
    simulator: str
    median_kolmogorov: float
    median_wasserstein1: float
    n_seeds: int


def _chaos_one(args):
    m0, params, n, seed, t_check, simulator = args
    rng = np.random.default_rng(seed)
    opinions = sample_from_density(m0, n, rng)
    sim = Simulation(opinions, params, seed=int(rng.integers(2 ** 63)))
    if simulator == "auxiliary":
        sim.run_until_time(t_check)
    else:
        sim.run_steps(int(math.floor(n * t_check)))
    emp = EmpiricalMeasure(sim.opinions)
    return emp


def chaoticity_check(m0: PiecewiseConstantDensity, params: ModelParams,
                     n_list, t_check: float, seeds,
                     solver_cfg: SolverConfig | None = None,
                     simulator: str = "auxiliary",
                     max_workers: int = 1) -> list:
    """Median distances between finite-N occupancy measures and the kinetic law.

    For each N and seed, N opinions are sampled i.i.d. from ``m0`` by exact
    inverse-CDF, evolved to ``t_check`` (Poisson clock for "auxiliary",
    ``floor(N t)`` steps for "discrete"), and compared to the kinetic
    solution at the same time.
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list[:-1], n_list[1:])):
        raise ValueError("n_list must be increasing")
    if simulator not in ("auxiliary", "discrete"):
        raise ValueError("simulator must be 'auxiliary' or 'discrete'")
    if solver_cfg is None:
        solver_cfg = SolverConfig(params=params, cell_count=m0.cell_count,
                                  dt=0.02, horizon=max(t_check, 0.02),
                                  snapshot_times=(t_check,))
    else:
        if t_check > solver_cfg.horizon:
            raise ValueError("t_check beyond the solver horizon")
        if t_check not in solver_cfg.snapshot_times:
            solver_cfg = replace(solver_cfg, snapshot_times=tuple(solver_cfg.snapshot_times) + (t_check,))
    if t_check == 0:
        reference = m0
    else:
        snaps, _ = solve(m0, solver_cfg, collect_diagnostics=False)
        reference = next(f for t, f in snaps if t == t_check)

    rows = []
    for n in n_list:
        tasks = [(m0, params, n, int(seed), t_check, simulator) for seed in seeds]
        if max_workers > 1:
            with ProcessPoolExecutor(max_workers=max_workers) as pool:
                emps = list(pool.map(_chaos_one, tasks))
        else:
            emps = [_chaos_one(t) for t in tasks]
        ks = [kolmogorov_distance(e, reference) for e in emps]
        ws = [wasserstein1_distance(e, reference) for e in emps]
        rows.append(ChaoticityRow(n=n, simulator=simulator,
                                  median_kolmogorov=float(np.median(ks)),
                                  median_wasserstein1=float(np.median(ws)),
                                  n_seeds=len(seeds)))
    return rows
