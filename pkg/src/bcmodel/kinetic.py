"""Deterministic solver for the mean-field opinion density equation.

The density equation for ``f(x, t)`` has a gain term
``(2/w) int f((x - (1-w) y)/w) f(y) dy`` over the window ``|y - x| <= w*delta``
and a loss term ``2 f(x) int f(y) dy`` over ``|y - x| <= delta``.  For a
piecewise-constant ``f`` the right side is an exactly representable
piecewise-linear function of ``x``; one time step is forward Euler followed
by re-approximation onto the uniform grid by per-cell averages.

Assembly works on grid-line jump coefficients: writing ``f`` as a
combination of Heaviside steps with jump ``c_p`` at grid line ``x_p``, the
gain term is ``2 sum_pq c_p c_q I2(x; x_p, x_q)`` (see :mod:`.kernels`), a
continuous piecewise-linear function described by at most ``3 P^2`` slope
kinks for ``P`` nonzero jumps.  Kinks are sorted once per step
(``O(P^2 log P)``) and evaluated by prefix sums; the loss term factorizes
as ``-2 f(x) * (F(x+delta) - F(x-delta))`` with ``F`` the CDF and is exact
with ``O(I)`` work.  Cell integrals of both terms are closed-form, so the
projection introduces no quadrature error.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .agents import ModelParams
from .kernels import gain_event_arrays, kernel_entry
from .measures import PiecewiseConstantDensity, PiecewiseLinearFunction


class NegativityError(RuntimeError):
    def __init__(self, cell: int, level: float, step: int | None = None):
        self.cell = cell
        self.level = level
        self.step = step
        at = f" at step {step}" if step is not None else ""
        super().__init__(
            f"Euler step produced negative level {level:.3e} in cell {cell}{at}; "
            f"reduce dt or use the clamp_renormalize policy"
        )


class NonFiniteError(RuntimeError):
    def __init__(self, step: int | None = None):
        self.step = step
        at = f" at step {step}" if step is not None else ""
        super().__init__(f"derivative overflowed to a non-finite value{at}")


@dataclass(frozen=True)
class SolverConfig:
    params: ModelParams
    cell_count: int = 200
    dt: float = 0.1
    horizon: float = 100.0
    negativity_policy: str = "reject"
    snapshot_times: tuple = ()

    def __post_init__(self):
        if self.cell_count < 2:
            raise ValueError("cell_count must be >= 2")
        if self.dt < 0:
            raise ValueError("dt must be nonnegative")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.dt > self.horizon:
            raise ValueError("dt must not exceed the horizon")
        if self.negativity_policy not in ("reject", "clamp_renormalize"):
            raise ValueError(f"unknown negativity policy {self.negativity_policy!r}")
        snaps = tuple(float(t) for t in self.snapshot_times)
        if any(t < 0 or t > self.horizon for t in snaps):
            raise ValueError("snapshot times must lie in [0, horizon]")
        object.__setattr__(self, "snapshot_times", tuple(sorted(snaps)))


class _DerivativeParts:
    """Exact evaluation machinery for the derivative of one density."""

    def __init__(self, density: PiecewiseConstantDensity, params: ModelParams):
        self.density = density
        self.params = params
        I = density.cell_count
        self.edges = density.edges
        levels = density.levels
        self.jumps = np.diff(np.concatenate(([0.0], levels, [0.0])))
        lines = np.arange(I + 1) / I

        pos, kink = gain_event_arrays(lines, self.jumps, params.delta, params.w)
        order = np.argsort(pos, kind="stable")
        self.ep = pos[order]
        k = kink[order]
        # Sweep representation: slope, value and running integral of the gain
        # term at each event.  All partial sums are physically bounded
        # quantities, which keeps the rounding error local; a global
        # (x * sum(kink) - sum(kink * pos)) prefix formula cancels numbers of
        # order (sum |jump|)^2 and loses ~1e-10 absolute in spiky states.
        self.ck = np.cumsum(k)
        if self.ep.size:
            gaps = np.diff(self.ep)
            self.gv = np.concatenate(([0.0], np.cumsum(self.ck[:-1] * gaps)))
            trap = 0.5 * (self.gv[:-1] + self.gv[1:]) * gaps
            self.gi = np.concatenate(([0.0], np.cumsum(trap)))
        else:
            self.gv = np.empty(0)
            self.gi = np.empty(0)

        # loss side: CDF at edges, plus the primitive of the extended CDF
        masses = density.cell_masses()
        self.cdf = np.concatenate(([0.0], np.cumsum(masses)))
        seg = 0.5 * (self.cdf[:-1] + self.cdf[1:]) / I
        self.cdf_prim = np.concatenate(([0.0], np.cumsum(seg)))

    # -- gain term -----------------------------------------------------
    def gain_value(self, x):
        x = np.asarray(x, dtype=float)
        if self.ep.size == 0:
            return np.zeros_like(x)
        j = np.searchsorted(self.ep, x, side="right") - 1
        ok = j >= 0
        jj = np.maximum(j, 0)
        val = self.gv[jj] + self.ck[jj] * (x - self.ep[jj])
        return np.where(ok, val, 0.0)

    def gain_slope(self, x):
        x = np.asarray(x, dtype=float)
        if self.ep.size == 0:
            return np.zeros_like(x)
        j = np.searchsorted(self.ep, x, side="right") - 1
        return np.where(j >= 0, self.ck[np.maximum(j, 0)], 0.0)

    def gain_antiderivative(self, y):
        """integral of the gain term from below up to y (additive constant shared)."""
        y = np.asarray(y, dtype=float)
        if self.ep.size == 0:
            return np.zeros_like(y)
        j = np.searchsorted(self.ep, y, side="right") - 1
        ok = j >= 0
        jj = np.maximum(j, 0)
        d = y - self.ep[jj]
        val = self.gi[jj] + d * (self.gv[jj] + 0.5 * self.ck[jj] * d)
        return np.where(ok, val, 0.0)

    # -- loss term -----------------------------------------------------
    def _cdf_at(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        return np.interp(t, self.edges, self.cdf)

    def window_mass(self, x):
        """W(x) = F(x + delta) - F(x - delta)."""
        x = np.asarray(x, dtype=float)
        d = self.params.delta
        return self._cdf_at(x + d) - self._cdf_at(x - d)

    def _cdf_primitive(self, y):
        """G(y) = integral_0^y of the CDF extended by 0 below 0 and 1 above 1."""
        y = np.asarray(y, dtype=float)
        I = self.density.cell_count
        t = np.clip(y, 0.0, 1.0)
        j = np.clip(np.floor(t * I).astype(int), 0, I - 1)
        dtc = t - self.edges[j]
        g = self.cdf_prim[j] + self.cdf[j] * dtc + 0.5 * self.density.levels[j] * dtc * dtc
        return g + np.maximum(y - 1.0, 0.0)

    def window_mass_primitive(self, y):
        d = self.params.delta
        return self._cdf_primitive(y + d) - self._cdf_primitive(y - d)

    def loss_value(self, x, side: str = "right"):
        """-2 f(x) W(x) with the requested one-sided value of f at edges."""
        x = np.asarray(x, dtype=float)
        I = self.density.cell_count
        s = "right" if side == "right" else "left"
        idx = np.clip(np.searchsorted(self.edges, x, side=s) - 1, 0, I - 1)
        return -2.0 * self.density.levels[idx] * self.window_mass(x)

    # -- assembled quantities -------------------------------------------
    def cell_integrals(self):
        """Exact integral of the derivative over every grid cell."""
        e = self.edges
        gain = np.diff(self.gain_antiderivative(e))
        wint = np.diff(self.window_mass_primitive(e))
        return gain - 2.0 * self.density.levels * wint

    def breakpoints(self):
        d = self.params.delta
        cand = np.concatenate([
            self.edges,
            self.edges + d,
            self.edges - d,
            self.ep,
        ])
        cand = cand[(cand > 0.0) & (cand < 1.0)]
        return np.unique(np.concatenate([[0.0], cand, [1.0]]))

    def sup_norm(self) -> float:
        bp = self.breakpoints()
        g = self.gain_value(bp)
        hi = np.abs(g + self.loss_value(bp, side="right"))
        lo = np.abs(g + self.loss_value(bp, side="left"))
        return float(max(hi.max(), lo.max()))

    def as_piecewise_linear(self) -> PiecewiseLinearFunction:
        bp = self.breakpoints()
        gl = self.gain_value(bp)
        vl = gl[:-1] + self.loss_value(bp[:-1], side="right")
        vr = gl[1:] + self.loss_value(bp[1:], side="left")
        slopes = (vr - vl) / np.diff(bp)
        return PiecewiseLinearFunction(breakpoints=bp, values_left=vl, slopes=slopes)


def derivative(f: PiecewiseConstantDensity, params: ModelParams) -> PiecewiseLinearFunction:
    """Exact piecewise-linear time derivative of the density equation at f."""
    return _DerivativeParts(f, params).as_piecewise_linear()


def derivative_reference(f: PiecewiseConstantDensity, params: ModelParams, x,
                         row_sink: set | None = None):
    """Slow reference evaluation straight from the per-pair kernel tables.

    Sums the four-term I1/I2 combinations over all cell pairs weighted by
    ``a_i a_j``.  Used by tests to pin the vectorized assembly to the table
    transcription.  ``row_sink`` collects the gain-table rows encountered.
    """
    x = np.asarray(x, dtype=float)
    I = f.cell_count
    out = np.zeros_like(x)
    for i in range(I):
        if f.levels[i] == 0.0:
            continue
        for j in range(I):
            if f.levels[j] == 0.0:
                continue
            entry = kernel_entry(i, j, I, params)
            if row_sink is not None:
                row_sink.update(entry.i2_rows)
            out += f.levels[i] * f.levels[j] * entry.eval(x, params.delta)
    return out


def stationarity_residual(f: PiecewiseConstantDensity, params: ModelParams) -> float:
    """Sup norm of the derivative; near zero at a numerical stationary point."""
    return _DerivativeParts(f, params).sup_norm()


@dataclass
class StepResult:
    density: PiecewiseConstantDensity
    residual: float
    clamped_mass: float


def _step(parts: _DerivativeParts, cfg: SolverConfig, step_index: int | None = None,
          with_residual: bool = True) -> StepResult:
    f = parts.density
    I = f.cell_count
    cell = parts.cell_integrals()
    if not np.all(np.isfinite(cell)):
        raise NonFiniteError(step_index)
    # the derivative integrates to zero analytically; removing the assembly's
    # rounding residue keeps long runs on unit mass without renormalizing
    cell = cell - cell.mean()
    if np.array_equal(f.levels, f.levels[::-1]):
        # the equation is reflection-equivariant, so a palindromic state has
        # palindromic cell loads; mirror-averaging removes the rounding-level
        # asymmetry that would otherwise random-walk through the neutral
        # within-pair redistribution directions of near-frozen spikes
        cell = 0.5 * (cell + cell[::-1])
    new_levels = f.levels + cfg.dt * I * cell
    clamped = 0.0
    # Cells outside the evolving support pick up an additive rounding floor
    # ~1e-12 from the kink assembly and would random-walk around zero,
    # pumping mass through the negativity handling.  For dt <= 1/2 the Euler
    # predictor is nonnegative pointwise, so rounding-scale levels are
    # snapped to exact zero, with a mass-neutral rescale of the rest.
    pre_mass = float(new_levels.mean())
    snap_floor = 1e-12 * max(1.0, float(np.max(new_levels)))
    snap = np.abs(new_levels) < snap_floor
    if np.any(snap):
        new_levels = np.where(snap, 0.0, new_levels)
        post_mass = float(new_levels.mean())
        if post_mass <= 0:
            raise NonFiniteError(step_index)
        new_levels = new_levels * (pre_mass / post_mass)
    neg = new_levels < 0.0
    if np.any(neg):
        if cfg.negativity_policy == "reject":
            worst = int(np.argmin(new_levels))
            raise NegativityError(worst, float(new_levels[worst]), step_index)
        clamped = float(-new_levels[neg].sum() / I)
        new_levels = np.where(neg, 0.0, new_levels)
        total = new_levels.mean()
        if total <= 0:
            raise NonFiniteError(step_index)
        new_levels = new_levels / total
    res = parts.sup_norm() if with_residual else float("nan")
    return StepResult(PiecewiseConstantDensity(new_levels), res, clamped)


def euler_step(f: PiecewiseConstantDensity, cfg: SolverConfig) -> PiecewiseConstantDensity:
    """One forward Euler step followed by cell-average projection."""
    return _step(_DerivativeParts(f, cfg.params), cfg, with_residual=False).density


def project_cell_averages(func: PiecewiseLinearFunction, cell_count: int) -> np.ndarray:
    """Exact per-cell averages of a piecewise-linear function (midpoint rule
    per affine sub-segment, which is exact)."""
    edges = np.arange(cell_count + 1) / cell_count
    bp = np.unique(np.concatenate([func.breakpoints, edges]))
    bp = bp[(bp >= 0.0) & (bp <= 1.0)]
    mids = 0.5 * (bp[:-1] + bp[1:])
    seg = func(mids) * np.diff(bp)
    cells = np.clip(np.searchsorted(edges, mids, side="right") - 1, 0, cell_count - 1)
    out = np.zeros(cell_count)
    np.add.at(out, cells, seg)
    return out * cell_count


@dataclass
class SolveDiagnostics:
    times: np.ndarray
    mass: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    sigma: np.ndarray
    max_level: np.ndarray
    clamped_mass: np.ndarray        # cumulative
    residual: np.ndarray            # sup norm of the derivative at each state
    support_lo: np.ndarray          # first cell with positive level
    support_hi: np.ndarray          # last cell with positive level
    projected_residual: np.ndarray = None  # sup norm of the cell-averaged derivative
    wall_time: float = 0.0

    def mu1_drift(self) -> float:
        return float(np.max(np.abs(self.mu1 - self.mu1[0])))

    def to_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "mass", "mu1", "mu2", "sigma", "max_level",
                         "clamped_mass", "residual"])
            for k in range(self.times.size):
                wr.writerow([repr(float(self.times[k])), repr(float(self.mass[k])),
                             repr(float(self.mu1[k])), repr(float(self.mu2[k])),
                             repr(float(self.sigma[k])), repr(float(self.max_level[k])),
                             repr(float(self.clamped_mass[k])), repr(float(self.residual[k]))])


def _density_stats(f: PiecewiseConstantDensity):
    mass = float(f.levels.mean())
    mu1 = f.raw_moment(1)
    mu2 = f.raw_moment(2)
    sigma = float(np.sqrt(max(mu2 - mu1 * mu1, 0.0)))
    pos = np.nonzero(f.levels > 0)[0]
    lo, hi = (int(pos[0]), int(pos[-1])) if pos.size else (0, -1)
    return mass, mu1, mu2, sigma, float(f.levels.max()), lo, hi


def solve(f0: PiecewiseConstantDensity, cfg: SolverConfig,
          collect_diagnostics: bool = True):
    """Run forward Euler to the horizon.

    Returns ``(snapshots, diagnostics)`` where ``snapshots`` is a list of
    ``(time, density)`` pairs at the requested snapshot times (each mapped to
    the nearest step, the initial state counting as step 0) and
    ``diagnostics`` is per-step time series including the final state.
    """
    if f0.cell_count != cfg.cell_count:
        raise ValueError(f"density has {f0.cell_count} cells, config expects {cfg.cell_count}")
    if cfg.dt == 0:
        raise ValueError("solve requires dt > 0")
    n_steps = int(round(cfg.horizon / cfg.dt))
    snap_steps = {}
    for t in cfg.snapshot_times:
        snap_steps.setdefault(min(int(round(t / cfg.dt)), n_steps), []).append(t)

    t0 = time.perf_counter()
    rows = []
    snapshots = []
    f = f0
    clamped_total = 0.0
    for k in range(n_steps + 1):
        parts = _DerivativeParts(f, cfg.params)
        if collect_diagnostics or k == n_steps:
            res = parts.sup_norm()
        else:
            res = float("nan")
        if collect_diagnostics:
            cellv = parts.cell_integrals()
            proj = float(np.max(np.abs(cfg.cell_count * (cellv - cellv.mean()))))
            mass, mu1, mu2, sigma, mx, lo, hi = _density_stats(f)
            rows.append((k * cfg.dt, mass, mu1, mu2, sigma, mx, clamped_total, res, lo, hi, proj))
        if k in snap_steps:
            for t in snap_steps[k]:
                snapshots.append((t, f))
        if k == n_steps:
            break
        step = _step(parts, cfg, step_index=k, with_residual=False)
        clamped_total += step.clamped_mass
        f = step.density

    if collect_diagnostics:
        arr = np.array(rows, dtype=float)
        diags = SolveDiagnostics(
            times=arr[:, 0], mass=arr[:, 1], mu1=arr[:, 2], mu2=arr[:, 3],
            sigma=arr[:, 4], max_level=arr[:, 5], clamped_mass=arr[:, 6],
            residual=arr[:, 7], support_lo=arr[:, 8].astype(int),
            support_hi=arr[:, 9].astype(int), projected_residual=arr[:, 10],
            wall_time=time.perf_counter() - t0,
        )
    else:
        mass, mu1, mu2, sigma, mx, lo, hi = _density_stats(f)
        res = stationarity_residual(f, cfg.params)
        diags = SolveDiagnostics(
            times=np.array([n_steps * cfg.dt]), mass=np.array([mass]),
            mu1=np.array([mu1]), mu2=np.array([mu2]), sigma=np.array([sigma]),
            max_level=np.array([mx]), clamped_mass=np.array([clamped_total]),
            residual=np.array([res]), support_lo=np.array([lo]),
            support_hi=np.array([hi]), projected_residual=np.array([np.nan]),
            wall_time=time.perf_counter() - t0,
        )
    if not snapshots and not cfg.snapshot_times:
        snapshots = [(cfg.horizon, f)]
    return snapshots, diags


def final_density(f0: PiecewiseConstantDensity, cfg: SolverConfig) -> PiecewiseConstantDensity:
    snaps, _ = solve(f0, cfg, collect_diagnostics=False)
    return snaps[-1][1]


def gain_boltzmann_form(f: PiecewiseConstantDensity, params: ModelParams, x) -> np.ndarray:
    """Gain term via the pre/post-interaction change of variables (w != 1/2).

    Cross-check oracle only: the transformed window has half-width
    ``|2w - 1| * delta`` and both factors are evaluated at pre-interaction
    states; singular at w = 1/2 where the Jacobian degenerates.
    """
    w = params.w
    if abs(2.0 * w - 1.0) < 1e-9:
        raise ValueError("Boltzmann form is singular at w = 1/2")
    s = 2.0 * w - 1.0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    edges = f.edges
    for k, xv in enumerate(x):
        # integrand is piecewise constant in y; enumerate its breakpoints
        lo = xv - abs(s) * params.delta
        hi = xv + abs(s) * params.delta
        pts = [lo, hi]
        for e in edges:
            # (w x - (1-w) y)/s = e  and  (w y - (1-w) x)/s = e
            pts.append((w * xv - s * e) / (1.0 - w))
            pts.append((s * e + (1.0 - w) * xv) / w)
        pts = np.unique(np.clip(np.asarray(pts), lo, hi))
        acc = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            if b - a <= 0:
                continue
            ym = 0.5 * (a + b)
            u = (w * xv - (1.0 - w) * ym) / s
            v = (w * ym - (1.0 - w) * xv) / s
            acc += float(f.value_at(u)) * float(f.value_at(v)) * (b - a)
        out[k] = (2.0 / s) * acc if s > 0 else (2.0 / s) * -acc
    return out
