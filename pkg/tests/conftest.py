"""Shared oracles and generators for the test suite.

Oracles here are written directly from the defining integrals and basic
definitions, independently of the package's assembly machinery, so they can
arbitrate its results.
"""

from __future__ import annotations

import numpy as np
import pytest

from bcmodel import ModelParams, PiecewiseConstantDensity


def oracle_rhs(levels, delta: float, w: float, x):
    """Brute-force evaluation of the density equation's right side.

    gain(x) = (2/w) int_{x-w d}^{x+w d} f((x-(1-w)y)/w) f(y) dy
    loss(x) = 2 f(x) int_{x-d}^{x+d} f(y) dy

    Integrands are piecewise constant in y; the quadrature enumerates every
    breakpoint (cell edges of both factors plus the window ends) and sums
    value * length exactly.
    """
    levels = np.asarray(levels, dtype=float)
    I = levels.size
    edges = np.arange(I + 1) / I

    def f_at(t: float) -> float:
        if t < 0.0 or t > 1.0:
            return 0.0
        return float(levels[min(int(np.floor(t * I)), I - 1)])

    out = np.empty(np.atleast_1d(x).shape, dtype=float)
    for k, xv in enumerate(np.atleast_1d(np.asarray(x, dtype=float))):
        lo, hi = xv - delta, xv + delta
        cut = np.unique(np.clip(np.concatenate([edges, [lo, hi]]), max(lo, 0.0), min(hi, 1.0)))
        acc = sum(f_at(0.5 * (a + b)) * (b - a) for a, b in zip(cut[:-1], cut[1:]) if b > a)
        loss = 2.0 * f_at(xv) * acc
        lo, hi = xv - w * delta, xv + w * delta
        pre_cuts = [(xv - w * e) / (1.0 - w) for e in edges]
        cut = np.unique(np.clip(np.concatenate([edges, pre_cuts, [lo, hi]]), lo, hi))
        acc = sum(f_at((xv - (1.0 - w) * (0.5 * (a + b))) / w) * f_at(0.5 * (a + b)) * (b - a)
                  for a, b in zip(cut[:-1], cut[1:]) if b > a)
        out[k] = (2.0 / w) * acc - loss
    return out


def safe_eval_points(density: PiecewiseConstantDensity, params: ModelParams,
                     rng: np.random.Generator, count: int = 40,
                     margin: float = 1e-7) -> np.ndarray:
    """Evaluation points keeping clear of the derivative's discontinuities.

    The derivative jumps at cell edges and has case-boundary breakpoints;
    points within ``margin`` of any of those are discarded so that the
    one-sided conventions of different evaluators cannot disagree.
    """
    from bcmodel.kinetic import _DerivativeParts

    parts = _DerivativeParts(density, params)
    bps = parts.breakpoints()
    pts = rng.uniform(0.0, 1.0, size=count * 4)
    dist = np.min(np.abs(pts[:, None] - bps[None, :]), axis=1)
    pts = pts[dist > margin][:count]
    return pts


def random_density(rng: np.random.Generator, cell_count: int,
                   allow_zeros: bool = True) -> PiecewiseConstantDensity:
    kind = int(rng.integers(0, 3))
    if kind == 0:
        lv = rng.uniform(0.0, 3.0, cell_count)
        if allow_zeros:
            lv[rng.random(cell_count) < 0.2] = 0.0
    elif kind == 1:
        xx = (np.arange(cell_count) + 0.5) / cell_count
        lv = np.exp(-((xx - rng.uniform(0.2, 0.8)) / rng.uniform(0.05, 0.3)) ** 2)
        lv = lv + rng.uniform(0.0, 0.3)
    else:
        lv = np.zeros(cell_count)
        for _ in range(int(rng.integers(2, 5))):
            c = int(rng.integers(0, cell_count))
            lv[max(0, c - 2):c + 3] += rng.uniform(0.5, 3.0)
    if lv.sum() <= 0:
        lv[:] = 1.0
    return PiecewiseConstantDensity(lv / lv.mean())


def run_checked(n, params, seed, n_steps, sample_every=2000):
    """Run one trajectory while checking the per-step invariants.

    Tracks exact mean conservation, the variance-drop identity on every
    interacting step, monotonicity of the extreme opinions, and cluster
    refinement at sampled steps; returns the worst offender of each.
    """
    from bcmodel import Simulation, clusters

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    sim = Simulation(rng.random(n), params, seed=seed)
    mu1_0 = sim.opinions.mean()
    prev_min, prev_max = sim.opinions.min(), sim.opinions.max()
    prev_part = clusters(sim.opinions, params)
    prev_s2 = float(sim.opinions @ sim.opinions) / n - sim.opinions.mean() ** 2
    coef = 2.0 * params.w * (1.0 - params.w) / n
    worst = {"mu1": 0.0, "vdrop": 0.0, "min_decrease": 0.0, "max_increase": 0.0,
             "refines": True}
    for k in range(n_steps):
        x_before = sim.opinions.copy()
        i, j, fired = sim.step()
        s2 = float(sim.opinions @ sim.opinions) / n - sim.opinions.mean() ** 2
        if fired:
            predicted = coef * (x_before[i] - x_before[j]) ** 2
            worst["vdrop"] = max(worst["vdrop"], abs((prev_s2 - s2) - predicted))
        prev_s2 = s2
        cmin, cmax = sim.opinions.min(), sim.opinions.max()
        worst["min_decrease"] = max(worst["min_decrease"], prev_min - cmin)
        worst["max_increase"] = max(worst["max_increase"], cmax - prev_max)
        prev_min, prev_max = cmin, cmax
        worst["mu1"] = max(worst["mu1"], abs(sim.opinions.mean() - mu1_0) / (k + 1))
        if (k + 1) % sample_every == 0:
            part = clusters(sim.opinions, params)
            worst["refines"] = worst["refines"] and part.refines(prev_part)
            prev_part = part
    return worst, sim


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
