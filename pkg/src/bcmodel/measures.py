"""Probability measures on [0,1]: piecewise-constant densities and empirical measures.

Two concrete measure representations are used throughout the package:

* :class:`PiecewiseConstantDensity` -- a density on a uniform grid of ``I``
  cells, the state of the kinetic solver.
* :class:`EmpiricalMeasure` -- ``N`` equally weighted atoms, the occupancy
  measure of the finite agent system.

Both expose exact moments and exact CDF evaluation, which makes the
Kolmogorov and Wasserstein-1 distances between any two of them computable
in closed form (their CDFs are piecewise linear / step functions, so the
sup and the integral are attained on the merged breakpoint set).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

MASS_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PiecewiseConstantDensity:
    """Density taking the constant value ``levels[i]`` on cell [i/I, (i+1)/I)."""

    levels: np.ndarray

    def __post_init__(self):
        levels = _readonly(self.levels)
        object.__setattr__(self, "levels", levels)
        if levels.ndim != 1 or levels.size < 1:
            raise ValueError("levels must be a non-empty 1-D array")
        if not np.all(np.isfinite(levels)):
            raise ValueError("levels must be finite")
        if np.any(levels < 0):
            raise ValueError(f"negative level at cell {int(np.argmin(levels))}")
        mass = levels.mean()  # (1/I) * sum(levels)
        if abs(mass - 1.0) > MASS_TOL:
            raise ValueError(f"density mass {mass!r} deviates from 1 by more than {MASS_TOL}")

    @property
    def cell_count(self) -> int:
        return self.levels.size

    @property
    def cell_width(self) -> float:
        return 1.0 / self.levels.size

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.levels.size + 1) / self.levels.size

    def cell_masses(self) -> np.ndarray:
        return self.levels / self.levels.size

    def cdf_at_edges(self) -> np.ndarray:
        """CDF values at the I+1 grid edges (piecewise linear in between)."""
        cdf = np.concatenate(([0.0], np.cumsum(self.cell_masses())))
        cdf[-1] = 1.0 if abs(cdf[-1] - 1.0) <= 1e-9 else cdf[-1]
        return cdf

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.interp(np.clip(x, 0.0, 1.0), self.edges, self.cdf_at_edges())

    def breakpoints(self) -> np.ndarray:
        return self.edges

    def value_at(self, x) -> np.ndarray:
        """Density value, right-continuous; the last cell is closed at 1."""
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.floor(x * self.cell_count).astype(int), 0, self.cell_count - 1)
        out = self.levels[idx]
        return np.where((x < 0) | (x > 1), 0.0, out)

    def raw_moment(self, n: int) -> float:
        e = self.edges
        return float(np.sum(self.levels * (e[1:] ** (n + 1) - e[:-1] ** (n + 1))) / (n + 1))

    def is_symmetric(self, tol: float = 1e-10) -> bool:
        return bool(np.max(np.abs(self.levels - self.levels[::-1])) <= tol)

    def to_csv(self, path) -> None:
        e = self.edges
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x_left", "x_right", "level"])
            for i, lev in enumerate(self.levels):
                wr.writerow([repr(float(e[i])), repr(float(e[i + 1])), repr(float(lev))])

    @classmethod
    def from_csv(cls, path) -> "PiecewiseConstantDensity":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"empty density file {path}")
        levels = np.array([float(r["level"]) for r in rows])
        lefts = np.array([float(r["x_left"]) for r in rows])
        rights = np.array([float(r["x_right"]) for r in rows])
        I = len(levels)
        expect = np.arange(I + 1) / I
        if not (np.allclose(lefts, expect[:-1], atol=1e-9) and np.allclose(rights, expect[1:], atol=1e-9)):
            raise ValueError(f"{path}: cells are not a uniform partition of [0,1]")
        return cls(levels)


@dataclass(frozen=True)
class EmpiricalMeasure:
    """N atoms in [0,1], each with weight 1/N."""

    atoms: np.ndarray
    _sorted: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        atoms = _readonly(self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if atoms.ndim != 1 or atoms.size < 1:
            raise ValueError("atoms must be a non-empty 1-D array")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atoms must be finite")
        if np.any((atoms < 0) | (atoms > 1)):
            raise ValueError("atoms must lie in [0,1]")
        object.__setattr__(self, "_sorted", _readonly(np.sort(atoms)))

    @property
    def size(self) -> int:
        return self.atoms.size

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.searchsorted(self._sorted, x, side="right") / self.size

    def cdf_left(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.searchsorted(self._sorted, x, side="left") / self.size

    def breakpoints(self) -> np.ndarray:
        return np.unique(self._sorted)

    def raw_moment(self, n: int) -> float:
        # summed over the sorted atoms so the value is permutation-invariant
        return float(np.mean(self._sorted ** n))

    def to_csv(self, path, header: str = "atom") -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([header])
            for a in self.atoms:
                wr.writerow([repr(float(a))])

    @classmethod
    def from_csv(cls, path) -> "EmpiricalMeasure":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        vals = [float(r[0]) for r in rows[1:] if r]
        return cls(np.array(vals))


Measure = PiecewiseConstantDensity | EmpiricalMeasure


@dataclass(frozen=True)
class PiecewiseLinearFunction:
    """A function on [0,1] that is affine between consecutive breakpoints.

    ``breakpoints`` has length ``k+1`` with first element 0 and last element 1;
    segment ``j`` covers [breakpoints[j], breakpoints[j+1]) and equals
    ``values_left[j] + slopes[j] * (x - breakpoints[j])``.  Jump discontinuities
    at breakpoints are allowed (the left segment's right endpoint need not
    match the next segment's ``values_left``).
    """

    breakpoints: np.ndarray
    values_left: np.ndarray
    slopes: np.ndarray

    def __post_init__(self):
        bp = _readonly(self.breakpoints)
        vl = _readonly(self.values_left)
        sl = _readonly(self.slopes)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values_left", vl)
        object.__setattr__(self, "slopes", sl)
        if bp.ndim != 1 or bp.size < 2:
            raise ValueError("need at least two breakpoints")
        if vl.size != bp.size - 1 or sl.size != bp.size - 1:
            raise ValueError("values_left and slopes must have one entry per segment")
        if bp[0] != 0.0 or bp[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if not (np.all(np.isfinite(vl)) and np.all(np.isfinite(sl))):
            raise ValueError("non-finite segment data")

    def __call__(self, x) -> np.ndarray:
        """Evaluate (right-continuous at interior breakpoints)."""
        x = np.asarray(x, dtype=float)
        j = np.clip(np.searchsorted(self.breakpoints, x, side="right") - 1, 0, self.slopes.size - 1)
        return self.values_left[j] + self.slopes[j] * (x - self.breakpoints[j])

    def segment_right_values(self) -> np.ndarray:
        return self.values_left + self.slopes * np.diff(self.breakpoints)

    def integral(self) -> float:
        return float(np.sum(0.5 * (self.values_left + self.segment_right_values()) * np.diff(self.breakpoints)))

    def first_moment(self) -> float:
        a, b = self.breakpoints[:-1], self.breakpoints[1:]
        va, vb = self.values_left, self.segment_right_values()
        return float(np.sum((b - a) * (va * (2 * a + b) + vb * (a + 2 * b)) / 6.0))

    def sup_norm(self) -> float:
        return float(max(np.max(np.abs(self.values_left)), np.max(np.abs(self.segment_right_values()))))


@dataclass(frozen=True)
class MomentSummary:
    mean: float
    raw_moments: tuple  # (mu_2, ..., mu_max_order)
    std_dev: float
    ess_inf: float
    ess_sup: float

    @property
    def mu2(self) -> float:
        return self.raw_moments[0]


def moments(measure: Measure, max_order: int = 2) -> MomentSummary:
    """Exact moments, standard deviation, and essential support bounds."""
    if max_order < 2:
        raise ValueError("max_order must be >= 2")
    mu1 = measure.raw_moment(1)
    raws = tuple(measure.raw_moment(n) for n in range(2, max_order + 1))
    var = raws[0] - mu1 * mu1
    sigma = float(np.sqrt(max(var, 0.0)))
    if isinstance(measure, EmpiricalMeasure):
        ess_inf = float(measure._sorted[0])
        ess_sup = float(measure._sorted[-1])
    else:
        pos = np.nonzero(measure.levels > 0)[0]
        if pos.size == 0:  # unreachable for a valid density, kept for safety
            ess_inf = ess_sup = 0.0
        else:
            ess_inf = float(pos[0] / measure.cell_count)
            ess_sup = float((pos[-1] + 1) / measure.cell_count)
    return MomentSummary(mean=float(mu1), raw_moments=raws, std_dev=sigma,
                         ess_inf=ess_inf, ess_sup=ess_sup)


def _cdf_pair_on_breakpoints(a: Measure, b: Measure):
    """Merged breakpoints plus right-limit and left-limit CDF values there."""
    pts = np.unique(np.concatenate([a.breakpoints(), b.breakpoints(), [0.0, 1.0]]))
    right = (a.cdf(pts), b.cdf(pts))
    left = (
        a.cdf_left(pts) if isinstance(a, EmpiricalMeasure) else right[0],
        b.cdf_left(pts) if isinstance(b, EmpiricalMeasure) else right[1],
    )
    return pts, right, left


def kolmogorov_distance(a: Measure, b: Measure) -> float:
    """sup_x |F_a(x) - F_b(x)|, exact for the represented measure classes."""
    _, (ra, rb), (la, lb) = _cdf_pair_on_breakpoints(a, b)
    return float(max(np.max(np.abs(ra - rb)), np.max(np.abs(la - lb))))


def wasserstein1_distance(a: Measure, b: Measure) -> float:
    """integral of |F_a - F_b| over [0,1], exact piecewise integration."""
    pts, (ra, rb), (la, lb) = _cdf_pair_on_breakpoints(a, b)
    # On each open interval the difference is affine from (right values at the
    # left end) to (left limits at the right end); atoms only move the CDF at
    # the endpoints themselves, a null set for the integral.
    v0 = ra[:-1] - rb[:-1]
    v1 = la[1:] - lb[1:]
    widths = np.diff(pts)
    same_sign = v0 * v1 >= 0
    contrib = np.where(
        same_sign,
        0.5 * (np.abs(v0) + np.abs(v1)) * widths,
        # sign change: split at the root of the affine segment
        0.5 * widths * (v0 * v0 + v1 * v1) / np.maximum(np.abs(v1 - v0), 1e-300),
    )
    return float(np.sum(contrib))


# ---------------------------------------------------------------------------
# Standard initial conditions
# ---------------------------------------------------------------------------

def uniform_density(cell_count: int) -> PiecewiseConstantDensity:
    return PiecewiseConstantDensity(np.ones(cell_count))


def beta_density(a: float, b: float, cell_count: int) -> PiecewiseConstantDensity:
    """Beta(a, b) discretized by exact cell averages of the density."""
    if a <= 0 or b <= 0:
        raise ValueError("beta parameters must be positive")
    edges = np.arange(cell_count + 1) / cell_count
    cdf = betainc(a, b, edges)
    levels = np.diff(cdf) * cell_count
    levels = np.maximum(levels, 0.0)
    return PiecewiseConstantDensity(levels / levels.mean())


def blocks_density(blocks, cell_count: int) -> PiecewiseConstantDensity:
    """Density made of uniform blocks, each {'center', 'mass', 'width'}.

    A block is uniform on [center - width/2, center + width/2] clipped to
    [0,1]; its full mass is kept on the clipped interval.  Partial overlap
    with a cell contributes proportionally, so block edges need not align
    with the grid.
    """
    levels = np.zeros(cell_count)
    edges = np.arange(cell_count + 1) / cell_count
    total = 0.0
    for blk in blocks:
        c, m, wd = float(blk["center"]), float(blk["mass"]), float(blk["width"])
        if m < 0 or wd <= 0:
            raise ValueError("block mass must be >= 0 and width > 0")
        lo = max(0.0, c - wd / 2.0)
        hi = min(1.0, c + wd / 2.0)
        if hi <= lo:
            raise ValueError(f"block at {c} lies outside [0,1]")
        total += m
        dens = m / (hi - lo)
        overlap = np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo)
        levels += dens * np.maximum(overlap, 0.0) * cell_count
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"block masses sum to {total}, expected 1")
    return PiecewiseConstantDensity(levels / levels.mean())


def extremists_density(alpha: float, cell_count: int) -> PiecewiseConstantDensity:
    """Extremists at 0 and 1 (mass (1-alpha)/2 each) and undecided at 1/2.

    Each group occupies one grid cell; for an even cell count the undecided
    mass is split over the two cells adjacent to 1/2 so the profile stays
    exactly symmetric.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0,1]")
    I = cell_count
    levels = np.zeros(I)
    side = (1.0 - alpha) / 2.0
    levels[0] += side * I
    levels[-1] += side * I
    if I % 2 == 1:
        levels[I // 2] += alpha * I
    else:
        levels[I // 2 - 1] += alpha * I / 2.0
        levels[I // 2] += alpha * I / 2.0
    return PiecewiseConstantDensity(levels / levels.mean())


def sample_from_density(density: PiecewiseConstantDensity, n: int,
                        rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. samples by exact inverse-CDF (the CDF is piecewise linear)."""
    u = rng.random(n)
    masses = density.cell_masses()
    cum = np.cumsum(masses)
    cum[-1] = max(cum[-1], 1.0)  # guard rounding so searchsorted stays in range
    cells = np.searchsorted(cum, u, side="left")
    prev = np.concatenate(([0.0], cum))[cells]
    frac = (u - prev) / np.maximum(masses[cells], 1e-300)
    x = (cells + np.clip(frac, 0.0, 1.0)) / density.cell_count
    return np.clip(x, 0.0, 1.0)


def density_to_json(density: PiecewiseConstantDensity) -> dict:
    return {"cell_count": int(density.cell_count), "levels": [float(v) for v in density.levels]}


def empirical_to_json(measure: EmpiricalMeasure) -> dict:
    return {"size": int(measure.size), "atoms": [float(v) for v in measure.atoms]}


def density_csv_text(density: PiecewiseConstantDensity) -> str:
    buf = io.StringIO()
    e = density.edges
    wr = csv.writer(buf)
    wr.writerow(["x_left", "x_right", "level"])
    for i, lev in enumerate(density.levels):
        wr.writerow([repr(float(e[i])), repr(float(e[i + 1])), repr(float(lev))])
    return buf.getvalue()
