"""Finite-N stochastic opinion dynamics.

At every step two distinct peers are drawn uniformly at random; if their
opinions differ by at most the deviation threshold they move toward each
other in barycentric fashion, otherwise nothing happens.  Two clocks are
provided: the plain discrete-time chain, and the Poisson-clock variant in
which successive events are separated by i.i.d. exponential waiting times
of mean 1/N (so each peer is affected at rate 2).  Both share the same
pair-event code path, so their embedded jump chains coincide by
construction.

All randomness flows through a single ``numpy`` PCG64 generator per
simulation; seed sweeps should derive child seeds with
``numpy.random.SeedSequence(seed).spawn(k)`` so that streams are
independent and reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .measures import EmpiricalMeasure, MomentSummary, moments

DEFAULT_FREEZE_TOL = 1e-9


@dataclass(frozen=True)
class ModelParams:
    """Global dynamics constants: deviation threshold and confidence factor."""

    delta: float
    w: float

    def __post_init__(self):
        if not (0.0 < self.delta <= 1.0):
            raise ValueError(f"delta must be in (0,1], got {self.delta}")
        if not (0.0 < self.w < 1.0):
            raise ValueError(f"w must be in (0,1), got {self.w}")


@dataclass(frozen=True)
class OpinionState:
    """Snapshot of the microstate; resumable via the stored generator state."""

    opinions: np.ndarray
    step_count: int = 0
    poisson_time: float = 0.0
    rng_seed: int = 0
    bit_state: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        ops = np.ascontiguousarray(np.asarray(self.opinions, dtype=float))
        ops.flags.writeable = False
        object.__setattr__(self, "opinions", ops)
        if ops.size < 2:
            raise ValueError("need at least two peers")
        if np.any((ops < 0) | (ops > 1)) or not np.all(np.isfinite(ops)):
            raise ValueError("opinions must lie in [0,1]")

    @property
    def size(self) -> int:
        return self.opinions.size

    def empirical(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.opinions)


def initial_state(opinions, seed: int = 0) -> OpinionState:
    return OpinionState(opinions=np.asarray(opinions, dtype=float), rng_seed=int(seed))


def interact(x: float, y: float, params: ModelParams) -> tuple[float, float]:
    """One pairwise update: no-op beyond the threshold, else mutual averaging.

    The update is written as x' = y + w(x-y), y' = x - w(x-y); this keeps both
    outputs inside [min(x,y), max(x,y)] in floating point and makes equal
    inputs an exact fixed point.
    """
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise ValueError("opinions must lie in [0,1]")
    d = x - y
    if abs(d) > params.delta:
        return x, y
    s = params.w * d
    return y + s, x - s


class Simulation:
    """Mutable engine for one trajectory; strictly sequential."""

    def __init__(self, opinions, params: ModelParams, seed: int = 0):
        self.params = params
        self.opinions = np.array(opinions, dtype=float)
        if self.opinions.size < 2:
            raise ValueError("need at least two peers")
        if np.any((self.opinions < 0) | (self.opinions > 1)):
            raise ValueError("opinions must lie in [0,1]")
        self.n = self.opinions.size
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.step_count = 0
        self.poisson_time = 0.0
        self._pair_high = np.array([self.n, self.n - 1], dtype=np.int64)

    @classmethod
    def from_state(cls, state: OpinionState, params: ModelParams) -> "Simulation":
        sim = cls(state.opinions, params, seed=state.rng_seed)
        sim.step_count = state.step_count
        sim.poisson_time = state.poisson_time
        if state.bit_state is not None:
            sim.rng.bit_generator.state = state.bit_state
        return sim

    def snapshot(self) -> OpinionState:
        return OpinionState(
            opinions=self.opinions.copy(),
            step_count=self.step_count,
            poisson_time=self.poisson_time,
            rng_seed=self.seed,
            bit_state=self.rng.bit_generator.state,
        )

    def _draw_pair(self) -> tuple[int, int]:
        ij = self.rng.integers(0, self._pair_high)
        i = int(ij[0])
        j = int(ij[1])
        if j >= i:
            j += 1
        return i, j

    def _apply_pair(self, i: int, j: int) -> bool:
        ops = self.opinions
        x, y = ops[i], ops[j]
        d = x - y
        if abs(d) > self.params.delta:
            return False
        s = self.params.w * d
        ops[i] = y + s
        ops[j] = x - s
        return True

    def step(self) -> tuple[int, int, bool]:
        i, j = self._draw_pair()
        fired = self._apply_pair(i, j)
        self.step_count += 1
        return i, j, fired

    def step_poisson(self) -> tuple[int, int, bool]:
        self.poisson_time += self.rng.exponential(1.0 / self.n)
        return self.step()

    def run_steps(self, n_steps: int) -> None:
        for _ in range(n_steps):
            self.step()

    def run_until_time(self, t_end: float) -> None:
        """Poisson clock: process events until the clock passes t_end."""
        n = self.n
        scale = 1.0 / n
        while True:
            dt = self.rng.exponential(scale)
            if self.poisson_time + dt > t_end:
                self.poisson_time = t_end
                return
            self.poisson_time += dt
            self.step()


def step_discrete(state: OpinionState, params: ModelParams) -> OpinionState:
    """One event of the discrete-time chain, as a pure state transition."""
    sim = Simulation.from_state(state, params)
    sim.step()
    return sim.snapshot()


def step_auxiliary(state: OpinionState, params: ModelParams) -> OpinionState:
    """One event of the Poisson-clock variant: Exp(mean 1/N) wait, then a pair event."""
    sim = Simulation.from_state(state, params)
    sim.step_poisson()
    return sim.snapshot()


@dataclass(frozen=True)
class ClusterPartition:
    """Maximal groups of peers chained together by pairwise gaps <= delta."""

    blocks: tuple            # tuple of index arrays (into the opinion vector)
    ranges: tuple            # per block, (min opinion, max opinion)

    @property
    def count(self) -> int:
        return len(self.blocks)

    def diameters(self) -> np.ndarray:
        return np.array([hi - lo for lo, hi in self.ranges])

    def labels(self, n: int) -> np.ndarray:
        lab = np.empty(n, dtype=int)
        for b, idx in enumerate(self.blocks):
            lab[idx] = b
        return lab

    def refines(self, earlier: "ClusterPartition") -> bool:
        """True if every block here is contained in a single earlier block."""
        n = sum(len(b) for b in self.blocks)
        lab = earlier.labels(n)
        return all(np.unique(lab[idx]).size == 1 for idx in self.blocks)


def clusters(state: OpinionState | np.ndarray, params: ModelParams) -> ClusterPartition:
    """Cluster partition; in one dimension the graph components are runs of
    sorted opinions with consecutive gaps <= delta."""
    ops = state.opinions if isinstance(state, OpinionState) else np.asarray(state, dtype=float)
    order = np.argsort(ops, kind="stable")
    svals = ops[order]
    cut = np.nonzero(np.diff(svals) > params.delta)[0] + 1
    pieces = np.split(order, cut)
    blocks = tuple(np.sort(p) for p in pieces)
    ranges = tuple((float(ops[p].min()), float(ops[p].max())) for p in pieces)
    return ClusterPartition(blocks=blocks, ranges=ranges)


def variance_drop_check(before: OpinionState, after: OpinionState,
                        pair: tuple[int, int], params: ModelParams) -> float:
    """|measured variance drop - (2w(1-w)/N)(x_i - x_j)^2| for one event.

    Raises if the designated pair did not actually interact (outside the
    threshold, or other coordinates changed).
    """
    i, j = pair
    xb, yb = before.opinions[i], before.opinions[j]
    if abs(xb - yb) > params.delta:
        raise ValueError(f"pair ({i},{j}) is beyond delta; no interaction occurred")
    others = np.ones(before.size, dtype=bool)
    others[[i, j]] = False
    if not np.array_equal(before.opinions[others], after.opinions[others]):
        raise ValueError("coordinates outside the pair changed between states")
    expect_i, expect_j = interact(float(xb), float(yb), params)
    if not (np.isclose(after.opinions[i], expect_i, atol=1e-12)
            and np.isclose(after.opinions[j], expect_j, atol=1e-12)):
        raise ValueError("after-state is not one interacting step on the pair")

    def var(v):
        m = v.mean()
        return float(v @ v) / v.size - m * m

    measured = var(before.opinions) - var(after.opinions)
    n = before.size
    predicted = (2.0 * params.w * (1.0 - params.w) / n) * (xb - yb) ** 2
    return abs(measured - predicted)


@dataclass
class TrajectoryRecord:
    """Sampled time series of the trajectory's summary statistics."""

    steps: list = field(default_factory=list)
    times: list = field(default_factory=list)
    moments: list = field(default_factory=list)      # MomentSummary per sample
    n_clusters: list = field(default_factory=list)
    variance_drop: list = field(default_factory=list)  # sigma^2(0) - sigma^2(k)

    def append(self, step: int, time: float, summary: MomentSummary,
               n_clusters: int, var_drop: float) -> None:
        self.steps.append(int(step))
        self.times.append(float(time))
        self.moments.append(summary)
        self.n_clusters.append(int(n_clusters))
        self.variance_drop.append(float(var_drop))

    def rows(self):
        for k in range(len(self.steps)):
            m = self.moments[k]
            yield {
                "step": self.steps[k],
                "time": self.times[k],
                "mu1": m.mean,
                "mu2": m.mu2,
                "sigma": m.std_dev,
                "ess_inf": m.ess_inf,
                "ess_sup": m.ess_sup,
                "n_clusters": self.n_clusters[k],
            }

    def to_csv(self, path) -> None:
        import csv as _csv
        with open(path, "w", newline="") as fh:
            wr = _csv.writer(fh)
            wr.writerow(["step", "time", "mu1", "mu2", "sigma", "ess_inf", "ess_sup", "n_clusters"])
            for r in self.rows():
                wr.writerow([r["step"], repr(r["time"]), repr(r["mu1"]), repr(r["mu2"]),
                             repr(r["sigma"]), repr(r["ess_inf"]), repr(r["ess_sup"]), r["n_clusters"]])


def run_until_frozen(state: OpinionState, params: ModelParams,
                     max_steps: int, freeze_window: int = 1000,
                     freeze_tol: float = DEFAULT_FREEZE_TOL,
                     poisson: bool = False):
    """Run until every cluster has collapsed (diameter < freeze_tol) or max_steps.

    The freeze criterion is evaluated every ``freeze_window`` steps: all
    cluster diameters below ``freeze_tol`` and all inter-cluster gaps above
    delta (the latter holds by cluster maximality, but is checked anyway).
    Returns (final state, trajectory record, consensus report).
    """
    from .analysis import classify_agents  # local import to avoid a cycle

    if max_steps < 1 or freeze_window < 1:
        raise ValueError("max_steps and freeze_window must be >= 1")
    sim = Simulation.from_state(state, params)
    record = TrajectoryRecord()
    sigma2_0 = None

    def sample():
        nonlocal sigma2_0
        summ = moments(sim.snapshot().empirical(), max_order=2)
        part = clusters(sim.opinions, params)
        s2 = summ.mu2 - summ.mean ** 2
        if sigma2_0 is None:
            sigma2_0 = s2
        record.append(sim.step_count, sim.poisson_time, summ, part.count, sigma2_0 - s2)
        return part

    part = sample()
    frozen = _is_frozen(part, params, freeze_tol)
    steps_done = 0
    while not frozen and steps_done < max_steps:
        burst = min(freeze_window, max_steps - steps_done)
        if poisson:
            for _ in range(burst):
                sim.step_poisson()
        else:
            sim.run_steps(burst)
        steps_done += burst
        part = sample()
        frozen = _is_frozen(part, params, freeze_tol)

    final = sim.snapshot()
    report = classify_agents(final, params, freeze_tol=freeze_tol)
    if not frozen:
        report = report.with_classification("unresolved")
    report = report.with_run_info(steps=final.step_count, frozen=frozen)
    return final, record, report


def _is_frozen(part: ClusterPartition, params: ModelParams, freeze_tol: float) -> bool:
    if np.any(part.diameters() >= freeze_tol):
        return False
    lows = np.array([lo for lo, _ in part.ranges])
    highs = np.array([hi for _, hi in part.ranges])
    order = np.argsort(lows)
    gaps = lows[order][1:] - highs[order][:-1]
    return bool(np.all(gaps > params.delta))
