"""Closed-form interaction kernels for the density equation.

For a piecewise-constant density written as a combination of Heaviside
steps at grid lines, the time derivative of the density is a sum over
grid-line pairs of two primitive kernels:

* ``I1(x; xi, xj)`` -- the loss-side kernel, the length of the window
  ``[x - delta, x + delta]`` to the right of ``xj``, gated by ``H(x - xi)``.
* ``I2(x; xi, xj)`` -- the gain-side kernel, the length of the set of
  displacements ``u`` in ``[-delta, delta]`` with ``x + w u >= xi`` and
  ``x - (1 - w) u >= xj``.

Both are piecewise linear in ``x`` with at most three case boundaries.
``I1`` splits into 3 cases by the position of ``xi`` relative to
``xj +- delta``; ``I2`` splits into 12 cases by the ordering of the four
boundary values ``m = max((1-w) xi + w xj, xi - w delta)``,
``A = xi + w delta``, ``B = xj - (1-w) delta`` and ``C = xj + (1-w) delta``.
The case tables are transcribed here verbatim as a dispatch over those
orderings, one branch per row, and double-checked against the direct
min/max closed form (which is what the vectorized solver assembly uses).

Four of the twelve ``I2`` orderings (rows 5, 6, 10 and 12) require
``delta <= 0`` or ``w`` outside ``(0,1)`` and therefore can never occur for
valid model parameters; they are retained for completeness and exercised
by direct unit evaluation.  Row 9 of the published table carries a sign
typo in its middle segment (``+ (xi - x)/w`` instead of ``- (xi - x)/w``);
the form used here is the one implied by the defining integral, matching
rows 3 and 7.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agents import ModelParams

# A kernel segment list is a sequence of (lo, hi, value_at_lo, slope) tuples
# covering the ramp region; the kernel is 0 below the first lo and 2*delta
# above the last hi.


def i1_closed(x, xi: float, xj: float, delta: float):
    """Loss kernel, direct closed form."""
    x = np.asarray(x, dtype=float)
    ramp = np.clip(x + delta - xj, 0.0, 2.0 * delta)
    return np.where(x >= xi, ramp, 0.0)


def i2_closed(x, xi: float, xj: float, delta: float, w: float):
    """Gain kernel, direct closed form: the window-overlap length."""
    x = np.asarray(x, dtype=float)
    upper = np.minimum(delta, (x - xj) / (1.0 - w))
    lower = np.maximum(-delta, (xi - x) / w)
    return np.maximum(0.0, upper - lower)


def i1_case(xi: float, xj: float, delta: float) -> int:
    """Row of the 3-case loss table (1-based, in table order)."""
    if xi <= xj - delta:
        return 1
    if xi <= xj + delta:
        return 2
    return 3


def i1_segments(xi: float, xj: float, delta: float):
    """(row, segments) for the loss kernel."""
    row = i1_case(xi, xj, delta)
    if row == 1:
        segs = [(xj - delta, xj + delta, 0.0, 1.0)]
    elif row == 2:
        # jumps from 0 to xi - (xj - delta) at xi, then continues the ramp
        segs = [(xi, xj + delta, xi - (xj - delta), 1.0)]
    else:
        segs = [(xi, xi, 2.0 * delta, 0.0)]  # pure step at xi
    return row, segs


def i2_boundaries(xi: float, xj: float, delta: float, w: float):
    """The four ordering values (m, A, B, C) of the gain table."""
    a = xi + w * delta
    b = xj - (1.0 - w) * delta
    c = xj + (1.0 - w) * delta
    m = max((1.0 - w) * xi + w * xj, xi - w * delta)
    return m, a, b, c


def i2_row(m: float, a: float, b: float, c: float) -> int:
    """Row of the 12-case gain table for the given boundary ordering.

    Rows are tested in table order with non-strict comparisons, so ties
    resolve to the earliest matching row.
    """
    if m <= a <= b <= c:
        return 1
    if a <= m <= b <= c:
        return 2
    if m <= b <= a <= c:
        return 3
    if a <= b <= m <= c:
        return 4
    if m <= b <= c <= a:
        return 5
    if a <= b <= c <= m:
        return 6
    if b <= m <= a <= c:
        return 7
    if b <= a <= m <= c:
        return 8
    if b <= m <= c <= a:
        return 9
    if b <= a <= c <= m:
        return 10
    if b <= c <= m <= a:
        return 11
    if b <= c <= a <= m:
        return 12
    raise ValueError(f"no ordering matches (m={m}, A={a}, B={b}, C={c})")


def i2_chain_rows(m: float, a: float, b: float, c: float) -> list:
    """All rows whose ordering chain holds (several at exact ties)."""
    chains = [
        m <= a <= b <= c, a <= m <= b <= c, m <= b <= a <= c, a <= b <= m <= c,
        m <= b <= c <= a, a <= b <= c <= m, b <= m <= a <= c, b <= a <= m <= c,
        b <= m <= c <= a, b <= a <= c <= m, b <= c <= m <= a, b <= c <= a <= m,
    ]
    return [k + 1 for k, ok in enumerate(chains) if ok]


def i2_segments_for_row(row: int, m: float, a: float, b: float, c: float,
                        xi: float, xj: float, delta: float, w: float):
    """Segment list of the gain table's given row (the table's formulas)."""
    rw = 1.0 / w
    rv = 1.0 / (1.0 - w)

    def ramp2(lo, hi):  # (x - xj)/(1-w) + delta
        return (lo, hi, (lo - xj) * rv + delta, rv)

    def ramp3(lo, hi):  # (x - xj)/(1-w) - (xi - x)/w
        return (lo, hi, (lo - xj) * rv - (xi - lo) * rw, rv + rw)

    def ramp5(lo, hi):  # delta - (xi - x)/w
        return (lo, hi, delta - (xi - lo) * rw, rw)

    if row in (1, 2):
        return [ramp2(b, c)]
    if row == 3:
        return [ramp3(b, a), ramp2(a, c)]
    if row in (4, 8):
        return [ramp2(m, c)]
    if row == 5:
        return [ramp3(b, c), ramp5(c, a)]
    if row in (6, 10, 12):
        return [(m, m, 2.0 * delta, 0.0)]  # step 0 -> 2*delta at m
    if row == 7:
        return [ramp3(m, a), ramp2(a, c)]
    if row == 9:
        # published row shows "+ (xi - x)/w"; the defining integral gives "-"
        return [ramp3(m, c), ramp5(c, a)]
    if row == 11:
        return [ramp5(m, a)]
    raise ValueError(f"row must be 1..12, got {row}")


def i2_segments(xi: float, xj: float, delta: float, w: float):
    """(row, segments) for the gain kernel at a grid-line pair."""
    m, a, b, c = i2_boundaries(xi, xj, delta, w)
    row = i2_row(m, a, b, c)
    return row, i2_segments_for_row(row, m, a, b, c, xi, xj, delta, w)


def eval_segments(x, segments, delta: float):
    """Evaluate a kernel from its segment list (0 before, 2*delta after)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    if not segments:
        return out
    first_lo = segments[0][0]
    last_hi = segments[-1][1]
    out[x >= last_hi] = 2.0 * delta
    for lo, hi, v0, s in segments:
        mask = (x >= lo) & (x < hi)
        out[mask] = v0 + s * (x[mask] - lo)
    out[x < first_lo] = 0.0
    return out


@dataclass(frozen=True)
class DerivativeKernelEntry:
    """Contribution of cell pair (i, j) to the derivative, before weighting.

    The four-term grid-line combinations (i,j) + (i+1,j+1) - (i,j+1) - (i+1,j)
    are stored as signed segment lists for the loss (I1) and gain (I2) sides;
    the pair's contribution to the derivative is
    ``a_i a_j * (2 * eval(i2_terms) - 2 * eval(i1_terms))``.
    """

    i: int
    j: int
    i1_terms: tuple   # ((sign, segments), ...) four entries
    i2_terms: tuple
    i2_rows: tuple    # gain-table row used by each of the four I2 terms

    def eval(self, x, delta: float):
        x = np.asarray(x, dtype=float)
        gain = np.zeros_like(x)
        loss = np.zeros_like(x)
        for (sign, segs) in self.i2_terms:
            gain += sign * eval_segments(x, segs, delta)
        for (sign, segs) in self.i1_terms:
            loss += sign * eval_segments(x, segs, delta)
        return 2.0 * gain - 2.0 * loss


def kernel_entry(i: int, j: int, cell_count: int, params: ModelParams) -> DerivativeKernelEntry:
    """Build the four-term kernel combination for cell pair (i, j), 0-based."""
    lines = np.arange(cell_count + 1) / cell_count
    combo = [(i, j, 1.0), (i + 1, j + 1, 1.0), (i, j + 1, -1.0), (i + 1, j, -1.0)]
    i1_terms = []
    i2_terms = []
    rows = []
    for p, q, sign in combo:
        _, segs1 = i1_segments(float(lines[p]), float(lines[q]), params.delta)
        row, segs2 = i2_segments(float(lines[p]), float(lines[q]), params.delta, params.w)
        i1_terms.append((sign, tuple(segs1)))
        i2_terms.append((sign, tuple(segs2)))
        rows.append(row)
    return DerivativeKernelEntry(i=i, j=j, i1_terms=tuple(i1_terms),
                                 i2_terms=tuple(i2_terms), i2_rows=tuple(rows))


def gain_event_arrays(lines: np.ndarray, jumps: np.ndarray, delta: float, w: float):
    """Kink events of the total gain term, vectorized over grid-line pairs.

    The gain term is ``2 sum_{p,q} c_p c_q I2(x; x_p, x_q)`` where ``c`` are
    the level jumps of the density at the grid lines.  Each pair's kernel is
    continuous and piecewise linear, hence fully described by slope changes
    (kinks) at its case boundaries: onset at max(m, B), an intermediate
    change at min(A, C) and saturation at max(A, C).  Zero-jump lines are
    skipped; worst case this emits 3 * (#nonzero jumps)^2 events.
    """
    nz = np.nonzero(jumps)[0]
    if nz.size == 0:
        return np.empty(0), np.empty(0)
    xl = lines[nz]
    cl = jumps[nz]
    xi = xl[:, None]
    xj = xl[None, :]
    wgt = 2.0 * cl[:, None] * cl[None, :]
    a = xi + w * delta
    b = xj - (1.0 - w) * delta
    c = xj + (1.0 - w) * delta
    m = np.maximum((1.0 - w) * xi + w * xj, xi - w * delta)
    s0 = np.maximum(m, b)
    s1 = np.maximum(a, c)
    t1 = np.clip(np.minimum(a, c), s0, s1)
    sf = 1.0 / w + 1.0 / (1.0 - w)
    sl = np.where(a <= c, 1.0 / (1.0 - w), 1.0 / w)
    pos = np.concatenate([s0.ravel(), t1.ravel(), s1.ravel()])
    kink = np.concatenate([(wgt * sf).ravel(), (wgt * (sl - sf)).ravel(), (-wgt * sl).ravel()])
    keep = pos < 1.0  # events at or beyond 1 cannot influence [0, 1]
    return pos[keep], kink[keep]
