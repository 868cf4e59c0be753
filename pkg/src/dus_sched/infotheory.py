"""Exact entropies, entropy gaps, and decay-of-dependence probes.

Everything here reduces to marginalizations of an exact joint conditional
table produced by the chain oracle, so quantities agree to float precision
with brute-force enumeration.  All values are in nats unless a ``unit``
argument says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidDistribution, InvalidParams, NotAPartition
from .seq import MASKED, MaskedSequence
from .vlmc import VlmcModel, joint_table

LN2 = math.log(2.0)


def _h(table: np.ndarray) -> float:
    """Entropy of a normalized probability array, 0 log 0 = 0."""
    p = np.asarray(table, dtype=np.float64).ravel()
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def entropy(probs: Sequence[float], unit: str = "nats") -> float:
    """Shannon entropy of one categorical distribution."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InvalidDistribution("need a 1-d probability vector")
    if np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-9:
        raise InvalidDistribution("entries must be non-negative and sum to 1")
    if unit == "nats":
        return _h(p)
    if unit == "bits":
        return _h(p) / LN2
    raise InvalidParams(f"unknown unit {unit!r}")


def joint_entropy_exact(model: VlmcModel, seq: MaskedSequence, positions: Sequence[int]) -> float:
    """Exact H of the joint conditional over masked positions given the state."""
    return _h(joint_table(model, seq.cells, positions))


@dataclass(frozen=True)
class EntropyReport:
    """Sum of per-position conditional entropies vs the joint, and their gap."""

    sum_marginals: float
    joint: float
    gap: float
    per_position: Dict[int, float]


def entropy_gap(model: VlmcModel, seq: MaskedSequence, positions: Sequence[int]) -> EntropyReport:
    pos = sorted(positions)
    table = joint_table(model, seq.cells, pos)
    per = {p: _h(table.sum(axis=tuple(j for j in range(len(pos)) if j != i)))
           for i, p in enumerate(pos)}
    joint = _h(table)
    total = float(sum(per.values()))
    return EntropyReport(sum_marginals=total, joint=joint, gap=total - joint, per_position=per)


# -- parallel-decode bounds ------------------------------------------------------


@dataclass(frozen=True)
class SandwichReport:
    """Joint <= staged parallel surrogate <= sum of marginals, all in nats."""

    joint: float
    surrogate: float
    sum_marginals: float
    per_group: Tuple[float, ...]

    def holds(self, tol: float = 1e-9) -> bool:
        return (self.joint <= self.surrogate + tol) and (
            self.surrogate <= self.sum_marginals + tol
        )


def verify_parallel_bounds(
    model: VlmcModel, seq: MaskedSequence, partition: Sequence[Iterable[int]]
) -> SandwichReport:
    """Exact three-way comparison for one block partition.

    The middle term is the total loss of revealing each group in parallel
    after all earlier groups are in context: sum over groups of
    sum_{i in group} H(X_i | X_{earlier groups}, state), the expectation over
    earlier reveals being exact by definition of conditional entropy.
    """
    block = seq.current_block()
    masked = seq.masked_positions(block)
    groups = [sorted(set(int(p) for p in g)) for g in partition]
    flat = [p for g in groups for p in g]
    if len(flat) != len(set(flat)) or set(flat) != set(masked) or any(not g for g in groups):
        raise NotAPartition("groups must be disjoint, nonempty, and cover the masked block")

    pos = sorted(masked)
    axis_of = {p: i for i, p in enumerate(pos)}
    table = joint_table(model, seq.cells, pos)

    def h_of(subset: Sequence[int]) -> float:
        if not subset:
            return 0.0
        keep = sorted(axis_of[p] for p in subset)
        drop = tuple(ax for ax in range(table.ndim) if ax not in keep)
        return _h(table.sum(axis=drop) if drop else table)

    joint = _h(table)
    sum_marginals = float(sum(h_of([p]) for p in pos))

    surrogate = 0.0
    per_group: List[float] = []
    earlier: List[int] = []
    for g in groups:
        h_prior = h_of(earlier)
        term = sum(h_of(earlier + [i]) - h_prior for i in g)
        per_group.append(term)
        surrogate += term
        earlier.extend(g)
    return SandwichReport(
        joint=joint,
        surrogate=surrogate,
        sum_marginals=sum_marginals,
        per_group=tuple(per_group),
    )


# -- spacing threshold probe -------------------------------------------------------


@dataclass(frozen=True)
class SpacingGapRow:
    spacing: int
    max_gap: float
    argmax_offsets: Tuple[int, ...]


@dataclass(frozen=True)
class SpacingGapReport:
    group_size: int
    rows: Tuple[SpacingGapRow, ...]
    d_epsilon: Dict[float, Optional[int]]

    def monotone(self, slack: float = 1e-10) -> bool:
        gaps = [r.max_gap for r in self.rows]
        return all(b <= a + slack for a, b in zip(gaps, gaps[1:]))


def spacing_gap_decay(
    model: VlmcModel,
    group_size: int,
    d_values: Sequence[int],
    epsilons: Sequence[float] = (1e-6,),
    offset_slack: int = 2,
) -> SpacingGapReport:
    """Worst entropy gap of ``group_size`` fresh positions pairwise >= d apart.

    Placements are offset vectors with consecutive distances in
    ``[d, d + offset_slack]``; stationarity makes the gap a function of the
    offsets only, and dependence decays with distance, so the tight placement
    realizes the maximum (the slack placements are probed as a check).
    Reports, per requested epsilon, the first probed spacing whose worst gap
    falls below it.
    """
    if group_size < 2:
        raise InvalidParams("group size must be >= 2")
    ds = sorted(set(int(d) for d in d_values))
    if not ds or ds[0] < 1:
        raise InvalidParams("spacings must be positive")

    rows: List[SpacingGapRow] = []
    for d in ds:
        best = -math.inf
        best_offsets: Tuple[int, ...] = ()
        for offsets in _offset_vectors(group_size - 1, d, d + offset_slack):
            span = sum(offsets) + 1
            cells = (MASKED,) * span
            positions = np.cumsum((0,) + offsets).tolist()
            table = joint_table(model, cells, positions)
            per = [
                _h(table.sum(axis=tuple(j for j in range(table.ndim) if j != i)))
                for i in range(table.ndim)
            ]
            gap = float(sum(per) - _h(table))
            if gap > best:
                best = gap
                best_offsets = offsets
        rows.append(SpacingGapRow(spacing=d, max_gap=best, argmax_offsets=best_offsets))

    d_eps: Dict[float, Optional[int]] = {}
    for eps in epsilons:
        d_eps[eps] = next((r.spacing for r in rows if r.max_gap <= eps), None)
    return SpacingGapReport(group_size=group_size, rows=tuple(rows), d_epsilon=d_eps)


def _offset_vectors(n: int, lo: int, hi: int) -> Iterable[Tuple[int, ...]]:
    if n == 0:
        yield ()
        return
    for first in range(lo, hi + 1):
        for rest in _offset_vectors(n - 1, lo, hi):
            yield (first,) + rest


# -- mutual-information decay --------------------------------------------------------


@dataclass(frozen=True)
class MiDecayCurve:
    """Exact MI against a sparse future block, per spacing, plus fits.

    ``fitted_rho`` is the dependence-amplitude rate exp(slope/2) from the
    least-squares fit of log MI against spacing: MI between weakly coupled
    variables scales with the square of their correlation, so the amplitude
    rate is the square root of the MI ratio.  ``c_chain`` is the smallest
    constant making MI(d) <= c_chain * rho_chain**d hold over the probed
    range, with ``rho_chain`` the context chain's second eigenvalue modulus.
    """

    spacings: Tuple[int, ...]
    mi_values: Tuple[float, ...]
    fitted_rho: float
    fitted_c: float
    rho_chain: float
    c_chain: float

    def monotone(self, slack: float = 1e-10) -> bool:
        return all(b <= a + slack for a, b in zip(self.mi_values, self.mi_values[1:]))

    def bound_holds(self, slack: float = 1e-12) -> bool:
        return all(
            mi <= self.c_chain * self.rho_chain ** d + slack
            for d, mi in zip(self.spacings, self.mi_values)
        )


def mi_decay(
    model: VlmcModel,
    d_values: Sequence[int],
    future_count: int = 1,
    fit_floor: float = 1e-12,
) -> MiDecayCurve:
    """I(X_0 ; X_d, X_2d, ..., X_{future_count * d}) per spacing d.

    Computed on a fresh all-masked window, i.e. under the stationary law.
    Values below ``fit_floor`` are clamped to zero and excluded from the fit.
    """
    if future_count < 1:
        raise InvalidParams("need at least one future position")
    ds = sorted(set(int(d) for d in d_values))
    if not ds or ds[0] < 1:
        raise InvalidParams("spacings must be positive")

    mis: List[float] = []
    for d in ds:
        positions = [j * d for j in range(future_count + 1)]
        cells = (MASKED,) * (positions[-1] + 1)
        table = joint_table(model, cells, positions)
        h_all = _h(table)
        h_first = _h(table.sum(axis=tuple(range(1, table.ndim))))
        h_future = _h(table.sum(axis=0))
        mi = h_first + h_future - h_all
        if mi < 0:
            if mi < -1e-12:
                raise InvalidParams(f"negative MI {mi} signals a numerical problem")
            mi = 0.0
        mis.append(mi if mi > fit_floor else 0.0)

    pts = [(d, mi) for d, mi in zip(ds, mis) if mi > fit_floor]
    if len(pts) >= 2:
        xs = np.array([p[0] for p in pts], dtype=np.float64)
        ys = np.log(np.array([p[1] for p in pts], dtype=np.float64))
        slope, intercept = np.polyfit(xs, ys, 1)
        fitted_rho = float(math.exp(slope / 2.0))
        fitted_c = float(math.exp(intercept))
    else:
        fitted_rho = 0.0
        fitted_c = 0.0

    rho_chain = model.second_eigenvalue_modulus()
    ratios = [mi / rho_chain ** d for d, mi in zip(ds, mis) if mi > 0 and rho_chain > 0]
    c_chain = float(max(ratios)) if ratios else 0.0
    return MiDecayCurve(
        spacings=tuple(ds),
        mi_values=tuple(mis),
        fitted_rho=fitted_rho,
        fitted_c=fitted_c,
        rho_chain=rho_chain,
        c_chain=c_chain,
    )


def binary_entropy(p: float) -> float:
    """H(p) in nats; convenience for two-state closed forms."""
    if not 0 <= p <= 1:
        raise InvalidParams("probability outside [0, 1]")
    out = 0.0
    for q in (p, 1 - p):
        if q > 0:
            out -= q * math.log(q)
    return out


def flip_chain_pair_mi(p: float, d: int) -> float:
    """Closed-form I(X_0; X_d) of the symmetric flip-p chain.

    The d-step flip probability is (1 - (1-2p)^d) / 2, so the MI is
    ln 2 - H(flip_d).
    """
    lam = 1.0 - 2.0 * p
    flip_d = (1.0 - lam ** d) / 2.0
    return LN2 - binary_entropy(flip_d)
