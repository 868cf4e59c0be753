"""Index-selection strategies for block decoding.

Pure functions implement each selection rule; thin driver classes wrap them
with per-block state so the decode loop can treat every strategy uniformly.
Scores are per-position reals where higher means "reveal sooner"; ties break
toward the lowest position index so every run is reproducible.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import EmptyInput, InvalidGapParam, InvalidParams, StepOutOfRange
from .schedule import DusParams, Schedule, apply_skip, dus_schedule, group_sizes
from .seq import MASKED, BlockView, MaskedSequence


class ScoreKind(str, Enum):
    MAX_PROB = "max_prob"
    NEG_ENTROPY = "neg_entropy"


@dataclass(frozen=True)
class PlannerDecision:
    """Positions to reveal now, positions pushed to a later step, and the
    scores that drove the choice (recorded in traces)."""

    unmask: Tuple[int, ...]
    deferred: Tuple[int, ...]
    scores_used: Dict[int, float]


def _entropy_nats(probs: np.ndarray) -> float:
    p = probs[probs > 0]
    return float(-(p * np.log(p)).sum())


def position_scores(
    dists: Mapping[int, np.ndarray], kind: ScoreKind = ScoreKind.MAX_PROB
) -> Dict[int, float]:
    if kind is ScoreKind.MAX_PROB:
        return {p: float(np.max(d)) for p, d in dists.items()}
    return {p: -_entropy_nats(np.asarray(d)) for p, d in dists.items()}


def _ranked(scores: Mapping[int, float]) -> List[int]:
    return sorted(scores, key=lambda p: (-scores[p], p))


def _decision(unmask: Iterable[int], deferred: Iterable[int], scores: Dict[int, float]) -> PlannerDecision:
    return PlannerDecision(
        unmask=tuple(sorted(unmask)), deferred=tuple(sorted(deferred)), scores_used=dict(scores)
    )


# -- pure selection rules -----------------------------------------------------


def plan_confidence(
    dists: Mapping[int, np.ndarray], k: int, kind: ScoreKind = ScoreKind.MAX_PROB
) -> PlannerDecision:
    """Top-k positions by score; fewer if fewer are masked."""
    if not dists:
        raise EmptyInput("no masked positions to plan over")
    if k < 1:
        raise InvalidParams("k must be >= 1")
    scores = position_scores(dists, kind)
    order = _ranked(scores)
    take = order[: min(k, len(order))]
    return _decision(take, order[len(take):], scores)


def plan_confidence_incremental(
    dists: Mapping[int, np.ndarray],
    sizes: Sequence[int],
    step_index: int,
    kind: ScoreKind = ScoreKind.MAX_PROB,
) -> PlannerDecision:
    """Top-k with k taken from a dilated group-size ladder."""
    if not 0 <= step_index < len(sizes):
        raise StepOutOfRange(f"step {step_index} outside 0..{len(sizes) - 1}")
    return plan_confidence(dists, sizes[step_index], kind)


def plan_random(masked: Iterable[int], k: int, rng_seed: int) -> PlannerDecision:
    """Uniform sample without replacement; deterministic given the seed.

    Recorded scores are selection priorities (1 for picked first, down to
    1/n), which gives downstream filters a meaningful ordering.
    """
    pool = sorted(set(masked))
    if not pool:
        raise EmptyInput("no masked positions to plan over")
    if k < 1:
        raise InvalidParams("k must be >= 1")
    rng = np.random.default_rng(rng_seed)
    perm = [pool[i] for i in rng.permutation(len(pool))]
    n = len(perm)
    scores = {p: (n - rank) / n for rank, p in enumerate(perm)}
    take = perm[: min(k, n)]
    return _decision(take, perm[len(take):], scores)


def plan_eb(
    dists: Mapping[int, np.ndarray], gamma: float, unit: str = "nats"
) -> PlannerDecision:
    """Largest ascending-entropy prefix with cumulative entropy <= gamma.

    The first (lowest-entropy) position is always taken so the step makes
    progress even with gamma = 0.
    """
    if not dists:
        raise EmptyInput("no masked positions to plan over")
    if gamma < 0:
        raise InvalidParams("entropy bound must be >= 0")
    if unit not in ("nats", "bits"):
        raise InvalidParams(f"unknown entropy unit {unit!r}")
    scale = 1.0 if unit == "nats" else 1.0 / math.log(2.0)
    ent = {p: _entropy_nats(np.asarray(d)) * scale for p, d in dists.items()}
    order = sorted(ent, key=lambda p: (ent[p], p))
    take: List[int] = []
    total = 0.0
    for p in order:
        if not take:
            take.append(p)
            total = ent[p]
            continue
        if total + ent[p] <= gamma:
            take.append(p)
            total += ent[p]
        else:
            break
    scores = {p: -ent[p] for p in ent}
    return _decision(take, [p for p in order if p not in set(take)], scores)


def plan_cb(dists: Mapping[int, np.ndarray], tau: float) -> PlannerDecision:
    """Every position whose max-probability clears tau; best single one if none do."""
    if not dists:
        raise EmptyInput("no masked positions to plan over")
    if not 0 < tau <= 1:
        raise InvalidParams("confidence threshold must lie in (0, 1]")
    conf = position_scores(dists, ScoreKind.MAX_PROB)
    take = [p for p in conf if conf[p] >= tau]
    if not take:
        take = [_ranked(conf)[0]]
    return _decision(take, set(conf) - set(take), conf)


def spacing_post_filter(
    candidates: Sequence[int],
    unmasked_count: int,
    block_len: int,
    g0: int,
) -> Tuple[Set[int], Set[int]]:
    """Keep candidates at least ``gap`` apart, scanning best-scored first.

    ``candidates`` must already be sorted by score descending.  The gap starts
    at ``g0`` on a fully masked block and shrinks proportionally to the count
    of still-masked positions, reaching 1 (no filtering) as the block fills.
    """
    if g0 < 1:
        raise InvalidGapParam("initial gap must be >= 1")
    if block_len < 1 or not 0 <= unmasked_count <= block_len:
        raise InvalidGapParam("unmasked count outside block")
    remaining = block_len - unmasked_count
    gap = max(1, remaining * g0 // block_len)
    accepted: List[int] = []
    rejected: Set[int] = set()
    for pos in candidates:
        if not accepted or min(abs(pos - q) for q in accepted) >= gap:
            accepted.append(pos)
        else:
            rejected.add(pos)
    return set(accepted), rejected


# -- drivers for the decode loop -----------------------------------------------

def _masked_in_block(seq: MaskedSequence, block: BlockView) -> List[int]:
    return [p for p in block.positions() if seq.cells[p] is MASKED]


def _tail_params(params: DusParams, block_len: int) -> DusParams:
    """Schedule parameters for a (possibly shorter) block: a ragged tail may
    support fewer dilation levels than the nominal block size, so the start
    level is clamped to what the tail allows."""
    if block_len == params.block_len:
        return params
    base_skip = min(params.base_skip, DusParams(block_len, params.base).rounds)
    return DusParams(block_len, params.base, base_skip,
                     params.skip_threshold, params.skip_round_cap)


class Planner:
    """Stateful wrapper: one instance drives one generation."""

    name = "base"

    def begin_block(self, block: BlockView, seq: MaskedSequence) -> None:
        pass

    def plan(
        self,
        dists: Mapping[int, np.ndarray],
        seq: MaskedSequence,
        block: BlockView,
        round_index: int,
    ) -> PlannerDecision:
        raise NotImplementedError

    def nominal_rounds(self, block_len: int) -> int:
        raise NotImplementedError


class ConfidencePlanner(Planner):
    """Fixed top-k self-confidence planner; k defaults to round(log2 B)."""

    def __init__(self, k: Optional[int] = None, kind: ScoreKind = ScoreKind.MAX_PROB):
        if k is not None and k < 1:
            raise InvalidParams("k must be >= 1")
        self.k = k
        self.kind = kind
        self.name = "conf-fixed"

    def _k_for(self, block_len: int) -> int:
        if self.k is not None:
            return self.k
        return max(1, round(math.log2(block_len))) if block_len > 1 else 1

    def plan(self, dists, seq, block, round_index):
        return plan_confidence(dists, self._k_for(block.length), self.kind)

    def nominal_rounds(self, block_len: int) -> int:
        return math.ceil(block_len / self._k_for(block_len))


class IncrementalConfidencePlanner(Planner):
    """Top-k with the dilated group-size ladder (small early, large late)."""

    def __init__(self, params: DusParams, kind: ScoreKind = ScoreKind.MAX_PROB):
        self.params = params
        self.kind = kind
        self.name = "conf-inc"
        self._sizes: List[int] = []

    def _sizes_for(self, block_len: int) -> List[int]:
        return group_sizes(_tail_params(self.params, block_len))

    def begin_block(self, block, seq):
        self._sizes = self._sizes_for(block.length)

    def plan(self, dists, seq, block, round_index):
        idx = min(round_index, len(self._sizes) - 1)
        return plan_confidence_incremental(dists, self._sizes, idx, self.kind)

    def nominal_rounds(self, block_len: int) -> int:
        return len(self._sizes_for(block_len))


class RandomPlanner(Planner):
    """Seeded uniform selection, fixed-k or dilated-incremental."""

    def __init__(
        self,
        seed: int,
        k: Optional[int] = None,
        incremental: bool = False,
        params: Optional[DusParams] = None,
    ):
        self.seed = seed
        self.k = k
        self.incremental = incremental
        self.params = params or DusParams(block_len=1)
        self.name = "random-inc" if incremental else "random-fixed"
        self._sizes: List[int] = []
        self._block_index = 0

    def _k_fixed(self, block_len: int) -> int:
        if self.k is not None:
            return self.k
        return max(1, round(math.log2(block_len))) if block_len > 1 else 1

    def begin_block(self, block, seq):
        self._block_index = block.index
        if self.incremental:
            self._sizes = group_sizes(_tail_params(self.params, block.length))

    def plan(self, dists, seq, block, round_index):
        masked = _masked_in_block(seq, block)
        if self.incremental:
            k = self._sizes[min(round_index, len(self._sizes) - 1)]
        else:
            k = self._k_fixed(block.length)
        child = np.random.SeedSequence([self.seed, self._block_index, round_index])
        return plan_random(masked, k, child.generate_state(1)[0])

    def nominal_rounds(self, block_len: int) -> int:
        if self.incremental:
            return len(group_sizes(_tail_params(self.params, block_len)))
        return math.ceil(block_len / self._k_fixed(block_len))


class EbPlanner(Planner):
    def __init__(self, gamma: float, unit: str = "nats"):
        if gamma < 0:
            raise InvalidParams("entropy bound must be >= 0")
        self.gamma = gamma
        self.unit = unit
        self.name = "eb"

    def plan(self, dists, seq, block, round_index):
        return plan_eb(dists, self.gamma, self.unit)

    def nominal_rounds(self, block_len: int) -> int:
        return block_len  # adaptive; worst case is token-by-token


class CbPlanner(Planner):
    def __init__(self, tau: float):
        if not 0 < tau <= 1:
            raise InvalidParams("confidence threshold must lie in (0, 1]")
        self.tau = tau
        self.name = "cb"

    def plan(self, dists, seq, block, round_index):
        return plan_cb(dists, self.tau)

    def nominal_rounds(self, block_len: int) -> int:
        return block_len


class DusPlanner(Planner):
    """Deterministic dilated schedule, optionally with confidence skip.

    Due positions are derived from the sequence itself (everything scheduled
    up to the current round that is still masked), so deferrals from skip or
    a downstream spacing filter re-enter later rounds without shared state.
    Once the skip-round budget is spent every remaining position is forced.
    """

    def __init__(self, params: DusParams):
        self.params = params
        self.name = "dus"
        self._schedule: Optional[Schedule] = None

    def begin_block(self, block, seq):
        self._schedule = dus_schedule(_tail_params(self.params, block.length))

    def plan(self, dists, seq, block, round_index):
        sched = self._schedule
        assert sched is not None, "begin_block not called"
        groups = sched.groups
        due_local: Set[int] = set()
        for g in groups[: min(round_index + 1, len(groups))]:
            due_local.update(g)
        due = {block.to_absolute(k) for k in due_local}
        due = {p for p in due if seq.cells[p] is MASKED}
        scores = position_scores(dists, ScoreKind.MAX_PROB)
        extra_rounds = round_index - (len(groups) - 1)
        params = _tail_params(self.params, block.length)
        if params.skip_threshold > 0 and extra_rounds < params.effective_skip_round_cap:
            now, deferred = apply_skip(due, {p: scores[p] for p in due}, params.skip_threshold)
        else:
            now, deferred = due, set()
        return _decision(now, deferred, scores)

    def nominal_rounds(self, block_len: int) -> int:
        return len(dus_schedule(_tail_params(self.params, block_len)).groups)


class SpacingFilterPlanner(Planner):
    """Wraps any planner with the dilated spacing post-filter."""

    def __init__(self, base: Planner, g0: int):
        if g0 < 1:
            raise InvalidGapParam("initial gap must be >= 1")
        self.base = base
        self.g0 = g0
        self.name = f"{base.name}+spacing"

    def begin_block(self, block, seq):
        self.base.begin_block(block, seq)

    def plan(self, dists, seq, block, round_index):
        decision = self.base.plan(dists, seq, block, round_index)
        scores = decision.scores_used
        candidates = sorted(decision.unmask, key=lambda p: (-scores.get(p, 0.0), p))
        unmasked_count = block.length - len(_masked_in_block(seq, block))
        accepted, rejected = spacing_post_filter(candidates, unmasked_count, block.length, self.g0)
        deferred = set(decision.deferred) | rejected
        return _decision(accepted, deferred, scores)

    def nominal_rounds(self, block_len: int) -> int:
        return self.base.nominal_rounds(block_len)


_SPEC_RE = re.compile(r"^(?P<base>[a-z-]+)(\+spacing:g0=(?P<g0>\d+))?$")


def make_planner(
    spec: str,
    *,
    seed: int = 0,
    k: Optional[int] = None,
    gamma: float = 1.0,
    tau: float = 0.9,
    dus: Optional[DusParams] = None,
    score_kind: ScoreKind = ScoreKind.MAX_PROB,
) -> Planner:
    """Build a planner from its config string, e.g. ``dus`` or ``cb+spacing:g0=8``."""
    m = _SPEC_RE.match(spec.strip())
    if not m:
        raise InvalidParams(f"bad planner spec {spec!r}")
    name = m.group("base")
    params = dus or DusParams(block_len=1)
    if name == "dus":
        planner: Planner = DusPlanner(params)
    elif name == "conf-fixed":
        planner = ConfidencePlanner(k, score_kind)
    elif name == "conf-inc":
        planner = IncrementalConfidencePlanner(params, score_kind)
    elif name == "random-fixed":
        planner = RandomPlanner(seed, k, incremental=False, params=params)
    elif name == "random-inc":
        planner = RandomPlanner(seed, k, incremental=True, params=params)
    elif name == "eb":
        planner = EbPlanner(gamma)
    elif name == "cb":
        planner = CbPlanner(tau)
    else:
        raise InvalidParams(f"unknown planner {name!r}")
    if m.group("g0"):
        planner = SpacingFilterPlanner(planner, int(m.group("g0")))
    return planner
