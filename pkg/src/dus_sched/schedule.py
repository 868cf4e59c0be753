"""Dilated unmasking schedules.

A block of ``B`` positions is revealed coarse-to-fine: round ``t`` uses step
size ``s_t = floor(B / a**t)`` and picks every not-yet-scheduled position
``k`` (1-based) with ``(k - 1) % s_t == 0``.  Round count is
``R = ceil(log_a B)``; if the final round would be smaller than the one
before it, the two are merged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Set, Tuple

from .errors import InvalidParams, MissingScore


@dataclass(frozen=True)
class DusParams:
    """Knobs of the dilated schedule.

    ``base_skip`` starts the schedule at a later (finer) level; ``skip_threshold``
    enables the confidence-skip variant (0 disables it).  ``skip_round_cap``
    bounds the extra rounds skip may add per block; ``None`` means ``4 * R``.
    """

    block_len: int
    base: float = 2.0
    base_skip: int = 1
    skip_threshold: float = 0.0
    skip_round_cap: int | None = None

    def __post_init__(self) -> None:
        if self.block_len < 1:
            raise InvalidParams(f"block length must be >= 1, got {self.block_len}")
        if not self.base > 1:
            raise InvalidParams(f"dilation base must be > 1, got {self.base}")
        r = num_rounds(self.block_len, self.base)
        if not 1 <= self.base_skip <= r:
            raise InvalidParams(
                f"base_skip {self.base_skip} outside 1..{r} for B={self.block_len}"
            )
        if not 0 <= self.skip_threshold < 1:
            raise InvalidParams("skip threshold must lie in [0, 1)")
        if self.skip_round_cap is not None and self.skip_round_cap < 0:
            raise InvalidParams("skip_round_cap must be >= 0")

    @property
    def rounds(self) -> int:
        return num_rounds(self.block_len, self.base)

    @property
    def effective_skip_round_cap(self) -> int:
        return 4 * self.rounds if self.skip_round_cap is None else self.skip_round_cap


@dataclass(frozen=True)
class Schedule:
    """Ordered disjoint groups of 1-based local positions covering ``1..B``."""

    block_len: int
    groups: Tuple[Tuple[int, ...], ...]
    step_sizes: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.groups)

    def group_sets(self) -> List[Set[int]]:
        return [set(g) for g in self.groups]


def num_rounds(block_len: int, base: float) -> int:
    """Smallest integer r >= 1 with base**r >= block_len (i.e. ceil(log_a B))."""
    if block_len <= 1:
        return 1
    r = max(1, math.ceil(math.log(block_len) / math.log(base)))
    # float log can land one off on exact powers; settle it with exact compares
    while r > 1 and base ** (r - 1) >= block_len:
        r -= 1
    while base ** r < block_len:
        r += 1
    return r


def dus_schedule(params: DusParams) -> Schedule:
    """Build the dilated schedule for one block.

    Step sizes are clamped to at least 1 (the raw formula reaches 0 for
    non-power bases); once a round runs at step 1 it absorbs every remaining
    position and iteration stops.  Empty rounds (repeated step sizes after
    clamping) are skipped.
    """
    b = params.block_len
    r = params.rounds
    groups: List[Tuple[int, ...]] = []
    steps: List[int] = []
    scheduled: Set[int] = set()
    for t in range(params.base_skip, r + 1):
        s_t = max(1, math.floor(b / params.base ** t))
        group = tuple(
            k for k in range(1, b + 1) if k not in scheduled and (k - 1) % s_t == 0
        )
        if group:
            groups.append(group)
            steps.append(s_t)
            scheduled.update(group)
        if s_t == 1:
            break
    if len(groups) >= 2 and len(groups[-1]) < len(groups[-2]):
        merged = tuple(sorted(groups[-2] + groups[-1]))
        groups = groups[:-2] + [merged]
        steps = steps[:-1]
    return Schedule(block_len=b, groups=tuple(groups), step_sizes=tuple(steps))


def group_sizes(params: DusParams) -> List[int]:
    """Sizes |I_1|..|I_R| of the schedule; they sum to the block length."""
    return [len(g) for g in dus_schedule(params).groups]


def apply_skip(
    scheduled: Set[int],
    scores: Dict[int, float],
    threshold: float,
) -> Tuple[Set[int], Set[int]]:
    """Split a scheduled set into (unmask now, defer) by confidence.

    Positions scoring below ``threshold`` are deferred to the next round.
    If everything falls below, the single best-scoring position (lowest index
    on ties) is forced through so each round makes progress.
    """
    if not 0 <= threshold < 1:
        raise InvalidParams("skip threshold must lie in [0, 1)")
    missing = [p for p in scheduled if p not in scores]
    if missing:
        raise MissingScore(f"no score for positions {sorted(missing)}")
    now = {p for p in scheduled if scores[p] >= threshold}
    if not now and scheduled:
        best = min(scheduled, key=lambda p: (-scores[p], p))
        now = {best}
    return now, set(scheduled) - now
