"""Masked sequence state for block-wise decoding.

A sequence is a row of cells, each either revealed (holding a token id) or
still masked.  Generation proceeds block by block: the cursor points at the
block currently being filled, everything left of it is complete, everything
right of it is untouched.  Masked cells are stored as ``None`` so that a
revealed cell can never silently turn back into a masked one.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    BlockIncomplete,
    InvalidDistribution,
    InvalidParams,
    InvalidToken,
    PositionAlreadyRevealed,
    PositionOutsideCurrentBlock,
)

MASKED = None  # cell variant for a not-yet-revealed position

Cell = Optional[int]


@dataclass(frozen=True)
class Vocab:
    """Token id space: ``size`` ids, one of which is the mask sentinel."""

    size: int
    mask_id: int
    eos_id: Optional[int] = None

    def __post_init__(self) -> None:
        if self.size < 2:
            raise InvalidParams(f"vocab size must be >= 2, got {self.size}")
        if not 0 <= self.mask_id < self.size:
            raise InvalidParams(f"mask_id {self.mask_id} outside [0, {self.size})")
        if self.eos_id is not None:
            if not 0 <= self.eos_id < self.size:
                raise InvalidParams(f"eos_id {self.eos_id} outside [0, {self.size})")
            if self.eos_id == self.mask_id:
                raise InvalidParams("eos_id must differ from mask_id")

    def is_token(self, tok: int) -> bool:
        """True for sampleable token ids (mask sentinel excluded)."""
        return 0 <= tok < self.size and tok != self.mask_id


def validate_distribution(vocab: Vocab, probs: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Check a categorical distribution over the vocab; returns it as float64.

    Entries must be non-negative, sum to 1 within ``tol``, and assign zero
    to the mask sentinel.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (vocab.size,):
        raise InvalidDistribution(f"expected {vocab.size} probabilities, got shape {p.shape}")
    if np.any(p < 0):
        raise InvalidDistribution("negative probability entry")
    s = float(p.sum())
    if abs(s - 1.0) > tol:
        raise InvalidDistribution(f"probabilities sum to {s}, not 1")
    if p[vocab.mask_id] != 0.0:
        raise InvalidDistribution("mask sentinel has nonzero probability")
    return p


@dataclass(frozen=True)
class BlockView:
    """Absolute-index window of one block: ``[start, start + length)``."""

    index: int
    start: int
    length: int

    def to_absolute(self, local: int) -> int:
        """Map a 1-based local position to its absolute index."""
        if not 1 <= local <= self.length:
            raise InvalidParams(f"local position {local} outside 1..{self.length}")
        return self.start + local - 1

    def positions(self) -> range:
        return range(self.start, self.start + self.length)


@dataclass(frozen=True)
class MaskedSequence:
    """Immutable decode state: prompt, generation cells, block cursor.

    ``cells`` covers the whole sequence (prompt included).  Reveal operations
    return a new instance; the old state stays valid, which makes snapshots
    and replay trivially safe.
    """

    cells: Tuple[Cell, ...]
    prompt_len: int
    block_size: int
    cursor: int = 0

    def __post_init__(self) -> None:
        if self.block_size < 1:
            raise InvalidParams("block_size must be >= 1")
        if not 0 <= self.prompt_len <= len(self.cells):
            raise InvalidParams("prompt_len outside sequence")
        if any(c is MASKED for c in self.cells[: self.prompt_len]):
            raise InvalidParams("prompt cells must all be revealed")
        if not 0 <= self.cursor <= self.num_blocks:
            raise InvalidParams("cursor outside block range")

    # -- geometry ------------------------------------------------------------

    @property
    def gen_len(self) -> int:
        return len(self.cells) - self.prompt_len

    @property
    def num_blocks(self) -> int:
        g, b = self.gen_len, self.block_size
        return (g + b - 1) // b

    def block(self, index: int) -> BlockView:
        if not 0 <= index < self.num_blocks:
            raise InvalidParams(f"block index {index} outside 0..{self.num_blocks - 1}")
        start = self.prompt_len + index * self.block_size
        length = min(self.block_size, len(self.cells) - start)
        return BlockView(index=index, start=start, length=length)

    def current_block(self) -> BlockView:
        return self.block(self.cursor)

    @property
    def is_complete(self) -> bool:
        return self.cursor >= self.num_blocks

    # -- queries ---------------------------------------------------------------

    def masked_positions(self, block: Optional[BlockView] = None) -> list[int]:
        rng = block.positions() if block is not None else range(len(self.cells))
        return [i for i in rng if self.cells[i] is MASKED]

    def revealed_count(self, block: BlockView) -> int:
        return sum(1 for i in block.positions() if self.cells[i] is not MASKED)

    def tokens(self) -> Tuple[Cell, ...]:
        return self.cells

    # -- transitions -----------------------------------------------------------

    def reveal(self, tokens: Mapping[int, int], vocab: Vocab) -> "MaskedSequence":
        """Reveal the given ``{position: token}`` cells inside the current block."""
        if self.is_complete:
            raise PositionOutsideCurrentBlock("generation already complete")
        blk = self.current_block()
        in_block = set(blk.positions())
        for pos, tok in tokens.items():
            if pos not in in_block:
                raise PositionOutsideCurrentBlock(
                    f"position {pos} not in current block [{blk.start}, {blk.start + blk.length})"
                )
            if self.cells[pos] is not MASKED:
                raise PositionAlreadyRevealed(f"position {pos} already revealed")
            if not vocab.is_token(tok):
                raise InvalidToken(f"token {tok} not sampleable")
        cells = list(self.cells)
        for pos, tok in tokens.items():
            cells[pos] = int(tok)
        return replace(self, cells=tuple(cells))

    def advance_block(self) -> "MaskedSequence":
        """Move the cursor past a fully revealed block."""
        blk = self.current_block()
        missing = [i for i in blk.positions() if self.cells[i] is MASKED]
        if missing:
            raise BlockIncomplete(f"block {blk.index} still has masked cells {missing}")
        return replace(self, cursor=self.cursor + 1)

    # -- invariant checks (used by tests) ---------------------------------------

    def check_semi_ar(self) -> None:
        """Blocks left of the cursor fully revealed, right of it fully masked."""
        for b in range(self.num_blocks):
            blk = self.block(b)
            vals = [self.cells[i] for i in blk.positions()]
            if b < self.cursor and any(v is MASKED for v in vals):
                raise AssertionError(f"completed block {b} has masked cells")
            if b > self.cursor and any(v is not MASKED for v in vals):
                raise AssertionError(f"future block {b} has revealed cells")


def fresh_sequence(prompt: Sequence[int], gen_len: int, block_size: int) -> MaskedSequence:
    """All-masked generation region appended to a revealed prompt."""
    if gen_len < 1:
        raise InvalidParams("gen_len must be >= 1")
    cells: Tuple[Cell, ...] = tuple(int(t) for t in prompt) + (MASKED,) * gen_len
    return MaskedSequence(cells=cells, prompt_len=len(prompt), block_size=block_size)
