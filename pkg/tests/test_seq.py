import numpy as np
import pytest

from dus_sched.errors import (
    BlockIncomplete,
    InvalidDistribution,
    InvalidParams,
    InvalidToken,
    PositionAlreadyRevealed,
    PositionOutsideCurrentBlock,
)
from dus_sched.seq import MASKED, MaskedSequence, Vocab, fresh_sequence, validate_distribution

VOCAB = Vocab(size=5, mask_id=4, eos_id=3)


def test_reveal_two_of_eight():
    seq = fresh_sequence([0, 1], gen_len=8, block_size=8)
    blk = seq.current_block()
    out = seq.reveal({blk.to_absolute(1): 2, blk.to_absolute(5): 0}, VOCAB)
    assert out.cells[blk.start] == 2
    assert out.cells[blk.start + 4] == 0
    assert sum(c is MASKED for c in out.cells) == 6
    assert seq.cells[blk.start] is MASKED  # original untouched


def test_reveal_already_revealed_errors():
    seq = fresh_sequence([0], gen_len=4, block_size=4)
    seq = seq.reveal({1: 2}, VOCAB)
    with pytest.raises(PositionAlreadyRevealed):
        seq.reveal({1: 0}, VOCAB)


def test_reveal_future_block_errors():
    seq = fresh_sequence([0], gen_len=8, block_size=4)
    with pytest.raises(PositionOutsideCurrentBlock):
        seq.reveal({6: 1}, VOCAB)


def test_reveal_prompt_cell_errors():
    seq = fresh_sequence([0, 1], gen_len=4, block_size=4)
    with pytest.raises(PositionOutsideCurrentBlock):
        seq.reveal({0: 1}, VOCAB)


def test_reveal_bad_tokens():
    seq = fresh_sequence([0], gen_len=4, block_size=4)
    with pytest.raises(InvalidToken):
        seq.reveal({1: VOCAB.mask_id}, VOCAB)
    with pytest.raises(InvalidToken):
        seq.reveal({1: 99}, VOCAB)


def test_advance_block():
    seq = fresh_sequence([0], gen_len=4, block_size=2)
    seq = seq.reveal({1: 1, 2: 2}, VOCAB)
    seq = seq.advance_block()
    assert seq.cursor == 1
    partial = seq.reveal({3: 1}, VOCAB)
    with pytest.raises(BlockIncomplete):
        partial.advance_block()
    done = partial.reveal({4: 0}, VOCAB).advance_block()
    assert done.is_complete


def test_ragged_tail_geometry():
    seq = fresh_sequence([9 % 4], gen_len=20, block_size=8)
    assert seq.num_blocks == 3
    assert seq.block(2).length == 4
    assert seq.block(2).start == 1 + 16


def test_semi_ar_and_conservation_random_walk():
    rng = np.random.default_rng(7)
    seq = fresh_sequence([0, 1], gen_len=12, block_size=4)
    revealed_total = 0
    while not seq.is_complete:
        blk = seq.current_block()
        masked = seq.masked_positions(blk)
        take = rng.choice(masked, size=rng.integers(1, len(masked) + 1), replace=False)
        seq = seq.reveal({int(p): int(rng.integers(0, 3)) for p in take}, VOCAB)
        revealed_total += len(take)
        seq.check_semi_ar()
        assert sum(c is not MASKED for c in seq.cells[2:]) == revealed_total
        if not seq.masked_positions(blk):
            seq = seq.advance_block()
            seq.check_semi_ar()


def test_vocab_validation():
    with pytest.raises(InvalidParams):
        Vocab(size=1, mask_id=0)
    with pytest.raises(InvalidParams):
        Vocab(size=4, mask_id=4)
    with pytest.raises(InvalidParams):
        Vocab(size=4, mask_id=0, eos_id=0)
    assert Vocab(size=4, mask_id=3).is_token(0)
    assert not Vocab(size=4, mask_id=3).is_token(3)


def test_validate_distribution():
    good = np.array([0.5, 0.25, 0.25, 0.0, 0.0])
    validate_distribution(VOCAB, good)
    with pytest.raises(InvalidDistribution):
        validate_distribution(VOCAB, np.array([0.5, 0.5, 0.0, 0.0, 0.1]))
    with pytest.raises(InvalidDistribution):
        validate_distribution(VOCAB, np.array([0.7, -0.2, 0.25, 0.25, 0.0]))
    with pytest.raises(InvalidDistribution):
        validate_distribution(VOCAB, np.array([0.5, 0.25, 0.15, 0.0, 0.1]))
    with pytest.raises(InvalidDistribution):
        validate_distribution(VOCAB, np.array([0.5, 0.5]))


def test_prompt_cells_must_be_revealed():
    with pytest.raises(InvalidParams):
        MaskedSequence(cells=(MASKED, MASKED), prompt_len=1, block_size=1)
