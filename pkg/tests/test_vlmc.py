import itertools
import json
import math

import numpy as np
import pytest
from scipy import stats

from dus_sched.errors import (
    EnumerationTooLarge,
    InvalidModel,
    InvalidParams,
    PositionNotMasked,
)
from dus_sched.infotheory import entropy
from dus_sched.seq import MASKED, MaskedSequence
from dus_sched.vlmc import (
    VlmcModel,
    batch_conditionals,
    exact_conditional,
    flip_chain,
    forward_mask,
    iid_chain,
    joint_table,
    random_model,
    sample_sequence,
    stationary_distribution,
)

from _brute import (
    brute_conditional,
    brute_joint_table,
    stationary_by_linear_solve,
)


def masked_seq(cells, prompt_len=0):
    gen = len(cells) - prompt_len
    return MaskedSequence(cells=tuple(cells), prompt_len=prompt_len, block_size=gen)


# -- conditionals --------------------------------------------------------------


def test_left_neighbor_single_row():
    m = flip_chain(0.1)
    seq = masked_seq((0, MASKED, MASKED), prompt_len=1)
    np.testing.assert_allclose(exact_conditional(m, seq, 1), [0.9, 0.1], atol=1e-15)


def test_right_neighbor_by_bayes():
    m = flip_chain(0.1)
    seq = masked_seq((MASKED, MASKED, 0))
    np.testing.assert_allclose(exact_conditional(m, seq, 1), [0.9, 0.1], atol=1e-14)
    np.testing.assert_allclose(
        exact_conditional(m, seq, 1), brute_conditional(m, seq.cells, 1), atol=1e-14
    )


def test_iid_conditioning_is_irrelevant():
    m = iid_chain([0.1, 0.2, 0.3, 0.4])
    seq = masked_seq((3, MASKED, 0, MASKED, 1), prompt_len=1)
    for pos in (1, 3):
        np.testing.assert_allclose(exact_conditional(m, seq, pos), [0.1, 0.2, 0.3, 0.4], atol=1e-15)


@pytest.mark.parametrize("trial", range(12))
def test_conditional_matches_brute_enumeration(trial):
    rng = np.random.default_rng(1000 + trial)
    k = int(rng.integers(2, 4))
    order = int(rng.integers(1, 3))
    m = random_model(rng, k, order)
    n = int(rng.integers(order + 2, 9))
    cells = [int(rng.integers(0, k)) if rng.random() < 0.5 else MASKED for _ in range(n)]
    if all(c is MASKED for c in cells):
        cells[0] = 0
    masked = [i for i, c in enumerate(cells) if c is MASKED]
    if not masked:
        cells[-1] = MASKED
        masked = [len(cells) - 1]
    seq = masked_seq(cells)
    for pos in masked:
        got = exact_conditional(m, seq, pos)
        want = brute_conditional(m, cells, pos)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_joint_table_matches_brute():
    rng = np.random.default_rng(5)
    m = random_model(rng, 3, 2)
    cells = (0, MASKED, MASKED, 2, MASKED, MASKED)
    got = joint_table(m, cells, [1, 2, 4])
    want = brute_joint_table(m, cells, [1, 2, 4])
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_batch_equals_per_position():
    rng = np.random.default_rng(17)
    m = random_model(rng, 2, 2)
    cells = (1, 0, MASKED, MASKED, 1, MASKED, MASKED, MASKED)
    seq = masked_seq(cells, prompt_len=2)
    batch = batch_conditionals(m, cells, [2, 3, 5, 6, 7])
    for pos, vec in batch.items():
        np.testing.assert_allclose(vec, exact_conditional(m, seq, pos), atol=1e-12)


def test_marginal_consistency_all_pairs_length6():
    # summing the exact pair joint over one variable reproduces the other's
    # conditional, for every 2-masked configuration of a length-6 sequence
    rng = np.random.default_rng(3)
    m = random_model(rng, 2, 1)
    base = [0, 1, 1, 0, 1, 0]
    for i, j in itertools.combinations(range(6), 2):
        cells = list(base)
        cells[i] = MASKED
        cells[j] = MASKED
        table = joint_table(m, tuple(cells), [i, j])
        np.testing.assert_allclose(
            table.sum(axis=1), joint_table(m, tuple(cells), [i]), atol=1e-12
        )
        np.testing.assert_allclose(
            table.sum(axis=0), joint_table(m, tuple(cells), [j]), atol=1e-12
        )


def test_conditioning_reduces_entropy_in_expectation():
    rng = np.random.default_rng(11)
    m = random_model(rng, 3, 1)
    cells = (0, MASKED, MASKED, MASKED, 1, MASKED)
    table = joint_table(m, cells, [1, 3])  # axes: X1, X3
    h_unconditional = entropy(table.sum(axis=0))
    margin = table.sum(axis=1)
    h_cond = 0.0
    for v, w in enumerate(margin):
        cond = table[v] / table[v].sum()
        h_cond += float(w) * entropy(cond)
    assert h_cond <= h_unconditional + 1e-9


def test_position_not_masked():
    m = flip_chain(0.2)
    seq = masked_seq((0, MASKED), prompt_len=1)
    with pytest.raises(PositionNotMasked):
        exact_conditional(m, seq, 0)


def test_enumeration_guard():
    m = iid_chain([0.25] * 4)
    cells = (MASKED,) * 14
    with pytest.raises(EnumerationTooLarge):
        joint_table(m, cells, list(range(14)))  # 4**14 states > guard


# -- stationary ----------------------------------------------------------------


def test_stationary_symmetric():
    np.testing.assert_allclose(stationary_distribution(flip_chain(0.3)), [0.5, 0.5], atol=1e-11)


def test_stationary_asymmetric_vs_linear_solve():
    m = VlmcModel(2, 1, np.array([[0.9, 0.1], [0.2, 0.8]]))
    np.testing.assert_allclose(m.stationary, [2 / 3, 1 / 3], atol=1e-10)
    np.testing.assert_allclose(
        m.stationary, stationary_by_linear_solve(m._step_any), atol=1e-9
    )


def test_stationary_iid_is_the_row():
    m = iid_chain([0.2, 0.3, 0.5])
    np.testing.assert_allclose(m.stationary, [0.2, 0.3, 0.5], atol=1e-11)


def test_second_eigenvalue_of_flip_chain():
    assert abs(flip_chain(0.1).second_eigenvalue_modulus() - 0.8) < 1e-12


# -- construction checks ----------------------------------------------------------


def test_deterministic_chain_rejected():
    # one-hot rows make the context chain periodic; construction must refuse
    with pytest.raises(InvalidModel):
        VlmcModel(2, 1, np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_reducible_chain_rejected():
    with pytest.raises(InvalidModel):
        VlmcModel(2, 1, np.array([[1.0, 0.0], [0.5, 0.5]]))


def test_bad_rows_rejected():
    with pytest.raises(InvalidModel):
        VlmcModel(2, 1, np.array([[0.9, 0.2], [0.5, 0.5]]))
    with pytest.raises(InvalidModel):
        VlmcModel(2, 1, np.array([[1.1, -0.1], [0.5, 0.5]]))


# -- sampling ------------------------------------------------------------------------


def test_sample_snapshot():
    got = list(sample_sequence(flip_chain(0.2), 16, rng_seed=123))
    assert got == [1, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1]


def test_sample_iid_uniform_frequencies():
    m = iid_chain([0.25] * 4)
    toks = sample_sequence(m, 100_000, rng_seed=7)
    counts = np.bincount(toks, minlength=4)
    sigma = math.sqrt(100_000 * 0.25 * 0.75)
    assert np.all(np.abs(counts - 25_000) < 3 * sigma)


def test_sample_length_validation():
    with pytest.raises(InvalidParams):
        sample_sequence(random_model(np.random.default_rng(0), 2, 2), 1, 0)


def test_long_run_context_frequencies_chi2():
    m = VlmcModel(2, 1, np.array([[0.7, 0.3], [0.4, 0.6]]))
    toks = sample_sequence(m, 100_000, rng_seed=21)
    # stride the samples so neighbouring draws are nearly independent
    sub = toks[::8]
    counts = np.bincount(sub, minlength=2)
    expected = m.stationary * len(sub)
    _, p = stats.chisquare(counts, expected)
    assert p > 0.01


# -- forward masking -------------------------------------------------------------------


def test_forward_mask_identity_and_full():
    toks = [0, 1, 0, 1, 1, 0]
    s0 = forward_mask(toks, 0.0, rng_seed=5, prompt_len=2)
    assert s0.cells == tuple(toks)
    s1 = forward_mask(toks, 1.0, rng_seed=5, prompt_len=2)
    assert s1.cells[:2] == (0, 1)
    assert all(c is MASKED for c in s1.cells[2:])


def test_forward_mask_binomial_count():
    toks = [0] * 10_000
    s = forward_mask(toks, 0.5, rng_seed=9)
    masked = sum(c is MASKED for c in s.cells)
    sigma = math.sqrt(10_000 * 0.25)
    assert abs(masked - 5000) < 3 * sigma


def test_forward_mask_prompt_untouched():
    toks = [1, 0, 1, 1]
    for seed in range(20):
        s = forward_mask(toks, 0.9, rng_seed=seed, prompt_len=2)
        assert s.cells[0] == 1 and s.cells[1] == 0


# -- persistence --------------------------------------------------------------------------


def test_json_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    m = random_model(rng, 3, 2)
    path = tmp_path / "model.json"
    m.save(str(path))
    again = VlmcModel.load(str(path))
    np.testing.assert_allclose(again.transitions, m.transitions, atol=0)
    assert again.order == m.order and again.alphabet_size == m.alphabet_size
    doc = json.loads(path.read_text())
    assert set(doc) == {"alphabet", "order", "transitions"}
    assert len(doc["transitions"]) == 9


def test_from_dict_validation():
    with pytest.raises(InvalidModel):
        VlmcModel.from_dict({"alphabet": 2, "order": 1, "transitions": {"0": [0.5, 0.5]}})
    with pytest.raises(InvalidModel):
        VlmcModel.from_dict({"alphabet": 2, "order": 1,
                             "transitions": {"0": [0.5, 0.5], "x": [0.5, 0.5]}})
