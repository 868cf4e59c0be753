"""Numerical verification battery for the entropy-gap theory.

Runs the bound, decay, and gap-sign probes against one
chain model and emits a machine-readable report.  Randomized pieces are
fully seeded so a report is reproducible byte for byte.
"""

from __future__ import annotations

import math
from typing import List, Sequence

import numpy as np

from .infotheory import entropy_gap, mi_decay, verify_parallel_bounds, spacing_gap_decay
from .seq import MASKED, MaskedSequence
from .vlmc import VlmcModel, iid_chain, sample_sequence

SANDWICH_TOL = 1e-9
IID_GAP_TOL = 1e-12


def random_state_and_partition(
    model: VlmcModel, rng: np.random.Generator, max_block: int = 8
) -> tuple[MaskedSequence, List[List[int]]]:
    """Random decode-like state: sampled prompt, fresh masked block after it."""
    prompt_len = int(rng.integers(model.order, model.order + 3))
    block = int(rng.integers(2, max_block + 1))
    toks = sample_sequence(model, prompt_len, int(rng.integers(0, 2 ** 31)))
    cells = tuple(int(t) for t in toks) + (MASKED,) * block
    seq = MaskedSequence(cells=cells, prompt_len=prompt_len, block_size=block)
    positions = list(range(prompt_len, prompt_len + block))
    order = rng.permutation(len(positions))
    n_groups = int(rng.integers(1, block + 1))
    cuts = sorted(rng.choice(range(1, block), size=n_groups - 1, replace=False)) if n_groups > 1 else []
    groups: List[List[int]] = []
    prev = 0
    for c in list(cuts) + [block]:
        groups.append([positions[i] for i in order[prev:c]])
        prev = c
    return seq, groups


def parallel_bounds_battery(
    model: VlmcModel, *, instances: int, seed: int, max_block: int = 8
) -> dict:
    rng = np.random.default_rng(seed)
    worst_low = 0.0
    worst_high = 0.0
    min_gap = math.inf
    failures = 0
    for _ in range(instances):
        seq, groups = random_state_and_partition(model, rng, max_block)
        rep = verify_parallel_bounds(model, seq, groups)
        worst_low = max(worst_low, rep.joint - rep.surrogate)
        worst_high = max(worst_high, rep.surrogate - rep.sum_marginals)
        min_gap = min(min_gap, rep.sum_marginals - rep.joint)
        if not rep.holds(SANDWICH_TOL):
            failures += 1
    # boundary partitions: singletons recover the joint, one group the sum
    seq, _ = random_state_and_partition(model, rng, max_block)
    masked = seq.masked_positions(seq.current_block())
    singles = verify_parallel_bounds(model, seq, [[p] for p in masked])
    grouped = verify_parallel_bounds(model, seq, [list(masked)])
    return {
        "instances": instances,
        "failures": failures,
        "max_lower_violation": worst_low,
        "max_upper_violation": worst_high,
        "min_entropy_gap": min_gap,
        "singleton_abs_err": abs(singles.surrogate - singles.joint),
        "single_group_abs_err": abs(grouped.surrogate - grouped.sum_marginals),
        "ok": failures == 0
        and abs(singles.surrogate - singles.joint) <= SANDWICH_TOL
        and abs(grouped.surrogate - grouped.sum_marginals) <= SANDWICH_TOL,
    }


def gap_sign_battery(model: VlmcModel, *, instances: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    min_gap = math.inf
    for _ in range(instances):
        seq, groups = random_state_and_partition(model, rng)
        for g in groups:
            if len(g) >= 2:
                min_gap = min(min_gap, entropy_gap(model, seq, g).gap)
    iid = iid_chain(np.full(model.alphabet_size, 1.0 / model.alphabet_size))
    cells = (MASKED,) * 6
    iid_seq = MaskedSequence(cells=cells, prompt_len=0, block_size=6)
    iid_gap = max(
        abs(entropy_gap(iid, iid_seq, [i, j]).gap) for i in range(5) for j in range(i + 1, 6)
    )
    return {
        "min_gap": min_gap if min_gap is not math.inf else 0.0,
        "iid_max_abs_gap": iid_gap,
        "ok": (min_gap is math.inf or min_gap >= -SANDWICH_TOL) and iid_gap <= IID_GAP_TOL,
    }


def verify_model(
    model: VlmcModel,
    *,
    seed: int = 0,
    bounds_instances: int = 50,
    gap_group: int = 2,
    gap_epsilons: Sequence[float] = (1e-6,),
    gap_max_d: int = 40,
    mi_max_d: int = 16,
) -> dict:
    """Full battery on one model; report['ok'] aggregates every check."""
    report: dict = {"model": {"alphabet": model.alphabet_size, "order": model.order}}
    report["parallel_bounds"] = parallel_bounds_battery(model, instances=bounds_instances, seed=seed)
    report["gap_sign"] = gap_sign_battery(model, instances=max(10, bounds_instances // 5), seed=seed + 1)

    l2 = spacing_gap_decay(
        model, gap_group, range(1, gap_max_d + 1), epsilons=gap_epsilons
    )
    report["gap_decay"] = {
        "rows": [[r.spacing, r.max_gap] for r in l2.rows],
        "d_epsilon": {repr(eps): d for eps, d in l2.d_epsilon.items()},
        "monotone": l2.monotone(),
        "ok": l2.monotone() and all(d is not None for d in l2.d_epsilon.values()),
    }

    l3 = mi_decay(model, range(1, mi_max_d + 1))
    report["mi_decay"] = {
        "spacings": list(l3.spacings),
        "mi": list(l3.mi_values),
        "fitted_rho": l3.fitted_rho,
        "fitted_c": l3.fitted_c,
        "rho_chain": l3.rho_chain,
        "c_chain": l3.c_chain,
        "monotone": l3.monotone(),
        "bound_ok": l3.bound_holds(),
        "ok": l3.monotone() and l3.bound_holds(),
    }

    report["ok"] = all(report[k]["ok"] for k in ("parallel_bounds", "gap_sign", "gap_decay", "mi_decay"))
    return report
