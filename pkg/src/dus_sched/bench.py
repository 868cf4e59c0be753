"""Oracle-denoiser benchmark: exact-sequence recovery at matched NFE.

Large-model task accuracy is out of reach on a desk, so the bench scores a
planner by how much of a held-out chain sample it reproduces: draw a ground
truth from the model, reveal its prefix as the prompt, decode the rest, and
count matching tokens.  All runs are seeded; pairs of planners can be
compared with an exact one-sided sign test.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence

from .engine import run_generation
from .planners import make_planner
from .schedule import DusParams
from .vlmc import OracleDenoiser, VlmcModel, sample_sequence


@dataclass(frozen=True)
class RecoveryRun:
    recovery: float
    nfe_actual: int
    nfe_nominal: int
    trace_digest: str


def recovery_run(
    model: VlmcModel,
    planner_spec: str,
    *,
    block_size: int,
    gen_len: int,
    prompt_len: int,
    seed: int,
    greedy: bool = False,
    a: float = 2.0,
    base_skip: int = 1,
    skip_threshold: float = 0.0,
    k: Optional[int] = None,
    gamma: float = 1.0,
    tau: float = 0.9,
) -> RecoveryRun:
    """Decode against the oracle and score against the held-out sample."""
    truth = sample_sequence(model, prompt_len + gen_len, seed)
    prompt = [int(t) for t in truth[:prompt_len]]
    dus = DusParams(block_size, a, base_skip, skip_threshold)
    planner = make_planner(planner_spec, seed=seed, k=k, gamma=gamma, tau=tau, dus=dus)
    denoiser = OracleDenoiser(model)
    result = run_generation(
        denoiser,
        planner,
        prompt,
        gen_len,
        block_size,
        vocab=denoiser.vocab,
        seed=seed,
        greedy=greedy,
        params_echo={"planner": planner_spec, "a": a, "base_skip": base_skip},
    )
    decoded = result.sequence.cells[prompt_len:]
    target = truth[prompt_len:]
    matches = sum(1 for d, t in zip(decoded, target) if d == int(t))
    return RecoveryRun(
        recovery=matches / gen_len,
        nfe_actual=result.nfe.actual_nfe,
        nfe_nominal=result.nfe.nominal_nfe,
        trace_digest=result.trace.digest(),
    )


def binomial_sf_half(wins: int, n: int) -> float:
    """Exact P[X >= wins] for X ~ Binomial(n, 1/2)."""
    if n == 0:
        return 1.0
    total = sum(math.comb(n, i) for i in range(wins, n + 1))
    return float(Fraction(total, 2 ** n))


@dataclass(frozen=True)
class PairedComparison:
    wins: int
    losses: int
    ties: int
    p_value: float  # one-sided sign test: first planner better

    @property
    def n_pairs(self) -> int:
        return self.wins + self.losses + self.ties


def compare_planners(
    model: VlmcModel,
    spec_a: str,
    spec_b: str,
    *,
    block_size: int,
    gen_len: int,
    prompt_len: int,
    seeds: Sequence[int],
    **kwargs,
) -> PairedComparison:
    """Paired seeded runs of two planners; sign test that the first wins."""
    wins = losses = ties = 0
    for seed in seeds:
        ra = recovery_run(
            model, spec_a, block_size=block_size, gen_len=gen_len,
            prompt_len=prompt_len, seed=seed, **kwargs,
        )
        rb = recovery_run(
            model, spec_b, block_size=block_size, gen_len=gen_len,
            prompt_len=prompt_len, seed=seed, **kwargs,
        )
        if ra.recovery > rb.recovery:
            wins += 1
        elif ra.recovery < rb.recovery:
            losses += 1
        else:
            ties += 1
    return PairedComparison(
        wins=wins, losses=losses, ties=ties,
        p_value=binomial_sf_half(wins, wins + losses),
    )


# -- experiment matrix --------------------------------------------------------------


def _run_cell(args: dict) -> dict:
    model = VlmcModel.from_dict(args["model"])
    recs = [
        recovery_run(
            model,
            args["planner"],
            block_size=args["B"],
            gen_len=args["G"],
            prompt_len=args["prompt_len"],
            seed=seed,
            greedy=args["greedy"],
            a=args["a"],
            base_skip=args["base_skip"],
            skip_threshold=args["skip_threshold"],
            k=args["k"],
            gamma=args["gamma"],
            tau=args["tau"],
        )
        for seed in args["seeds"]
    ]
    mean_nfe = sum(r.nfe_actual for r in recs) / len(recs)
    return {
        "planner": args["planner"],
        "B": args["B"],
        "G": args["G"],
        "nfe_nominal": recs[0].nfe_nominal,
        "nfe_actual": mean_nfe,
        "speedup": args["G"] / mean_nfe,
        "recovery": sum(r.recovery for r in recs) / len(recs),
        "runs": len(recs),
    }


def run_matrix(
    model: VlmcModel,
    planner_specs: Sequence[str],
    block_sizes: Sequence[int],
    *,
    gen_len: int,
    prompt_len: int = 4,
    seeds: Sequence[int] = (0,),
    greedy: bool = False,
    workers: int = 1,
    out_dir: Optional[str] = None,
    a: float = 2.0,
    base_skip: int = 1,
    skip_threshold: float = 0.0,
    k: Optional[int] = None,
    gamma: float = 1.0,
    tau: float = 0.9,
) -> List[dict]:
    """Run every (planner, B) cell; cells are independent and parallelizable."""
    cells = [
        {
            "model": model.to_dict(),
            "planner": spec,
            "B": b,
            "G": gen_len,
            "prompt_len": prompt_len,
            "seeds": list(seeds),
            "greedy": greedy,
            "a": a,
            "base_skip": base_skip,
            "skip_threshold": skip_threshold,
            "k": k,
            "gamma": gamma,
            "tau": tau,
        }
        for spec in planner_specs
        for b in block_sizes
    ]
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell, cells))
    else:
        rows = [_run_cell(c) for c in cells]
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        for row in rows:
            name = f"bench_{row['planner'].replace('+', '_').replace(':', '_')}_B{row['B']}.json"
            _atomic_write_json(os.path.join(out_dir, name), row)
    return rows


def _atomic_write_json(path: str, payload: dict) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
