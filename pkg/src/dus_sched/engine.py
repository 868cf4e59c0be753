"""Semi-autoregressive decode loop.

Drives any (denoiser x planner) pair block by block: one denoiser call per
step, a planner decision over the returned conditionals, independent
per-position sampling, then a state update.  Every step is recorded in a
trace; denoiser calls are the NFE unit for all speedup numbers.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DenoiserProtocolError,
    InvalidParams,
    RoundCapExceeded,
)
from .planners import Planner
from .seq import MASKED, BlockView, MaskedSequence, Vocab, fresh_sequence, validate_distribution

TRACE_VERSION = 1

# a denoiser maps (state, block) to a conditional distribution per masked position
Denoiser = Callable[[MaskedSequence, BlockView], Mapping[int, np.ndarray]]


def _round12(x: float) -> float:
    """Floats entering traces are rounded to 12 significant digits so that
    numerically equivalent backends serialize identically."""
    return float(f"{float(x):.12g}")


@dataclass
class TraceStep:
    step: int
    block: int
    revealed: List[Tuple[int, int, float]]  # (position, token, score)
    deferred: List[int]
    nfe: int

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "block": self.block,
            "revealed": [[p, t, _round12(s)] for p, t, s in self.revealed],
            "deferred": list(self.deferred),
            "nfe": self.nfe,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TraceStep":
        return cls(
            step=obj["step"],
            block=obj["block"],
            revealed=[(p, t, s) for p, t, s in obj["revealed"]],
            deferred=list(obj["deferred"]),
            nfe=obj["nfe"],
        )


@dataclass
class DecodeTrace:
    params: dict
    steps: List[TraceStep] = field(default_factory=list)
    terminal_reason: str = "Completed"

    @property
    def nfe(self) -> int:
        return self.steps[-1].nfe if self.steps else 0

    def to_lines(self) -> List[str]:
        lines = [json.dumps({"version": TRACE_VERSION, "params": self.params}, sort_keys=True)]
        lines += [json.dumps(s.to_json(), sort_keys=True) for s in self.steps]
        lines.append(json.dumps({"terminal": self.terminal_reason, "nfe": self.nfe}, sort_keys=True))
        return lines

    def dumps(self) -> str:
        return "\n".join(self.to_lines()) + "\n"

    def write(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    @classmethod
    def loads(cls, text: str) -> "DecodeTrace":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if len(lines) < 2:
            raise InvalidParams("trace needs a header and a terminal line")
        header = json.loads(lines[0])
        if header.get("version") != TRACE_VERSION:
            raise InvalidParams(f"unsupported trace version {header.get('version')!r}")
        footer = json.loads(lines[-1])
        steps = [TraceStep.from_json(json.loads(ln)) for ln in lines[1:-1]]
        return cls(params=header["params"], steps=steps, terminal_reason=footer["terminal"])

    @classmethod
    def read(cls, path: str) -> "DecodeTrace":
        with open(path) as fh:
            return cls.loads(fh.read())


@dataclass(frozen=True)
class NfeReport:
    nominal_nfe: int
    actual_nfe: int
    speedup: float  # gen_len / actual, i.e. vs token-by-token


@dataclass
class GenerationResult:
    sequence: MaskedSequence
    trace: DecodeTrace
    nfe: NfeReport


def ceil_log2(n: int) -> int:
    if n < 1:
        raise InvalidParams("argument must be >= 1")
    return (n - 1).bit_length()


def nfe_nominal(gen_len: int, block_size: int) -> int:
    """Denoiser calls of a full dilated run: one log2-rounds pass per block."""
    if gen_len < 1 or block_size < 1:
        raise InvalidParams("gen_len and block_size must be >= 1")
    total = 0
    remaining = gen_len
    while remaining > 0:
        b = min(block_size, remaining)
        total += max(1, ceil_log2(b))
        remaining -= b
    return total


def speedup(block_size: int) -> float:
    """Per-block call reduction vs token-by-token: B / ceil(log2 B)."""
    if block_size < 1:
        raise InvalidParams("block_size must be >= 1")
    return block_size / max(1, ceil_log2(block_size))


# -- sampling ----------------------------------------------------------------


def sample_tokens(
    dists: Mapping[int, np.ndarray],
    positions: Sequence[int],
    rng: Optional[np.random.Generator],
) -> Dict[int, int]:
    """Independent per-position draws; argmax when no generator is given."""
    out: Dict[int, int] = {}
    for p in sorted(positions):
        probs = np.asarray(dists[p], dtype=np.float64)
        if rng is None:
            out[p] = int(np.argmax(probs))
        else:
            out[p] = int(rng.choice(len(probs), p=probs / probs.sum()))
    return out


def _validated(
    raw: Mapping[int, np.ndarray], requested: Sequence[int], vocab: Vocab
) -> Dict[int, np.ndarray]:
    if set(raw.keys()) != set(requested):
        raise DenoiserProtocolError(
            f"denoiser answered positions {sorted(raw)} but {sorted(requested)} were masked"
        )
    out = {}
    for p in requested:
        try:
            out[p] = validate_distribution(vocab, np.asarray(raw[p], dtype=np.float64), tol=1e-6)
        except Exception as exc:
            raise DenoiserProtocolError(f"bad distribution for position {p}: {exc}") from exc
    return out


def _earliest_eos_stop(seq: MaskedSequence, eos_id: Optional[int]) -> bool:
    """True when an EOS is revealed with every earlier generation cell revealed."""
    if eos_id is None:
        return False
    for i in range(seq.prompt_len, len(seq.cells)):
        c = seq.cells[i]
        if c is MASKED:
            return False
        if c == eos_id:
            return True
    return False


# -- the loop ------------------------------------------------------------------


def decode_block(
    denoiser: Denoiser,
    planner: Planner,
    seq: MaskedSequence,
    *,
    vocab: Vocab,
    rng: Optional[np.random.Generator],
    trace: DecodeTrace,
    round_cap: Optional[int] = None,
) -> Tuple[MaskedSequence, bool]:
    """Complete the current block; returns (state, stopped_early).

    The cap is defensive: conforming planners always reveal at least one
    position per round, so only a misbehaving denoiser/planner pair can
    exhaust it.
    """
    block = seq.current_block()
    planner.begin_block(block, seq)
    if round_cap is None:
        rounds = max(1, ceil_log2(block.length))
        round_cap = block.length + 4 * rounds
    round_index = 0
    while True:
        masked = [p for p in block.positions() if seq.cells[p] is MASKED]
        if not masked:
            return seq, False
        if round_index >= round_cap:
            raise RoundCapExceeded(
                f"block {block.index} incomplete after {round_index} rounds"
            )
        dists = _validated(denoiser(seq, block), masked, vocab)
        decision = planner.plan(dists, seq, block, round_index)
        bad = [p for p in decision.unmask if p not in dists]
        if bad:
            raise DenoiserProtocolError(f"planner chose unplanned positions {bad}")
        tokens = sample_tokens(dists, decision.unmask, rng)
        seq = seq.reveal(tokens, vocab)
        trace.steps.append(
            TraceStep(
                step=len(trace.steps),
                block=block.index,
                revealed=[
                    (p, tokens[p], decision.scores_used.get(p, float(np.max(dists[p]))))
                    for p in sorted(tokens)
                ],
                deferred=sorted(decision.deferred),
                nfe=len(trace.steps) + 1,
            )
        )
        round_index += 1
        if _earliest_eos_stop(seq, vocab.eos_id):
            return seq, True


def run_generation(
    denoiser: Denoiser,
    planner: Planner,
    prompt: Sequence[int],
    gen_len: int,
    block_size: int,
    *,
    vocab: Vocab,
    seed: int = 0,
    greedy: bool = True,
    round_cap: Optional[int] = None,
    params_echo: Optional[dict] = None,
) -> GenerationResult:
    """Decode ``gen_len`` cells after ``prompt`` in blocks of ``block_size``."""
    seq = fresh_sequence(prompt, gen_len, block_size)
    rng = None if greedy else np.random.default_rng(seed)
    params = dict(params_echo or {})
    params.setdefault("planner", planner.name)
    params.setdefault("B", block_size)
    params.setdefault("G", gen_len)
    params.setdefault("prompt_len", len(prompt))
    params.setdefault("seed", seed)
    params.setdefault("greedy", greedy)
    params.setdefault("vocab", {"size": vocab.size, "mask_id": vocab.mask_id, "eos_id": vocab.eos_id})
    trace = DecodeTrace(params=params)

    nominal = 0
    stopped = False
    while not seq.is_complete:
        nominal += planner.nominal_rounds(seq.current_block().length)
        seq, stopped = decode_block(
            denoiser, planner, seq, vocab=vocab, rng=rng, trace=trace, round_cap=round_cap
        )
        if stopped:
            break
        seq = seq.advance_block()

    trace.terminal_reason = "EarlyStopEOS" if stopped else "Completed"
    if stopped:
        # nominal still counts the untouched blocks at the planner's rate
        for b in range(seq.cursor + 1, seq.num_blocks):
            nominal += planner.nominal_rounds(seq.block(b).length)
    actual = trace.nfe
    trace.params["nfe_nominal"] = nominal
    report = NfeReport(
        nominal_nfe=nominal,
        actual_nfe=actual,
        speedup=gen_len / actual if actual else float("inf"),
    )
    return GenerationResult(sequence=seq, trace=trace, nfe=report)
