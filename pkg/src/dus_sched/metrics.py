"""Trace analytics: spacing of co-revealed tokens, NFE aggregation, reports.

Pairwise distances are pooled pair-weighted across all steps and blocks
(total distance over total pair count); that pooling is what makes the
spacing of a dilated schedule a pure function of its parameters.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .engine import DecodeTrace
from .errors import EmptyTrace, MixedParams, NoPairs

CSV_COLUMNS = [
    "planner",
    "B",
    "a",
    "nfe_nominal",
    "nfe_actual",
    "speedup",
    "avg_pair_dist",
    "isolated_frac",
    "truncated_blocks",
]


def _pair_stats(trace: DecodeTrace) -> Tuple[int, int]:
    """Total |i - j| over co-revealed pairs and the number of such pairs."""
    total = 0
    pairs = 0
    for step in trace.steps:
        pos = [p for p, _, _ in step.revealed]
        for i in range(len(pos)):
            for j in range(i + 1, len(pos)):
                total += abs(pos[i] - pos[j])
                pairs += 1
    return total, pairs


def avg_pairwise_distance(trace: DecodeTrace) -> float:
    total, pairs = _pair_stats(trace)
    if pairs == 0:
        raise NoPairs("no step revealed more than one token")
    return total / pairs


def _isolation_counts(trace: DecodeTrace) -> Tuple[int, int]:
    isolated = 0
    revealed = 0
    for step in trace.steps:
        pos = sorted(p for p, _, _ in step.revealed)
        occupied = set(pos)
        for p in pos:
            revealed += 1
            if p - 1 not in occupied and p + 1 not in occupied:
                isolated += 1
    return isolated, revealed


def isolated_fraction(trace: DecodeTrace) -> float:
    """Share of revealed tokens with no same-step neighbor at distance 1."""
    isolated, revealed = _isolation_counts(trace)
    if revealed == 0:
        raise EmptyTrace("trace revealed no tokens")
    return isolated / revealed


@dataclass(frozen=True)
class SpacingReport:
    avg_pairwise_distance: Optional[float]  # None when no step revealed a pair
    isolated_fraction: float
    total_pairs: int
    per_step: Tuple[Tuple[int, Optional[float]], ...]  # (step, mean pair distance)


def spacing_report(trace: DecodeTrace) -> SpacingReport:
    per_step: List[Tuple[int, Optional[float]]] = []
    for step in trace.steps:
        pos = [p for p, _, _ in step.revealed]
        dsum = 0
        cnt = 0
        for i in range(len(pos)):
            for j in range(i + 1, len(pos)):
                dsum += abs(pos[i] - pos[j])
                cnt += 1
        per_step.append((step.step, dsum / cnt if cnt else None))
    total, pairs = _pair_stats(trace)
    return SpacingReport(
        avg_pairwise_distance=total / pairs if pairs else None,
        isolated_fraction=isolated_fraction(trace),
        total_pairs=pairs,
        per_step=tuple(per_step),
    )


def truncated_blocks_fraction(trace: DecodeTrace) -> float:
    """Share of blocks left with masked cells (early-stopped runs)."""
    params = trace.params
    gen_len = int(params["G"])
    block = int(params["B"])
    prompt_len = int(params.get("prompt_len", 0))
    n_blocks = (gen_len + block - 1) // block
    revealed_per_block = [0] * n_blocks
    for step in trace.steps:
        for p, _, _ in step.revealed:
            b = (p - prompt_len) // block
            revealed_per_block[b] += 1
    truncated = 0
    for b in range(n_blocks):
        length = min(block, gen_len - b * block)
        if revealed_per_block[b] < length:
            truncated += 1
    return truncated / n_blocks


# -- aggregation -------------------------------------------------------------------


def summarize(
    traces: Sequence[DecodeTrace],
    group_by: Sequence[str] = ("planner", "B", "a"),
    scores: Optional[Mapping[str, float]] = None,
) -> List[dict]:
    """One row per parameter group; raises ``MixedParams`` if reported columns
    vary inside a group (e.g. traces with different B grouped together)."""
    if not traces:
        return []
    groups: Dict[tuple, List[DecodeTrace]] = {}
    for t in traces:
        key = tuple(t.params.get(k) for k in group_by)
        groups.setdefault(key, []).append(t)

    rows = []
    for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
        members = groups[key]
        for col in ("planner", "B", "a"):
            vals = {m.params.get(col) for m in members}
            if len(vals) > 1:
                raise MixedParams(f"column {col!r} takes several values {vals} in one group")
        first = members[0].params
        gen_len = int(first["G"])
        nominal = {int(m.params.get("nfe_nominal", -1)) for m in members}
        if len(nominal) > 1:
            raise MixedParams(f"mixed nominal NFE {nominal} in one group")
        actuals = [m.nfe for m in members]
        mean_actual = sum(actuals) / len(actuals)
        dsum = 0
        pairs = 0
        isolated = 0
        revealed = 0
        truncated = 0.0
        for m in members:
            a, b = _pair_stats(m)
            dsum += a
            pairs += b
            i, r = _isolation_counts(m)
            isolated += i
            revealed += r
            truncated += truncated_blocks_fraction(m)
        row = {
            "planner": first.get("planner"),
            "B": int(first["B"]),
            "a": None if first.get("a") is None else float(first["a"]),
            "nfe_nominal": nominal.pop(),
            "nfe_actual": mean_actual,
            "speedup": gen_len / mean_actual if mean_actual else float("inf"),
            "avg_pair_dist": dsum / pairs if pairs else None,
            "isolated_frac": isolated / revealed if revealed else None,
            "truncated_blocks": truncated / len(members),
        }
        if scores is not None:
            vals = [scores[m.params["run_id"]] for m in members if m.params.get("run_id") in scores]
            row["acc"] = sum(vals) / len(vals) if vals else None
        rows.append(row)
    return rows


def rows_to_csv(rows: Sequence[dict]) -> str:
    cols = list(CSV_COLUMNS)
    if rows and "acc" in rows[0]:
        cols = cols + ["acc"]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: _fmt(row.get(c)) for c in cols})
    return buf.getvalue()


def csv_to_rows(text: str) -> List[dict]:
    reader = csv.DictReader(io.StringIO(text))
    out = []
    for rec in reader:
        row: dict = {}
        for col, val in rec.items():
            row[col] = _parse(col, val)
        out.append(row)
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(col: str, val: str):
    if val == "":
        return None
    if col in ("B", "nfe_nominal"):
        return int(val)
    if col == "planner":
        return val
    try:
        f = float(val)
    except ValueError:
        return val
    if col == "a":
        return f
    return f


def rows_to_json(rows: Sequence[dict]) -> str:
    return json.dumps(list(rows), indent=1, sort_keys=True) + "\n"
