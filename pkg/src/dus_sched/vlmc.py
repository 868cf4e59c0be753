"""Finite-order Markov chains with exact conditional queries.

The model is the order-L completion of a variable-length chain: states are
length-L contexts, transitions emit one symbol and shift the context.  All
conditional queries are exact sums over completions of masked cells, carried
out by a forward pass over the context chain so that masked cells outside
the query marginalize in linear time instead of blowing up the enumeration.
"""

from __future__ import annotations

import json
import math
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    EnumerationTooLarge,
    InvalidModel,
    InvalidParams,
    NoConvergence,
    PositionNotMasked,
)
from .seq import MASKED, Cell, MaskedSequence, Vocab

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10
POWER_ITER_RESIDUAL = 1e-12
TABLE_GUARD = 2 ** 24  # refuse joint tables larger than this many states


class VlmcModel:
    """Stationary ergodic chain over ``alphabet_size`` symbols with order ``order``.

    ``transitions`` is a row-stochastic ``(alphabet**order, alphabet)`` array:
    row ``c`` is the next-symbol distribution given context index ``c``.
    Context indices encode the last ``order`` symbols base-``alphabet``, oldest
    symbol in the most significant digit, so appending symbol ``v`` maps
    context ``c`` to ``(c * alphabet + v) % alphabet**order``.

    Construction verifies that the context chain is irreducible and aperiodic
    and computes the stationary distribution; sequences drawn from it are
    strictly stationary because the initial context is stationary too.
    """

    def __init__(self, alphabet_size: int, order: int, transitions: np.ndarray):
        if alphabet_size < 2:
            raise InvalidModel("alphabet size must be >= 2")
        if order < 1:
            raise InvalidModel("order must be >= 1")
        n_ctx = alphabet_size ** order
        t = np.asarray(transitions, dtype=np.float64)
        if t.shape != (n_ctx, alphabet_size):
            raise InvalidModel(f"transition table must be {(n_ctx, alphabet_size)}, got {t.shape}")
        if np.any(t < 0):
            raise InvalidModel("negative transition probability")
        rowsum = t.sum(axis=1)
        if np.any(np.abs(rowsum - 1.0) > ROW_SUM_TOL):
            bad = int(np.argmax(np.abs(rowsum - 1.0)))
            raise InvalidModel(f"context row {bad} sums to {rowsum[bad]!r}")

        self.alphabet_size = alphabet_size
        self.order = order
        self.transitions = t
        self.n_contexts = n_ctx

        # context-to-context shift targets and per-symbol step matrices
        ctx = np.arange(n_ctx)
        self._shift = (ctx[:, None] * alphabet_size + np.arange(alphabet_size)[None, :]) % n_ctx
        self._step_by_symbol = np.zeros((alphabet_size, n_ctx, n_ctx))
        for v in range(alphabet_size):
            self._step_by_symbol[v, ctx, self._shift[:, v]] = t[:, v]
        self._step_any = self._step_by_symbol.sum(axis=0)

        _check_irreducible_aperiodic(self._step_any > 0)
        self.stationary = _power_iteration(self._step_any)
        if np.max(np.abs(self.stationary @ self._step_any - self.stationary)) > STATIONARY_TOL:
            raise NoConvergence("stationary distribution residual above tolerance")

    # -- indexing helpers ------------------------------------------------------

    def ctx_index(self, context: Sequence[int]) -> int:
        if len(context) != self.order:
            raise InvalidParams(f"context length must be {self.order}")
        idx = 0
        for s in context:
            if not 0 <= s < self.alphabet_size:
                raise InvalidParams(f"symbol {s} outside alphabet")
            idx = idx * self.alphabet_size + s
        return idx

    def ctx_tuple(self, index: int) -> Tuple[int, ...]:
        out = []
        for _ in range(self.order):
            out.append(index % self.alphabet_size)
            index //= self.alphabet_size
        return tuple(reversed(out))

    # -- spectral quantities -----------------------------------------------------

    def second_eigenvalue_modulus(self) -> float:
        """Modulus of the second-largest eigenvalue of the context chain."""
        eig = np.sort(np.abs(np.linalg.eigvals(self._step_any)))
        return float(eig[-2]) if len(eig) > 1 else 0.0

    # -- io ----------------------------------------------------------------------

    def to_dict(self) -> dict:
        rows = {
            "".join(str(s) for s in self.ctx_tuple(c)): [float(p) for p in self.transitions[c]]
            for c in range(self.n_contexts)
        }
        return {"alphabet": self.alphabet_size, "order": self.order, "transitions": rows}

    @classmethod
    def from_dict(cls, data: Mapping) -> "VlmcModel":
        try:
            k = int(data["alphabet"])
            order = int(data["order"])
            rows = data["transitions"]
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidModel(f"bad model document: {exc}") from exc
        t = np.zeros((k ** order, k))
        seen = set()
        for ctx_str, probs in rows.items():
            if len(ctx_str) != order:
                raise InvalidModel(f"context {ctx_str!r} does not have {order} symbols")
            try:
                ctx = tuple(int(ch) for ch in ctx_str)
            except ValueError as exc:
                raise InvalidModel(f"context {ctx_str!r} is not digits") from exc
            if any(not 0 <= s < k for s in ctx):
                raise InvalidModel(f"context {ctx_str!r} outside alphabet")
            idx = 0
            for s in ctx:
                idx = idx * k + s
            if idx in seen:
                raise InvalidModel(f"duplicate context {ctx_str!r}")
            seen.add(idx)
            t[idx] = np.asarray(probs, dtype=np.float64)
        if len(seen) != k ** order:
            raise InvalidModel(f"expected {k ** order} context rows, got {len(seen)}")
        return cls(k, order, t)

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "VlmcModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def vocab(self, eos_id: Optional[int] = None) -> Vocab:
        """Decode-side vocabulary: alphabet symbols plus a trailing mask id."""
        return Vocab(size=self.alphabet_size + 1, mask_id=self.alphabet_size, eos_id=eos_id)


# -- common constructions --------------------------------------------------------


def flip_chain(p: float) -> VlmcModel:
    """Symmetric 2-state chain that flips with probability ``p``."""
    if not 0 < p < 1:
        raise InvalidParams("flip probability must lie in (0, 1)")
    return VlmcModel(2, 1, np.array([[1 - p, p], [p, 1 - p]]))


def iid_chain(probs: Sequence[float], order: int = 1) -> VlmcModel:
    """Chain whose every context row equals ``probs`` (independent symbols)."""
    row = np.asarray(probs, dtype=np.float64)
    k = len(row)
    return VlmcModel(k, order, np.tile(row, (k ** order, 1)))


def random_model(rng: np.random.Generator, alphabet_size: int, order: int) -> VlmcModel:
    """Random fully supported chain (always irreducible and aperiodic)."""
    n_ctx = alphabet_size ** order
    t = rng.dirichlet(np.ones(alphabet_size), size=n_ctx)
    # keep rows away from degenerate corners so conditionals stay well scaled
    t = 0.95 * t + 0.05 / alphabet_size
    t /= t.sum(axis=1, keepdims=True)
    return VlmcModel(alphabet_size, order, t)


# -- structure checks -------------------------------------------------------------


def _check_irreducible_aperiodic(adj: np.ndarray) -> None:
    n = adj.shape[0]
    fwd = _reachable(adj, 0)
    bwd = _reachable(adj.T, 0)
    if not (fwd.all() and bwd.all()):
        raise InvalidModel("context chain is not irreducible")
    # period = gcd of (level[u] + 1 - level[v]) over edges, from any BFS tree
    level = np.full(n, -1)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.nonzero(adj[u])[0]:
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(int(v))
        frontier = nxt
    g = 0
    for u in range(n):
        for v in np.nonzero(adj[u])[0]:
            g = math.gcd(g, level[u] + 1 - level[v])
    if g != 1:
        raise InvalidModel(f"context chain is periodic with period {g}")


def _reachable(adj: np.ndarray, start: int) -> np.ndarray:
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[start] = True
    frontier = [start]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.nonzero(adj[u])[0]:
                if not seen[v]:
                    seen[v] = True
                    nxt.append(int(v))
        frontier = nxt
    return seen


def _power_iteration(step: np.ndarray, max_iter: int = 200_000) -> np.ndarray:
    n = step.shape[0]
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = pi @ step
        nxt /= nxt.sum()
        if np.abs(nxt - pi).max() < POWER_ITER_RESIDUAL:
            return nxt
        pi = nxt
    raise NoConvergence("power iteration did not converge; chain near reducible")


def stationary_distribution(model: VlmcModel) -> np.ndarray:
    """Stationary distribution over length-L contexts (pi @ P = pi)."""
    return model.stationary.copy()


# -- exact conditional queries ------------------------------------------------------


def joint_table(model: VlmcModel, cells: Sequence[Cell], positions: Sequence[int]) -> np.ndarray:
    """Exact conditional joint of the masked ``positions`` given revealed cells.

    Returns an array of shape ``(alphabet,) * len(positions)`` whose axes follow
    the positions in ascending order.  Every other masked cell is summed out
    exactly; revealed runs of length >= order screen the window on both sides,
    and a fully masked flank contributes the stationary context.
    """
    if not positions:
        raise InvalidParams("need at least one query position")
    pos = sorted(set(int(p) for p in positions))
    if len(pos) != len(positions):
        raise InvalidParams("query positions must be distinct")
    n = len(cells)
    for p in pos:
        if not 0 <= p < n:
            raise InvalidParams(f"position {p} outside sequence")
        if cells[p] is not MASKED:
            raise PositionNotMasked(f"position {p} is already revealed")

    k, order = model.alphabet_size, model.order
    if k ** len(pos) * model.n_contexts > TABLE_GUARD:
        raise EnumerationTooLarge(
            f"joint table of {k}**{len(pos)} x {model.n_contexts} states exceeds guard"
        )

    start, init = _left_boundary(model, cells, pos[0])
    end = _right_boundary(model, cells, pos[-1])

    interest = set(pos)
    state = init  # shape (k,)*r + (n_contexts,)
    for p in range(start, end + 1):
        cell = cells[p]
        if cell is not MASKED:
            state = state @ model._step_by_symbol[cell]
        elif p in interest:
            state = np.stack([state @ model._step_by_symbol[v] for v in range(k)], axis=-2)
        else:
            state = state @ model._step_any
        total = state.sum()
        if total <= 0.0:
            raise InvalidModel("revealed pattern has probability zero under the model")
        state = state / total
    table = state.sum(axis=-1)
    return table / table.sum()


def _left_boundary(model: VlmcModel, cells: Sequence[Cell], lo: int) -> Tuple[int, np.ndarray]:
    """Start index and initial context distribution for the forward pass."""
    order = model.order
    run = 0
    p = lo - 1
    while p >= 0:
        if cells[p] is not MASKED:
            run += 1
            if run == order:
                ctx = model.ctx_index([cells[q] for q in range(p, p + order)])
                init = np.zeros(model.n_contexts)
                init[ctx] = 1.0
                return p + order, init
            p -= 1
        else:
            # masked cell with nothing revealed further left: stationary entry
            if not any(cells[q] is not MASKED for q in range(p)):
                return p + 1, model.stationary.copy()
            run = 0
            p -= 1
    return 0, model.stationary.copy()


def _right_boundary(model: VlmcModel, cells: Sequence[Cell], hi: int) -> int:
    """Last index whose factor can influence the query."""
    order = model.order
    end = hi
    run = 0
    for p in range(hi + 1, len(cells)):
        if cells[p] is not MASKED:
            run += 1
            end = p
            if run == order:
                break
        else:
            run = 0
    return end


def exact_conditional(model: VlmcModel, seq: MaskedSequence, position: int) -> np.ndarray:
    """p(X_position | revealed cells) as a length-``alphabet`` vector."""
    return joint_table(model, seq.cells, [position])


def batch_conditionals(
    model: VlmcModel, cells: Sequence[Cell], positions: Iterable[int]
) -> Dict[int, np.ndarray]:
    """Conditionals for many masked positions from one forward-backward sweep.

    Mathematically identical to calling :func:`exact_conditional` per position
    (tests pin that equivalence); one pass keeps decode loops linear.
    """
    pos = sorted(set(int(p) for p in positions))
    n = len(cells)
    for p in pos:
        if cells[p] is not MASKED:
            raise PositionNotMasked(f"position {p} is already revealed")
    if not pos:
        return {}

    k = model.alphabet_size
    last_revealed = max((i for i, c in enumerate(cells) if c is not MASKED), default=-1)
    end = max(pos[-1], last_revealed)

    alphas = np.empty((end + 2, model.n_contexts))
    alphas[0] = model.stationary
    for p in range(end + 1):
        cell = cells[p]
        step = model._step_any if cell is MASKED else model._step_by_symbol[cell]
        a = alphas[p] @ step
        total = a.sum()
        if total <= 0.0:
            raise InvalidModel("revealed pattern has probability zero under the model")
        alphas[p + 1] = a / total

    betas = np.empty_like(alphas)
    betas[end + 1] = 1.0
    for p in range(end, -1, -1):
        cell = cells[p]
        step = model._step_any if cell is MASKED else model._step_by_symbol[cell]
        b = step @ betas[p + 1]
        total = b.sum()
        if total <= 0.0:
            raise InvalidModel("revealed pattern has probability zero under the model")
        betas[p] = b / total

    out: Dict[int, np.ndarray] = {}
    shift = model._shift
    for p in pos:
        w = alphas[p][:, None] * model.transitions * betas[p + 1][shift]
        cond = w.sum(axis=0)
        out[p] = cond / cond.sum()
    return out


# -- sampling and the forward masking process ---------------------------------------


def sample_sequence(model: VlmcModel, length: int, rng_seed: int) -> np.ndarray:
    """Draw ``length`` tokens: stationary initial context, then transitions."""
    if length < model.order:
        raise InvalidParams(f"length must be >= order ({model.order})")
    rng = np.random.default_rng(rng_seed)
    ctx = int(rng.choice(model.n_contexts, p=model.stationary))
    out = list(model.ctx_tuple(ctx))
    for _ in range(length - model.order):
        v = int(rng.choice(model.alphabet_size, p=model.transitions[ctx]))
        out.append(v)
        ctx = int(model._shift[ctx, v])
    return np.array(out[:length], dtype=np.int64)


def forward_mask(
    tokens: Sequence[int],
    noise: float,
    rng_seed: int,
    prompt_len: int = 0,
) -> MaskedSequence:
    """Mask each generation cell independently with probability ``noise``.

    Returns a single-block sequence (block size = generation length) so any
    masking pattern is a legal state for conditional queries.
    """
    if not 0 <= noise <= 1:
        raise InvalidParams("noise level must lie in [0, 1]")
    toks = [int(t) for t in tokens]
    if not 0 <= prompt_len < len(toks):
        raise InvalidParams("prompt_len must leave at least one generation cell")
    rng = np.random.default_rng(rng_seed)
    drop = rng.random(len(toks) - prompt_len) < noise
    cells: list[Cell] = list(toks[:prompt_len])
    for t, d in zip(toks[prompt_len:], drop):
        cells.append(MASKED if d else t)
    return MaskedSequence(
        cells=tuple(cells), prompt_len=prompt_len, block_size=len(toks) - prompt_len
    )


# -- denoiser adapter ---------------------------------------------------------------


class OracleDenoiser:
    """Denoiser contract backed by exact chain conditionals.

    Output vectors live in the decode vocabulary (alphabet plus mask slot);
    the mask slot always carries probability zero.
    """

    def __init__(self, model: VlmcModel, eos_id: Optional[int] = None):
        self.model = model
        self.vocab = model.vocab(eos_id)

    def __call__(self, seq: MaskedSequence, block) -> Dict[int, np.ndarray]:
        masked = [p for p in block.positions() if seq.cells[p] is MASKED]
        conds = batch_conditionals(self.model, seq.cells, masked)
        out = {}
        for p, c in conds.items():
            vec = np.zeros(self.vocab.size)
            vec[: self.model.alphabet_size] = c
            out[p] = vec
        return out
