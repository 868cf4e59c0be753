"""Unmasking-scheduler toolkit for block-wise masked-diffusion decoding."""

from .engine import (
    DecodeTrace,
    GenerationResult,
    NfeReport,
    decode_block,
    nfe_nominal,
    run_generation,
    speedup,
)
from .errors import DusError
from .infotheory import (
    EntropyReport,
    MiDecayCurve,
    SandwichReport,
    entropy,
    entropy_gap,
    joint_entropy_exact,
    mi_decay,
    verify_parallel_bounds,
    spacing_gap_decay,
)
from .metrics import avg_pairwise_distance, isolated_fraction, spacing_report, summarize
from .planners import (
    PlannerDecision,
    ScoreKind,
    make_planner,
    plan_cb,
    plan_confidence,
    plan_confidence_incremental,
    plan_eb,
    plan_random,
    spacing_post_filter,
)
from .schedule import DusParams, Schedule, apply_skip, dus_schedule, group_sizes
from .seq import BlockView, MaskedSequence, Vocab, fresh_sequence
from .vlmc import (
    OracleDenoiser,
    VlmcModel,
    exact_conditional,
    flip_chain,
    forward_mask,
    iid_chain,
    random_model,
    sample_sequence,
    stationary_distribution,
)

__version__ = "0.1.0"
