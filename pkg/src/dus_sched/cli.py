"""Command-line entry point.

Subcommands: ``schedule`` (print a dilated schedule), ``decode`` (run one
generation against the chain oracle or an external bridge), ``verify``
(numerical verification battery, exit 2 on any failed check), ``analyze`` (trace
analytics to CSV/JSON), ``bench`` (oracle recovery-rate matrix).

Flags may come from a JSON config file (``--config``); explicit flags win
over config values, config values win over defaults.  Data goes to stdout,
diagnostics to stderr; ``DUS_SCHED_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys
from typing import List, Optional, Sequence

from . import bench as bench_mod
from .bridge_client import connect
from .engine import DecodeTrace, run_generation
from .errors import DusError
from .metrics import rows_to_csv, rows_to_json, summarize
from .planners import make_planner
from .schedule import DusParams, dus_schedule
from .seq import Vocab
from .verify import verify_model
from .vlmc import OracleDenoiser, VlmcModel, flip_chain, sample_sequence

log = logging.getLogger("dus_sched")


def _int_list(text: str) -> List[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dus-sched")
    parser.add_argument("--config", help="JSON file with default flag values")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("schedule", help="print a dilated schedule as JSON")
    p.add_argument("--B", type=int, required=True)
    p.add_argument("--a", type=float, default=2.0)
    p.add_argument("--base-skip", type=int, default=1)

    p = sub.add_parser("decode", help="run one generation")
    p.add_argument("--planner", default="dus")
    p.add_argument("--B", type=int, required=True)
    p.add_argument("--G", type=int, required=True)
    p.add_argument("--a", type=float, default=2.0)
    p.add_argument("--base-skip", type=int, default=1)
    p.add_argument("--skip-c", type=float, default=0.0)
    p.add_argument("--g0", type=int, help="compose the spacing post-filter")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.9)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", help="chain model JSON (oracle denoiser)")
    p.add_argument("--bridge", help="external denoiser: command line or host:port")
    p.add_argument("--trace-out")
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--prompt", help="comma-separated token ids")
    p.add_argument("--prompt-len", type=int, default=0,
                   help="sample this many prompt tokens from the model")
    p.add_argument("--eos", type=int, help="token id that ends generation early")

    p = sub.add_parser("verify", help="run the verification battery on a model")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bounds-instances", type=int, default=50)
    p.add_argument("--gap-max-d", type=int, default=40)
    p.add_argument("--mi-max-d", type=int, default=16)
    p.add_argument("--out", help="write the JSON report here as well")

    p = sub.add_parser("analyze", help="aggregate trace files")
    p.add_argument("--traces", required=True, help="glob of trace files")
    p.add_argument("--out", help="report path (.csv or .json); stdout CSV otherwise")
    p.add_argument("--scores", help="JSON mapping run id -> task score")
    p.add_argument("--group-by", default="planner,B,a")

    p = sub.add_parser("bench", help="oracle recovery-rate matrix")
    p.add_argument("--G", type=int, default=256)
    p.add_argument("--B", type=_int_list, default=[8, 16, 32, 64])
    p.add_argument("--planner", default="dus", help="comma-separated planner specs")
    p.add_argument("--model", help="chain model JSON; default flip chain")
    p.add_argument("--flip", type=float, default=0.05)
    p.add_argument("--prompt-len", type=int, default=4)
    p.add_argument("--seeds", type=int, default=5, help="number of seeded runs per cell")
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out-dir")
    p.add_argument("--a", type=float, default=2.0)
    p.add_argument("--base-skip", type=int, default=1)
    p.add_argument("--skip-c", type=float, default=0.0)
    p.add_argument("--k", type=int)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.9)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if known.config:
        with open(known.config) as fh:
            defaults = json.load(fh)
        if not isinstance(defaults, dict):
            raise DusError("config file must hold a JSON object")
        keys = {k.replace("-", "_"): v for k, v in defaults.items()}
        for sub_action in parser._subparsers._group_actions:  # type: ignore[union-attr]
            for sp in sub_action.choices.values():
                sp.set_defaults(**keys)
                for action in sp._actions:
                    if action.dest in keys:
                        action.required = False
    return parser.parse_args(argv)


# -- subcommands ----------------------------------------------------------------


def _cmd_schedule(args) -> int:
    sched = dus_schedule(DusParams(args.B, args.a, args.base_skip))
    print(json.dumps({
        "B": args.B,
        "a": args.a if args.a != int(args.a) else int(args.a),
        "groups": [list(g) for g in sched.groups],
        "step_sizes": list(sched.step_sizes),
    }))
    return 0


def _cmd_decode(args) -> int:
    if bool(args.model) == bool(args.bridge):
        raise DusError("exactly one of --model or --bridge is required")
    spec = args.planner
    if args.g0 and "+spacing" not in spec:
        spec = f"{spec}+spacing:g0={args.g0}"
    dus = DusParams(args.B, args.a, args.base_skip, args.skip_c)
    planner = make_planner(spec, seed=args.seed, k=args.k, gamma=args.gamma,
                           tau=args.tau, dus=dus)

    close = None
    if args.model:
        model = VlmcModel.load(args.model)
        denoiser = OracleDenoiser(model, eos_id=args.eos)
        vocab = denoiser.vocab
        if args.prompt:
            prompt = _int_list(args.prompt)
        elif args.prompt_len > 0:
            prompt = [int(t) for t in sample_sequence(model, args.prompt_len, args.seed)]
        else:
            prompt = []
    else:
        denoiser = connect(args.bridge)
        close = denoiser.close
        vocab = denoiser.vocab
        if args.eos is not None:
            vocab = Vocab(vocab.size, vocab.mask_id, args.eos)
        prompt = _int_list(args.prompt) if args.prompt else []

    echo = {
        "planner": spec, "a": args.a, "base_skip": args.base_skip,
        "skip_c": args.skip_c, "gamma": args.gamma, "tau": args.tau,
        "k": args.k, "model": args.model or "bridge",
        "run_id": f"{spec}-B{args.B}-G{args.G}-s{args.seed}",
    }
    try:
        result = run_generation(
            denoiser, planner, prompt, args.G, args.B,
            vocab=vocab, seed=args.seed, greedy=args.greedy, params_echo=echo,
        )
    finally:
        if close:
            close()
    if args.trace_out:
        result.trace.write(args.trace_out)
        log.info("trace written to %s", args.trace_out)
    print(json.dumps({
        "tokens": [c for c in result.sequence.cells],
        "terminal": result.trace.terminal_reason,
        "nfe_nominal": result.nfe.nominal_nfe,
        "nfe_actual": result.nfe.actual_nfe,
        "speedup": result.nfe.speedup,
    }))
    return 0


def _cmd_verify(args) -> int:
    model = VlmcModel.load(args.model)
    report = verify_model(
        model,
        seed=args.seed,
        bounds_instances=args.bounds_instances,
        gap_max_d=args.gap_max_d,
        mi_max_d=args.mi_max_d,
    )
    text = json.dumps(report, indent=1, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return 0 if report["ok"] else 2


def _cmd_analyze(args) -> int:
    paths = sorted(glob.glob(args.traces))
    if not paths:
        raise DusError(f"no traces match {args.traces!r}")
    traces = [DecodeTrace.read(p) for p in paths]
    scores = None
    if args.scores:
        with open(args.scores) as fh:
            scores = json.load(fh)
    rows = summarize(traces, group_by=tuple(args.group_by.split(",")), scores=scores)
    if args.out and args.out.endswith(".json"):
        payload = rows_to_json(rows)
    else:
        payload = rows_to_csv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(payload)
        log.info("report written to %s", args.out)
    else:
        sys.stdout.write(payload)
    return 0


def _cmd_bench(args) -> int:
    model = VlmcModel.load(args.model) if args.model else flip_chain(args.flip)
    rows = bench_mod.run_matrix(
        model,
        [s.strip() for s in args.planner.split(",")],
        args.B,
        gen_len=args.G,
        prompt_len=args.prompt_len,
        seeds=range(args.seeds),
        greedy=args.greedy,
        workers=args.workers,
        out_dir=args.out_dir,
        a=args.a,
        base_skip=args.base_skip,
        skip_threshold=args.skip_c,
        k=args.k,
        gamma=args.gamma,
        tau=args.tau,
    )
    header = f"{'planner':<24}{'B':>5}{'nfe_nom':>9}{'nfe_act':>9}{'speedup':>9}{'recovery':>10}"
    print(header)
    for r in rows:
        print(
            f"{r['planner']:<24}{r['B']:>5}{r['nfe_nominal']:>9}"
            f"{r['nfe_actual']:>9.1f}{r['speedup']:>9.2f}{r['recovery']:>10.4f}"
        )
    return 0


_COMMANDS = {
    "schedule": _cmd_schedule,
    "decode": _cmd_decode,
    "verify": _cmd_verify,
    "analyze": _cmd_analyze,
    "bench": _cmd_bench,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("DUS_SCHED_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = _apply_config(parser, list(argv) if argv is not None else sys.argv[1:])
        return _COMMANDS[args.cmd](args)
    except DusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
