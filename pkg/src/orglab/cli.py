"""Command-line entry points.

One executable serves every role: it seeds arenas, runs as an organism
(the same invocation organisms use to execute their own children),
drives whole evolution runs, analyzes logs, and checks itself.  Each
subcommand prints one `effective-config` line from which the run can be
reproduced exactly.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

ARENA_ENV = "ORGLAB_ARENA"


def _arena_default() -> str | None:
    return os.environ.get(ARENA_ENV)


def _print_config(subcommand: str, values: dict) -> None:
    pairs = " ".join(f"{k}={values[k]}" for k in sorted(values))
    print(f"effective-config {subcommand} {pairs}")


def _add_arena_arg(p: argparse.ArgumentParser, required: bool = True) -> None:
    default = _arena_default()
    p.add_argument("--arena", type=Path, default=default,
                   required=required and default is None,
                   help=f"arena directory (default: ${ARENA_ENV})")


def cmd_init_ancestor(args) -> int:
    from .genome import (AUX_MAX, AUX_MIN, HID_MAX, HID_MIN, LR_MAX, LR_MIN,
                         NOI_MAX, NOI_MIN, Genome, _quantize_lr,
                         ancestor_genome, serialize_genome)

    base = ancestor_genome()
    lr = base.lr if args.lr is None else _quantize_lr(min(max(args.lr, LR_MIN), LR_MAX))
    hid = base.hid if args.hid is None else min(max(args.hid, HID_MIN), HID_MAX)
    noi = base.noi if args.noi is None else min(max(args.noi, NOI_MIN), NOI_MAX)
    aux = base.aux if args.aux is None else min(max(args.aux, AUX_MIN), AUX_MAX)
    genome = Genome(lr=lr, hid=hid, noi=noi, aux=aux)

    arena = Path(args.arena)
    arena.mkdir(parents=True, exist_ok=True)
    path = arena / "g0.org"
    path.write_text(serialize_genome(genome), encoding="ascii")
    _print_config("init-ancestor", {"arena": arena, "lr": f"{genome.lr:.6f}",
                                    "hid": genome.hid, "noi": genome.noi,
                                    "aux": genome.aux})
    print(path)
    return 0


def cmd_run_organism(args) -> int:
    from .organism import organism_main

    _print_config("run-organism", {
        "genome": args.genome, "arena": args.arena, "seed": args.seed,
        "max_epochs": args.max_epochs, "eval_every": args.eval_every,
        "feedback": args.feedback, "clip_norm": args.clip_norm,
        "copy_host": args.copy_host,
    })
    return organism_main(
        args.genome, args.arena, args.seed,
        max_epochs=args.max_epochs, eval_every=args.eval_every,
        feedback_mode=args.feedback, clip_norm=args.clip_norm,
        use_host_copy=args.copy_host or None)


def cmd_evolve(args) -> int:
    from .arena import ArenaCorrupt, PopulationConfig, evolve

    cfg = PopulationConfig(
        arena_path=Path(args.arena), capacity=args.capacity, budget=args.budget,
        mode=args.mode, sigma_lr=args.sigma_lr, int_span=args.int_span,
        seed=args.seed, poll_interval=args.poll_interval, eviction=args.eviction,
        max_epochs=args.max_epochs, eval_every=args.eval_every,
        feedback_mode=args.feedback, clip_norm=args.clip_norm,
        copy_host=args.copy_host, max_wall=args.max_wall)
    _print_config("evolve", {
        "arena": cfg.arena_path, "mode": cfg.mode, "capacity": cfg.capacity,
        "budget": cfg.budget, "seed": cfg.seed, "sigma_lr": cfg.sigma_lr,
        "int_span": cfg.int_span, "eviction": cfg.eviction,
        "max_epochs": cfg.max_epochs, "eval_every": cfg.eval_every,
        "feedback": cfg.feedback_mode, "clip_norm": cfg.clip_norm,
        "poll_interval": cfg.poll_interval, "copy_host": cfg.copy_host,
        "max_wall": cfg.max_wall,
    })
    try:
        report = evolve(cfg)
    except ArenaCorrupt as exc:
        print(f"evolve: {exc}", file=sys.stderr)
        return 1
    print(f"spawned {report.spawned} matured {report.matured} "
          f"evicted {report.evicted} sterile {report.sterile} "
          f"alive-at-shutdown {len(report.alive_at_end)}")
    print(f"log: {cfg.arena_path / 'events.log'}")
    return 0


def cmd_stats(args) -> int:
    from .arena import ArenaSettings
    from .events import read_events, replay_validate
    from .report import (InsufficientData, export_csv, export_svg,
                         render_figures, summarize)

    arena = Path(args.arena)
    _print_config("stats", {
        "arena": arena, "window": args.window, "index": args.index,
        "out": args.out, "svg": args.svg, "fig": args.fig,
    })
    events = read_events(arena / "events.log")
    settings = ArenaSettings.load(arena)
    validation = replay_validate(events, capacity=settings.capacity)
    if not validation.ok:
        print(f"stats: log invalid: {validation.first_violation}", file=sys.stderr)
        return 1
    try:
        stats = summarize(events, window=args.window, index=args.index)
    except InsufficientData as exc:
        print(f"stats: {exc}", file=sys.stderr)
        return 1
    out = export_csv(stats, args.out)
    print(f"csv: {out}")
    if args.svg is not None:
        print(f"svg: {export_svg(stats, args.svg)}")
    if args.fig is not None:
        for p in render_figures(stats, args.fig):
            print(f"figure: {p}")
    print(f"matured {len(stats.records)} quartile_size {stats.quartile_size} "
          f"first_quartile_mean {stats.first_quartile_mean:.1f} "
          f"last_quartile_mean {stats.last_quartile_mean:.1f} "
          f"ratio {stats.ratio:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    from .genome import ALPHABET
    from .network import (NetDims, count_params, finite_difference_grad,
                          generate_sequence, init_params, bptt)

    dims = NetDims(chars=args.chars, aux=args.aux, noi=args.noi, hid=args.hid)
    n = count_params(dims)
    _print_config("gradcheck", {
        "chars": dims.chars, "aux": dims.aux, "noi": dims.noi, "hid": dims.hid,
        "length": args.length, "seed": args.seed, "step": args.step,
        "params": n, "corrupt": args.corrupt,
    })
    if n > 500:
        print(f"gradcheck: {n} parameters exceeds the 500-parameter cap "
              f"(finite differences would crawl)", file=sys.stderr)
        return 2

    rng = np.random.default_rng(args.seed)
    params = init_params(dims, rng)
    noise = rng.standard_normal((args.length, dims.noi))
    target = rng.integers(0, dims.chars, size=args.length)
    cache = generate_sequence(params, dims, args.length, rng=None, mode="argmax",
                              noise=noise)
    analytic = bptt(cache, target, params).flatten()
    if args.corrupt:
        analytic[0] += 1.0  # negative control: break one entry on purpose
    numeric = finite_difference_grad(params, dims, target, noise, step=args.step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel))
    print(f"max relative error {rel[worst]:.3e} at parameter {worst} "
          f"(analytic {analytic[worst]:.6e}, numeric {numeric[worst]:.6e})")
    threshold = 1e-4
    if rel[worst] < threshold:
        print(f"gradcheck PASS (< {threshold})")
        return 0
    print(f"gradcheck FAIL (>= {threshold})")
    return 1


def cmd_selftest(args) -> int:
    from . import selftest

    _print_config("selftest", {"seed": args.seed})
    return selftest.run(seed=args.seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orglab",
        description="self-replicating neural programs in a finite arena")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-ancestor", help="write the ancestor genome file")
    _add_arena_arg(p)
    p.add_argument("--lr", type=float, default=None,
                   help="learning rate override (clamped to the legal range)")
    p.add_argument("--hid", type=int, default=None, help="LSTM cells per layer")
    p.add_argument("--noi", type=int, default=None, help="noise inputs")
    p.add_argument("--aux", type=int, default=None, help="auxiliary outputs")
    p.set_defaults(fn=cmd_init_ancestor)

    p = sub.add_parser("run-organism",
                       help="run one organism lifecycle in an arena")
    p.add_argument("--genome", type=Path, required=True, help="genome file (g<id>.org)")
    _add_arena_arg(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--max-epochs", type=int, default=None,
                   help="override the arena's epoch cap")
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--feedback", choices=("continuous", "onehot"), default=None)
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--copy-host", action="store_true",
                   help="launch children from a copied interpreter image")
    p.set_defaults(fn=cmd_run_organism)

    p = sub.add_parser("evolve", help="run a whole population")
    _add_arena_arg(p)
    p.add_argument("--mode", choices=("sim", "process"), default="sim")
    p.add_argument("--capacity", type=int, default=16,
                   help="max simultaneous organisms (default 16)")
    p.add_argument("--budget", type=int, default=500,
                   help="total organisms to observe (default 500)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma-lr", type=float, default=0.002,
                   help="stddev of the learning-rate mutation")
    p.add_argument("--int-span", type=int, default=5,
                   help="integer fields mutate by uniform({-span..span})")
    p.add_argument("--eviction", choices=("kill-oldest", "reject-new"),
                   default="kill-oldest")
    p.add_argument("--max-epochs", type=int, default=30_000,
                   help="per-organism epoch cap for this run")
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--feedback", choices=("continuous", "onehot"),
                   default="continuous")
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--poll-interval", type=float, default=0.2,
                   help="process mode: supervisor poll period in seconds")
    p.add_argument("--max-wall", type=float, default=None,
                   help="process mode: emergency shutdown after this many seconds")
    p.add_argument("--copy-host", action="store_true")
    p.set_defaults(fn=cmd_evolve)

    p = sub.add_parser("stats", help="summarize an arena log")
    _add_arena_arg(p)
    p.add_argument("--window", type=int, default=16,
                   help="moving-average window (default 16)")
    p.add_argument("--index", choices=("maturity", "spawn"), default="maturity")
    p.add_argument("--out", type=Path, default=Path("stats.csv"))
    p.add_argument("--svg", type=Path, default=None,
                   help="also write a trend chart here")
    p.add_argument("--fig", type=Path, default=None,
                   help="also render matplotlib figures into this directory")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("gradcheck",
                       help="compare BPTT against finite differences")
    p.add_argument("--chars", type=int, default=5)
    p.add_argument("--hid", type=int, default=4)
    p.add_argument("--aux", type=int, default=1)
    p.add_argument("--noi", type=int, default=1)
    p.add_argument("--length", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--corrupt", action="store_true",
                   help="perturb the analytic gradient (negative control)")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("selftest", help="run the built-in check suites")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_selftest)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
