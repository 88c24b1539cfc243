"""Command-line entry point: ``nf1bsim <command> [flags]``.

Exit codes: 0 success, 1 I/O failure, 2 domain or usage error, 3 checkpoint
integrity failure. The run manifest (JSON) goes to standard output and
diagnostics to standard error. Output files default to the directory named
by ``NF1BSIM_OUT_DIR`` (current directory when unset).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .errors import DomainError, InsufficientHorizonError, IntegrityError, StructuralError
from .ledger import (
    assign_versions,
    backward_span,
    closed_form_v,
    decompose_sequences,
    forward_span,
    measure_version_difference,
    mini_batches_entered,
    overlap_condition,
)
from .metrics import SWEEP_COLUMNS, sweep
from .render import render_timeline
from .schedule import MODES, TIMEPREST, SimConfig, build_schedule, measured_backward_span, measured_forward_span

SCHEMA_VERSION = 1
OUT_DIR_ENV = "NF1BSIM_OUT_DIR"
EXIT_OK, EXIT_IO, EXIT_DOMAIN, EXIT_INTEGRITY = 0, 1, 2, 3


class UsageError(Exception):
    pass


def parse_range(text: str) -> list[int]:
    """``"a..b"`` (inclusive), a single integer, or a comma list of either."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        try:
            if ".." in part:
                lo, hi = (int(x) for x in part.split("..", 1))
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid range {text!r}; use a..b, n or a comma list") from None
    if not out:
        raise argparse.ArgumentTypeError(f"range {text!r} is empty")
    return out


def _out_path(given: str | None, default_name: str) -> Path:
    if given:
        return Path(given)
    return Path(os.environ.get(OUT_DIR_ENV, ".")) / default_name


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def _analysis(grid, ledger) -> dict:
    W, N = grid.workers, grid.micro_batches
    try:
        v = measure_version_difference(ledger)
        seqs = decompose_sequences(ledger).sequences
    except InsufficientHorizonError:
        v = seqs = None
    return {
        "f1": measured_forward_span(grid, 1),
        "b": measured_backward_span(grid, 1),
        "v_measured": v,
        "v_closed_form": closed_form_v(W, N) if grid.mode == TIMEPREST else None,
        "sequences": seqs,
    }


def schedule_document(grid, ledger) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": {"mode": grid.mode, **grid.config.to_dict()},
        "cells": [
            {"worker": t.stage, "slot": t.slot, "kind": t.kind.value, "mini": t.mini, "micro": t.micro}
            for t in sorted(grid.tasks, key=lambda t: (t.stage, t.slot))
        ],
        "ledger": ledger.to_dict(),
        "analysis": _analysis(grid, ledger),
    }


def schedule_csv(grid, ledger) -> str:
    version = {(x.task.stage, x.task.slot): x.version for x in ledger.consumptions}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["schema_version", "worker", "slot", "kind", "mini", "micro", "version"])
    for t in sorted(grid.tasks, key=lambda t: (t.stage, t.slot)):
        w.writerow([SCHEMA_VERSION, t.stage, t.slot, t.kind.value, t.mini, t.micro, version[(t.stage, t.slot)]])
    return buf.getvalue()


def _config(args) -> SimConfig:
    return SimConfig(args.workers, args.micro, args.minibatches, samples_per_mini_batch=args.samples)


# --- commands ---------------------------------------------------------------


def cmd_simulate(args) -> dict:
    config = _config(args)
    grid = build_schedule(config, args.mode)
    ledger = assign_versions(grid)
    if args.format == "json":
        text = json.dumps(schedule_document(grid, ledger), indent=2) + "\n"
    else:
        text = schedule_csv(grid, ledger)
    path = _write(_out_path(args.out, f"schedule.{args.format}"), text)
    return {"config": {"mode": args.mode, **config.to_dict()}, "outputs": [str(path)]}


def cmd_analyze(args) -> dict:
    W, N = args.workers, args.micro
    result = {
        "workers": W,
        "micro_batches": N,
        "f1": forward_span(W, N, 1),
        "f2": forward_span(W, N, 2),
        "b": backward_span(W),
        "overlap": overlap_condition(W, N),
        "mini_batches_entered": mini_batches_entered(W, N),
        "v_closed_form": closed_form_v(W, N),
    }
    if args.minibatches is not None:
        grid = build_schedule(SimConfig(W, N, args.minibatches), TIMEPREST)
        a = _analysis(grid, assign_versions(grid))
        result["mini_batches"] = args.minibatches
        result["v_measured"] = a["v_measured"]
        result["sequences"] = a["sequences"]
    return {"config": {"workers": W, "micro_batches": N, "mini_batches": args.minibatches}, "result": result}


def cmd_sweep(args) -> dict:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if not modes or bad:
        raise UsageError(f"--modes must list values from {MODES}, got {args.modes!r}")
    rows = sweep(args.workers, args.micro, modes, args.minibatches, samples_per_mini_batch=args.samples)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("schema_version",) + SWEEP_COLUMNS)
    for r in rows:
        w.writerow([SCHEMA_VERSION] + [repr(r[c]) if isinstance(r[c], float) else r[c] for c in SWEEP_COLUMNS])
    path = _write(_out_path(args.out, "sweep.csv"), buf.getvalue())
    return {
        "config": {
            "workers": args.workers,
            "micro_batches": args.micro,
            "modes": modes,
            "mini_batches": args.minibatches,
            "samples_per_mini_batch": args.samples,
        },
        "outputs": [str(path)],
        "result": {"rows": len(rows), "errors": sum(1 for r in rows if r["error"])},
    }


def cmd_render(args) -> dict:
    config = _config(args)
    grid = build_schedule(config, args.mode)
    text = render_timeline(grid, args.format)
    manifest = {"config": {"mode": args.mode, "format": args.format, **config.to_dict()}}
    if args.out == "-":
        sys.stdout.write(text)
        manifest["outputs"] = ["-"]
        manifest["_manifest_to_stderr"] = True
        return manifest
    ext = "txt" if args.format == "ascii" else "svg"
    manifest["outputs"] = [str(_write(_out_path(args.out, f"timeline.{ext}"), text))]
    return manifest


def cmd_train_demo(args) -> dict:
    # imported lazily so schedule-only commands do not pay for numpy
    from .train import TrainConfig, find_resume_epoch, restore_all, save_all, separable_task, train

    widths = tuple(int(w) for w in args.widths.split(","))
    micro = args.micro if args.mode == TIMEPREST else 1
    cfg = TrainConfig(
        widths=widths,
        loss=args.loss,
        lr=args.lr,
        minibatch_size=args.minibatch_size,
        micro_batches=micro,
        workers=args.workers,
        epochs=args.epochs,
        seed=args.seed,
    )
    if args.mode == TIMEPREST:
        SimConfig(args.workers, args.micro, 1).check()
    X, Y = separable_task(args.samples, args.seed)
    stages, start, resumed = None, 1, None
    ckpt = Path(args.checkpoint_dir) if args.checkpoint_dir else None
    if args.resume:
        if ckpt is None:
            raise UsageError("--resume needs --checkpoint-dir")
        resumed = find_resume_epoch(ckpt, args.workers)
        if resumed is not None:
            stages = restore_all(ckpt, args.workers, resumed)
            fresh = cfg.build_model()
            if [s.layers for s in stages] != [s.layers for s in fresh] or stages[0].loss != cfg.loss:
                raise UsageError("checkpointed network does not match --widths/--loss")
            start = resumed + 1

    def on_epoch(st, log):
        if ckpt is not None:
            save_all(st, log.epoch, ckpt)

    stages, logs = train(cfg, X, Y, args.mode, stages=stages, start_epoch=start, on_epoch=on_epoch)
    final = hashlib.sha256("".join(s.digest() for s in stages).encode()).hexdigest()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["schema_version", "epoch", "mode", "mean_loss", "final_loss", "digest"])
    for log in logs:
        digest = hashlib.sha256("".join(log.checksums).encode()).hexdigest()
        w.writerow([SCHEMA_VERSION, log.epoch, log.mode, repr(log.mean_loss), repr(log.losses[-1]), digest])
    path = _write(_out_path(args.out, "train_losses.csv"), buf.getvalue())
    return {
        "config": {"mode": args.mode, "samples": args.samples, **cfg.to_dict()},
        "outputs": [str(path)],
        "result": {"final_digest": final, "epochs_run": [log.epoch for log in logs], "resumed_from": resumed},
    }


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nf1bsim",
        description="Simulate nF1B / 1F1B pipeline schedules, their weight versions, and a toy trainer.",
        epilog="Exit codes: 0 ok, 1 I/O, 2 domain/usage, 3 checkpoint integrity. "
        f"Default output directory: ${OUT_DIR_ENV} or the current directory.",
    )
    p.add_argument("--version", action="version", version=f"nf1bsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def grid_flags(sp, with_m=True):
        sp.add_argument("--workers", type=int, required=True, help="pipeline stages W (>= 2)")
        sp.add_argument("--micro", type=int, required=True, help="micro-batches per mini-batch N (>= 2)")
        if with_m:
            sp.add_argument("--minibatches", type=int, required=True, help="mini-batches per epoch M (>= 1)")
            sp.add_argument("--mode", choices=MODES, default=TIMEPREST)
            sp.add_argument("--samples", type=int, default=32, help="samples per mini-batch")

    sp = sub.add_parser("simulate", help="write the schedule and version ledger")
    grid_flags(sp)
    sp.add_argument("--format", choices=("json", "csv"), default="json")
    sp.add_argument("--out", help="output file (default: schedule.<format> in the output directory)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze", help="closed-form spans and version difference")
    grid_flags(sp, with_m=False)
    sp.add_argument("--minibatches", type=int, help="also simulate this many mini-batches and measure v")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("sweep", help="metrics table over (W, N, mode)")
    sp.add_argument("--workers", type=parse_range, required=True, help="range a..b (inclusive), n, or list")
    sp.add_argument("--micro", type=parse_range, required=True, help="range a..b (inclusive), n, or list")
    sp.add_argument("--modes", default=TIMEPREST, help=f"comma list from {','.join(MODES)}")
    sp.add_argument("--minibatches", type=int, help="fixed M per cell (default 2(W+N))")
    sp.add_argument("--samples", type=int, default=32, help="samples per mini-batch")
    sp.add_argument("--out", help="output CSV (default: sweep.csv in the output directory)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("render", help="ASCII or SVG timeline")
    grid_flags(sp)
    sp.add_argument("--format", choices=("ascii", "svg"), default="ascii")
    sp.add_argument("--out", help="output file, '-' for standard output (manifest then goes to stderr)")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("train-demo", help="train the toy network on a synthetic task")
    sp.add_argument("--workers", type=int, default=2)
    sp.add_argument("--micro", type=int, default=2)
    sp.add_argument("--minibatch-size", type=int, default=10)
    sp.add_argument("--epochs", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--mode", choices=("timeprest", "sequential", "pipedream"), default=TIMEPREST)
    sp.add_argument("--lr", type=float, default=0.2)
    sp.add_argument("--samples", type=int, default=200)
    sp.add_argument("--widths", default="2,8,8,2", help="comma-separated layer widths")
    sp.add_argument("--loss", choices=("mse", "xent"), default="xent")
    sp.add_argument("--checkpoint-dir", help="write per-stage checkpoints here after every epoch")
    sp.add_argument("--resume", action="store_true", help="continue from the latest complete epoch")
    sp.add_argument("--out", help="loss table CSV (default: train_losses.csv in the output directory)")
    sp.set_defaults(func=cmd_train_demo)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.perf_counter()
    manifest = {"tool": "nf1bsim", "version": __version__, "command": args.command, "seed": getattr(args, "seed", 0)}
    code, extra = EXIT_OK, {}
    try:
        extra = args.func(args)
    except (DomainError, UsageError, StructuralError) as exc:
        code, extra = EXIT_DOMAIN, {"error": str(exc)}
    except IntegrityError as exc:
        code, extra = EXIT_INTEGRITY, {"error": str(exc)}
    except OSError as exc:
        code, extra = EXIT_IO, {"error": f"{type(exc).__name__}: {exc}"}
    if code:
        print(f"nf1bsim {args.command}: {extra['error']}", file=sys.stderr)
    to_stderr = extra.pop("_manifest_to_stderr", False)
    manifest.update({"config": None, "outputs": [], **extra})
    manifest["wall_time_s"] = round(time.perf_counter() - started, 6)
    manifest["exit_status"] = code
    print(json.dumps(manifest, indent=2), file=sys.stderr if to_stderr else sys.stdout)
    return code


if __name__ == "__main__":
    sys.exit(main())
