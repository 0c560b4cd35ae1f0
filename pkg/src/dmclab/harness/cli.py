"""``dmclab`` command-line entry point.

Subcommands: validate, run, stability, bounds, sweep, report.  Failures exit
nonzero and print one JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .. import bounds as bd
from ..engine import dump_replay, run_dmcsgd, run_dmcsgda
from ..errors import ConfigurationError, DmcError
from ..stability import PerturbationPlan, estimate_stability
from .config import build_run_config, canonical_json, fingerprint, load_config, resolve, validate
from .presets import PRESETS, preset_experiments
from .report import merge_reports
from .sweep import SCHEMA_VERSION, rows_to_csv, run_sweep


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(f"usage error: {message}")


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dmclab", description="Decentralized Markov-chain SGD/SGDA stability lab")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp, out=True):
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--config", help="YAML experiment config")
        src.add_argument("--preset", choices=sorted(PRESETS), help="shipped preset")
        sp.add_argument("--seed", type=_u64, help="override master_seed")
        if out:
            sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--format", choices=("csv", "json"), default=None)

    common(sub.add_parser("validate", help="resolve and check a config"), out=False)
    common(sub.add_parser("run", help="run one trajectory and dump it"))
    common(sub.add_parser("stability", help="estimate stability and pair it with its bound"))
    sw = sub.add_parser("sweep", help="run the sweep cross product")
    common(sw)
    sw.add_argument("--jobs", type=_positive, default=1)

    b = sub.add_parser("bounds", help="evaluate analytic bounds")
    common(b, out=False)
    b.add_argument("--kind", default="corollary",
                   choices=("corollary", "stability", "averaged", "gtc", "consensus", "sgda", "sgda-gen", "c-lambda"))
    b.add_argument("--eta", type=float)
    b.add_argument("--T", type=int)
    b.add_argument("--lam", type=float, default=0.0)
    b.add_argument("--beta", type=float)
    b.add_argument("--L", type=float, default=1.0)
    b.add_argument("--rho", type=float, default=0.0)
    b.add_argument("--m", type=int, default=1)
    b.add_argument("--n", type=int, default=1)
    b.add_argument("--t", type=int, help="time index for --kind consensus")
    b.add_argument("--schedule", choices=("constant", "decreasing"), default="constant")
    b.add_argument("--nonsmooth", action="store_true")
    b.add_argument("--variant", choices=("main", "appendix"), default="main")

    r = sub.add_parser("report", help="merge CSV reports")
    r.add_argument("inputs", nargs="+")
    r.add_argument("--out", default="report")
    return p


def _resolved(args) -> dict:
    if args.preset:
        return preset_experiments(args.preset, seed=args.seed)
    if args.config:
        return resolve(load_config(args.config), seed=args.seed)
    raise ConfigurationError("give --config or --preset")


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _emit(obj, fmt: str | None) -> None:
    if fmt == "csv" and isinstance(obj, dict):
        sys.stdout.write(rows_to_csv([obj]))
    else:
        sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_validate(args) -> None:
    cfg = _resolved(args)
    cells = validate(cfg)
    _emit({"schema_version": SCHEMA_VERSION, "fingerprint": fingerprint(cfg), "cells": len(cells), "config": cfg}, "json")


def cmd_run(args) -> None:
    cfg = _resolved(args)
    cell = validate(cfg)[0]
    rc = build_run_config(cell)
    rc.record = frozenset({"per_node", "consensus", "grad_norm", "sampled_indices"}) if rc.mode == "sgd" else frozenset({"per_node", "consensus", "sampled_indices"})
    rec = run_dmcsgda(rc) if rc.mode == "sgda" else run_dmcsgd(rc)
    header = f"# config: {canonical_json(cell)}\n"
    _write(os.path.join(args.out, "trajectory.csv"), header + rec.to_csv())
    dump_replay(rc, os.path.join(args.out, "replay.npz"))
    _emit({"fingerprint": fingerprint(cell), "T": rec.T, "w_final": rec.w_bar[-1].tolist(), "out": args.out}, args.format)


def cmd_stability(args) -> None:
    cfg = _resolved(args)
    cell = validate(cfg)[0]
    rc = build_run_config(cell)
    sp = cell["stability_plan"]
    rep = estimate_stability(rc, PerturbationPlan(sp["replications"], pair_sample=sp["pair_sample"]), output=cell["run"]["output"])
    doc = json.loads(rep.to_json())
    doc["fingerprint"] = fingerprint(cell)
    doc["config"] = cell
    _write(os.path.join(args.out, "stability.json"), json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _write(os.path.join(args.out, "per_pair.csv"), rep.per_pair_csv())
    summary = {k: doc[k] for k in ("epsilon_hat", "stderr", "bound_name", "bound_value", "dominated")}
    _emit(summary, args.format)


def cmd_bounds(args) -> None:
    if args.config or args.preset:
        from .sweep import _bounds

        cfg = _resolved(args)
        _emit(_bounds(validate(cfg)[0]), args.format)
        return
    if args.kind == "c-lambda":
        print(repr(bd.c_lambda(args.lam)))
        return
    if args.T is None:
        raise ConfigurationError("--T is required")
    if args.schedule == "decreasing":
        etas = 1.0 / (np.arange(1, args.T + 1) + 1.0)
    else:
        if args.eta is None:
            raise ConfigurationError("--eta is required for a constant schedule")
        etas = np.full(args.T, args.eta)
    inp = bd.BoundInputs(etas=etas, lam=args.lam, beta=args.beta, L=args.L, rho=args.rho, m=args.m, n=args.n)
    smooth = not args.nonsmooth
    if args.kind == "corollary":
        val = bd.corollary_bounds(inp, smooth=smooth, schedule_kind=args.schedule, variant=args.variant)
    elif args.kind == "stability":
        val = bd.stability_bound_sgd(inp, smooth=smooth)
    elif args.kind == "averaged":
        val = bd.generalization_bound_avg(inp, smooth=smooth)
    elif args.kind == "gtc":
        val = bd.gtc_stability_bound(inp)
    elif args.kind == "consensus":
        val = bd.consensus_bound(inp, args.T if args.t is None else args.t)
    elif args.kind == "sgda":
        val = bd.sgda_stability_bound(inp, smooth=smooth)
    else:
        vals = bd.sgda_generalization_bounds(inp, smooth=smooth, primal=args.rho > 0)
        _emit(vals, args.format or "json")
        return
    if args.format == "json":
        _emit({"kind": args.kind, "value": val}, "json")
    else:
        # 12 significant digits hide binary rounding noise (0.0992 not 0.09919999999999995)
        print(f"{val:.12g}")


def cmd_sweep(args) -> None:
    cfg = _resolved(args)
    rows, timings = run_sweep(cfg, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    if args.format == "json":
        doc = {"schema_version": SCHEMA_VERSION, "fingerprint": fingerprint(cfg), "config": cfg, "rows": rows}
        _write(os.path.join(args.out, "results.json"), json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    else:
        _write(os.path.join(args.out, "results.csv"), rows_to_csv(rows, cfg))
    _write(os.path.join(args.out, "timings.json"), json.dumps(timings, indent=2) + "\n")
    flags = [r.get("dominated") for r in rows if r.get("dominated") is not None]
    _emit({"rows": len(rows), "dominated": sum(bool(f) for f in flags), "paired": len(flags), "out": args.out}, "json")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o).__name__)


def cmd_report(args) -> None:
    _emit(merge_reports(args.inputs, args.out), "json")


COMMANDS = {
    "validate": cmd_validate,
    "run": cmd_run,
    "stability": cmd_stability,
    "bounds": cmd_bounds,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
        return 0
    except DmcError as exc:
        sys.stderr.write(json.dumps({"error": exc.kind, "message": str(exc)}) + "\n")
        return 2 if isinstance(exc, ConfigurationError) else 1
    except (OSError, ValueError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
