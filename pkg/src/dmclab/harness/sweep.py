"""Run sweep cells and assemble deterministic report rows."""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .. import bounds as bd
from ..chain import build_chain, mixing_gaps, validate_chain
from ..engine import run_dmcsgd, run_dmcsgda
from ..problems import empirical_risk
from ..stability import (
    PerturbationPlan,
    bound_inputs_from,
    estimate_generalization_gap,
    estimate_optimization_error,
    estimate_stability,
    estimate_weak_pd_gap,
)
from ..topology import build_gossip, squarest_rows
from .config import build_run_config, canonical_json, fingerprint, validate

SCHEMA_VERSION = 1
CONSENSUS_TOL = 1e-9
MIXING_TOL = 1e-12


def _chain_for(cell):
    ch = cell["chain"]
    params = {"h": ch["h"]} if ch["kind"] == "lazy-cycle" else {"p": ch["p"]} if ch["kind"] == "two-state" else {}
    return build_chain(ch["kind"], cell["dataset"]["n"], **params)


def _corollary(cfg, smooth):
    kind = cfg.schedule.kind
    if kind not in ("constant", "decreasing"):
        return None, None
    inp = bound_inputs_from(cfg)
    main = bd.corollary_bounds(inp, smooth=smooth, schedule_kind=kind)
    app = bd.corollary_bounds(inp, smooth=smooth, schedule_kind=kind, variant="appendix") if not smooth else None
    return main, app


def _stability(cell):
    cfg = build_run_config(cell)
    sp = cell["stability_plan"]
    plan = PerturbationPlan(sp["replications"], pair_sample=sp["pair_sample"])
    rep = estimate_stability(cfg, plan, output=cell["run"]["output"])
    row = {
        "epsilon_hat": rep.epsilon_hat,
        "stderr": rep.stderr,
        "bound_name": rep.bound_name,
        "bound_value": rep.bound_value,
        "dominated": rep.dominated,
    }
    if cfg.mode == "sgd" and cfg.update_order == "CtG" and cell["run"]["output"] == "final":
        main, app = _corollary(cfg, cfg.loss.beta is not None)
        row["corollary_bound"] = main
        row["corollary_bound_appendix"] = app
    return row


def _run(cell):
    cfg = build_run_config(cell)
    rec = run_dmcsgda(cfg) if cfg.mode == "sgda" else run_dmcsgd(cfg)
    w = rec.output(cell["run"]["output"])
    row = {"w_norm": float(np.linalg.norm(w)), "consensus_final": float(rec.consensus[-1])}
    if cfg.mode == "sgd":
        row["empirical_risk"] = empirical_risk(cfg.loss, w, cfg.dataset)
    return row


def _consensus(cell):
    cfg = build_run_config(cell)
    rec = run_dmcsgd(cfg)
    bound = bd.consensus_bounds(bound_inputs_from(cfg))
    excess = rec.consensus - bound
    return {
        "max_consensus_error": float(rec.consensus.max()),
        "max_excess": float(excess.max()),
        "bound_value": float(bound.max()),
        "dominated": bool(np.all(excess <= CONSENSUS_TOL)),
    }


def _mixing(cell):
    H = _chain_for(cell)
    rep = validate_chain(H)
    T = cell["run"]["T"]
    gaps = mixing_gaps(H, T)
    env = H.n**1.5 * rep.lambda_H ** np.arange(T + 1)
    return {
        "lambda_H": rep.lambda_H,
        "max_excess": float((gaps - env).max()),
        "dominated": bool(np.all(gaps <= env + MIXING_TOL)),
    }


def _gen_gap(cell):
    cfg = build_run_config(cell)
    g = estimate_generalization_gap(cfg, cell["stability_plan"]["replications"], output=cell["run"]["output"])
    return {"gap": g["gap"], "stderr": g["stderr"]}


def _optimization(cell):
    cfg = build_run_config(cell)
    o = estimate_optimization_error(cfg, cell["stability_plan"]["replications"], output="averaged")
    b = bd.optimization_bound_convex(bound_inputs_from(cfg, D0=o["D0"]), smooth=cfg.loss.beta is not None)
    return {"opt_error": o["opt_error"], "stderr": o["stderr"], "bound_value": b.total, "dominated": bool(o["opt_error"] - 2 * o["stderr"] <= b.total)}


def _weak_pd(cell):
    cfg = build_run_config(cell)
    g = estimate_weak_pd_gap(cfg, cell["stability_plan"]["replications"], output="averaged")
    inp = bound_inputs_from(cfg)
    bound = bd.sgda_generalization_bounds(inp, smooth=True, primal=False)["weak_pd"]
    return {
        "weak_pd_gen": g["weak_pd_gen"],
        "stderr": g["weak_pd_gen_stderr"],
        "bound_value": bound,
        "dominated": bool(abs(g["weak_pd_gen"]) - 2 * g["weak_pd_gen_stderr"] <= bound),
    }


def _bounds(cell):
    cfg = build_run_config(cell)
    inp = bound_inputs_from(cfg)
    smooth = cfg.loss.beta is not None
    row = {"stability_bound": bd.stability_bound_sgd(inp, smooth=smooth) if cfg.mode == "sgd" else bd.sgda_stability_bound(inp, smooth=smooth)}
    if cfg.mode == "sgd":
        row["corollary_bound"], row["corollary_bound_appendix"] = _corollary(cfg, smooth)
        row["gtc_bound"] = bd.gtc_stability_bound(inp)
    return row


def _gossip(cell):
    top = cell["topology"]
    m = cell["dataset"]["m"]
    rows = top["grid_rows"] or (squarest_rows(m) if top["kind"] == "grid" else None)
    g = build_gossip(top["kind"], m, grid_rows=rows)
    return {"lambda": g.lam, "gamma": g.gamma}


HANDLERS = {
    "stability": _stability,
    "run": _run,
    "consensus": _consensus,
    "mixing": _mixing,
    "gen_gap": _gen_gap,
    "optimization": _optimization,
    "weak_pd": _weak_pd,
    "bounds": _bounds,
    "gossip": _gossip,
}


def run_cell(indexed) -> tuple[dict, float]:
    index, cell = indexed
    start = time.perf_counter()
    row = {"index": index, "fingerprint": fingerprint(cell), "experiment": cell["experiment"]}
    row.update(cell["params"])
    row.update(HANDLERS[cell["experiment"]](cell))
    return row, time.perf_counter() - start


def run_sweep(cfg: dict, jobs: int = 1):
    """Validate every cell, then run them (in a process pool when ``jobs > 1``).

    Rows come back in sweep order regardless of completion order.
    """
    cells = validate(cfg)
    work = list(enumerate(cells))
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_cell, work))
    else:
        results = [run_cell(w) for w in work]
    rows = [r for r, _ in results]
    timings = {"schema_version": SCHEMA_VERSION, "wall_time_s": [t for _, t in results]}
    return rows, timings


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def rows_to_csv(rows: list[dict], cfg: dict | None = None) -> str:
    buf = io.StringIO(newline="")
    if cfg is not None:
        buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
        buf.write(f"# config_fingerprint: {fingerprint(cfg)}\n")
        buf.write(f"# config: {canonical_json(cfg)}\n")
    cols: list[str] = []
    for row in rows:
        for k in row:
            if k not in cols:
                cols.append(k)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in cols])
    return buf.getvalue()


def read_csv(text: str) -> tuple[list[str], list[dict], list[str]]:
    """Parse a report CSV into ``(columns, rows, header_comments)``; values stay strings."""
    lines = text.splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    if not body:
        return [], [], comments
    reader = csv.DictReader(body)
    rows = [dict(r) for r in reader]
    return list(reader.fieldnames or []), rows, comments
