"""Experiment configuration: loading, default resolution, fingerprints and object construction.

A config is a YAML mapping with sections ``dataset``, ``loss``, ``topology``,
``chain``, ``schedule``, ``run``, ``stability_plan``, ``bounds`` and
``output``, plus ``experiment``, ``master_seed``, ``budget`` and an optional
``sweep`` mapping from axis names (or dotted keys) to value lists.  Resolution
fills every default explicitly so that the fingerprint covers everything.
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
from dataclasses import dataclass

import yaml

from ..chain import build_chain
from ..engine import RunConfig, StepsizeSchedule, validate_config
from ..errors import BudgetError, ConfigurationError, DmcError
from ..problems import make_distribution, make_loss, make_minimax_loss, synth_dataset
from ..topology import build_gossip, squarest_rows

EXPERIMENTS = ("stability", "run", "gen_gap", "consensus", "mixing", "optimization", "weak_pd", "bounds", "gossip")
DEFAULT_BUDGET = 10_000

DEFAULTS = {
    "experiment": "stability",
    "master_seed": 0,
    "budget": DEFAULT_BUDGET,
    "dataset": {
        "distribution": "logistic-labels",
        "m": 4,
        "n": 8,
        "d": 5,
        "feature_bound": 1.0,
        "noise": 0.0,
        "noise_bc": 0.0,
        "planted_seed": 1,
        "seed": None,
    },
    "loss": {"kind": "logistic", "radius_W": 1.0, "radius_V": 1.0, "rho": 0.0},
    "topology": {"kind": "ring", "grid_rows": None},
    "chain": {"kind": "lazy-cycle", "h": 0.5, "p": 0.5},
    "schedule": {"kind": "constant", "eta": 0.01},
    "run": {"T": 200, "update_order": "CtG", "mode": "sgd", "output": "final"},
    "stability_plan": {"replications": 20, "pair_sample": None},
    "bounds": {"variant": "main"},
    "output": {"format": "csv"},
    "sweep": {},
}

# short axis names accepted under ``sweep``
AXES = {
    "m": "dataset.m",
    "n": "dataset.n",
    "d": "dataset.d",
    "T": "run.T",
    "eta": "schedule.eta",
    "schedule": "schedule.kind",
    "topology": "topology.kind",
    "chain": "chain.kind",
    "h": "chain.h",
    "p": "chain.p",
    "update_order": "run.update_order",
    "loss": "loss.kind",
    "rho": "loss.rho",
    "noise": "dataset.noise",
}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def fingerprint(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError("config must be a mapping")
    return doc


def resolve(doc: dict, seed: int | None = None) -> dict:
    """Merge ``doc`` over the defaults and reject unknown keys."""
    out = copy.deepcopy(DEFAULTS)
    for key, val in doc.items():
        if key not in out:
            raise ConfigurationError(f"unknown config key {key!r}")
        if isinstance(out[key], dict) and key != "sweep":
            if not isinstance(val, dict):
                raise ConfigurationError(f"section {key!r} must be a mapping")
            unknown = set(val) - set(out[key])
            if unknown:
                raise ConfigurationError(f"unknown keys in {key!r}: {sorted(unknown)}")
            out[key].update(val)
        else:
            out[key] = val
    if seed is not None:
        out["master_seed"] = int(seed)
    if out["experiment"] not in EXPERIMENTS:
        raise ConfigurationError(f"unknown experiment {out['experiment']!r}; expected one of {EXPERIMENTS}")
    if not isinstance(out["master_seed"], int) or not 0 <= out["master_seed"] < 2**64:
        raise ConfigurationError("master_seed must be an unsigned 64-bit integer")
    sweep = out["sweep"] or {}
    if not isinstance(sweep, dict):
        raise ConfigurationError("sweep must map axis names to lists")
    norm = {}
    for axis, values in sweep.items():
        path = AXES.get(axis, axis)
        sec, _, field = path.partition(".")
        if sec not in DEFAULTS or not isinstance(DEFAULTS[sec], dict) or field not in DEFAULTS[sec]:
            raise ConfigurationError(f"unknown sweep axis {axis!r}")
        if not isinstance(values, list) or not values:
            raise ConfigurationError(f"sweep axis {axis!r} needs a non-empty list")
        norm[path] = values
    out["sweep"] = norm
    if out["dataset"]["seed"] is None:
        out["dataset"]["seed"] = out["master_seed"]
    return out


def expand(cfg: dict) -> list[dict]:
    """Cross product of the sweep axes, in axis order then value order."""
    axes = list(cfg["sweep"].items())
    cells = []
    for combo in itertools.product(*[vals for _, vals in axes]) if axes else [()]:
        cell = copy.deepcopy({k: v for k, v in cfg.items() if k != "sweep"})
        params = {}
        for (path, _), val in zip(axes, combo):
            sec, _, field = path.partition(".")
            cell[sec][field] = val
            params[path] = val
        cell["params"] = params
        cells.append(cell)
    return cells


# --------------------------------------------------------------------------
# object construction


@dataclass
class CellObjects:
    run: RunConfig | None
    cell: dict


def build_run_config(cell: dict) -> RunConfig:
    ds, ls, top, ch, sc, rn = (cell[k] for k in ("dataset", "loss", "topology", "chain", "schedule", "run"))
    kw = {"feature_bound": ds["feature_bound"], "noise": ds["noise"], "seed": ds["planted_seed"]}
    if ds["distribution"] == "saddle":
        kw = {"noise": ds["noise"], "noise_bc": ds["noise_bc"], "seed": ds["planted_seed"]}
    dist = make_distribution(ds["distribution"], ds["d"], **kw)
    S = synth_dataset(dist, ds["m"], ds["n"], seed=ds["seed"])
    if rn["mode"] == "sgda":
        loss = make_minimax_loss(ls["kind"], dist, ls["radius_W"], ls["radius_V"], ls["rho"])
    else:
        loss = make_loss(ls["kind"], dist, ls["radius_W"])
    rows = top["grid_rows"]
    if top["kind"] == "grid" and rows is None:
        rows = squarest_rows(ds["m"])
    gossip = build_gossip(top["kind"], ds["m"], grid_rows=rows)
    params = {"h": ch["h"]} if ch["kind"] == "lazy-cycle" else {"p": ch["p"]} if ch["kind"] == "two-state" else {}
    chain = build_chain(ch["kind"], ds["n"], **params)
    if sc["kind"] == "sqrt_log":
        # eta = 1/sqrt(T ln T)
        import math

        T = rn["T"]
        sched = StepsizeSchedule("constant", 1.0 / math.sqrt(T * math.log(T)))
    else:
        sched = StepsizeSchedule(sc["kind"], sc.get("eta", 0.0) or 0.0)
    return RunConfig(
        dataset=S,
        loss=loss,
        gossip=gossip,
        chain=chain,
        schedule=sched,
        T=rn["T"],
        update_order=rn["update_order"],
        mode=rn["mode"],
        seed=cell["master_seed"],
    )


def runs_per_cell(cell: dict) -> int:
    """Trajectory count a cell will simulate (used for the budget)."""
    exp = cell["experiment"]
    reps = cell["stability_plan"]["replications"]
    mn = cell["dataset"]["m"] * cell["dataset"]["n"]
    if exp == "stability":
        pairs = cell["stability_plan"]["pair_sample"] or mn
        return reps * (1 + pairs)
    if exp in ("gen_gap", "optimization", "weak_pd"):
        return reps
    if exp in ("run", "consensus"):
        return 1
    return 0


def validate(cfg: dict) -> list[dict]:
    """Build and check every cell before anything runs; enforce the budget."""
    cells = expand(cfg)
    total = 0
    for i, cell in enumerate(cells):
        try:
            if cell["experiment"] not in ("mixing", "gossip", "bounds"):
                validate_config(build_run_config(cell))
            elif cell["experiment"] == "mixing":
                ch = cell["chain"]
                params = {"h": ch["h"]} if ch["kind"] == "lazy-cycle" else {"p": ch["p"]} if ch["kind"] == "two-state" else {}
                build_chain(ch["kind"], cell["dataset"]["n"], **params)
            elif cell["experiment"] == "gossip":
                top = cell["topology"]
                rows = top["grid_rows"] or (squarest_rows(cell["dataset"]["m"]) if top["kind"] == "grid" else None)
                build_gossip(top["kind"], cell["dataset"]["m"], grid_rows=rows)
        except DmcError as exc:
            raise ConfigurationError(f"sweep cell {i} ({cell['params']}): {exc}") from exc
        total += runs_per_cell(cell)
    if total > cfg["budget"]:
        raise BudgetError(f"sweep needs {total} trajectory runs, budget is {cfg['budget']}")
    return cells
