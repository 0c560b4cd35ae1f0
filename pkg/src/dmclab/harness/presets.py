"""Named experiment configurations shipped with the package."""

from __future__ import annotations

import copy

from ..errors import ConfigurationError
from .config import resolve

_BASE = {
    "dataset": {"distribution": "logistic-labels", "m": 4, "n": 8, "d": 5},
    "loss": {"kind": "logistic", "radius_W": 1.0},
    "topology": {"kind": "ring"},
    "chain": {"kind": "lazy-cycle", "h": 0.5},
    "schedule": {"kind": "constant", "eta": 0.01},
    "run": {"T": 200, "update_order": "CtG", "mode": "sgd", "output": "final"},
    "stability_plan": {"replications": 20},
}


def _with(**sections) -> dict:
    doc = copy.deepcopy(_BASE)
    for key, val in sections.items():
        if isinstance(val, dict) and isinstance(doc.get(key), dict):
            doc[key].update(val)
        else:
            doc[key] = val
    return doc


PRESETS = {
    "smooth-scaling": _with(experiment="stability", sweep={"T": [50, 100, 200, 400]}),
    "nonsmooth-scaling": _with(
        experiment="stability",
        loss={"kind": "hinge"},
        sweep={"T": [50, 100, 200, 400]},
    ),
    "gtc-vs-ctg": _with(experiment="stability", sweep={"update_order": ["CtG", "GtC"]}),
    "sgda-smooth": _with(
        experiment="stability",
        dataset={"distribution": "saddle", "d": 3, "noise": 0.2, "noise_bc": 0.3},
        loss={"kind": "scsc_saddle", "radius_W": 1.0, "radius_V": 1.0, "rho": 1.0},
        schedule={"kind": "constant", "eta": 0.003},
        run={"T": 100, "mode": "sgda", "output": "averaged"},
    ),
    "mixing-check": _with(
        experiment="mixing",
        run={"T": 200},
        sweep={"chain": ["uniform", "lazy-cycle"], "n": [2, 4, 8, 16, 32]},
    ),
    "consensus-check": _with(
        experiment="consensus",
        dataset={"m": 8},
        run={"T": 500},
    ),
}


def preset_experiments(name: str, seed: int | None = None) -> dict:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return resolve(copy.deepcopy(PRESETS[name]), seed=seed)
