"""Decentralized Markov-chain SGD / SGDA simulation.

One simulation core serves single runs and stability batches: the state has a
leading batch axis ``B`` (one entry per dataset), every batch entry shares the
same sampled index paths, and every reduction is an explicit left-to-right
loop.  Batch entries with identical data therefore evolve bit-for-bit
identically.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .chain import TransitionMatrix, draw_worker_paths
from .errors import ConfigurationError, ParameterError, UnavailableError
from .problems import (
    Dataset,
    LossSpec,
    MinimaxLossSpec,
    full_gradient,
    loss_grads,
    minimax_grads,
    project,
    rowdot,
)
from .topology import GossipMatrix, validate_gossip

ORDERS = ("CtG", "GtC")
MODES = ("sgd", "sgda")
RECORD_FLAGS = frozenset({"per_node", "consensus", "grad_norm", "sampled_indices"})
STEP_TOL = 1e-12


@dataclass(frozen=True)
class StepsizeSchedule:
    """``constant`` (eta), ``decreasing`` (1/(t+1)) or ``explicit`` (values[t-1])."""

    kind: str = "constant"
    eta: float = 0.01
    values: tuple = ()

    def etas(self, T: int) -> np.ndarray:
        if self.kind == "constant":
            out = np.full(T, float(self.eta))
        elif self.kind == "decreasing":
            out = 1.0 / (np.arange(1, T + 1) + 1.0)
        elif self.kind == "explicit":
            if len(self.values) < T:
                raise ConfigurationError(f"explicit schedule has {len(self.values)} values, need {T}")
            out = np.asarray(self.values[:T], dtype=float)
        else:
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")
        if np.any(out < 0) or not np.all(np.isfinite(out)):
            raise ConfigurationError("stepsizes must be finite and non-negative")
        return out

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "constant":
            d["eta"] = float(self.eta)
        elif self.kind == "explicit":
            d["values"] = [float(v) for v in self.values]
        return d


@dataclass
class RunConfig:
    dataset: Dataset
    loss: LossSpec | MinimaxLossSpec
    gossip: GossipMatrix
    chain: TransitionMatrix
    schedule: StepsizeSchedule
    T: int
    update_order: str = "CtG"
    mode: str = "sgd"
    w0: np.ndarray | None = None
    v0: np.ndarray | None = None
    seed: int = 0
    record: frozenset = frozenset({"consensus", "sampled_indices"})
    forced_index: bool = False  # diagnostic: every node follows worker 0's path

    @property
    def m(self) -> int:
        return self.dataset.m

    @property
    def d(self) -> int:
        return self.loss.d if isinstance(self.loss, MinimaxLossSpec) else self.dataset.p

    def initial(self):
        w0 = np.zeros(self.d) if self.w0 is None else np.asarray(self.w0, float)
        v0 = np.zeros(self.d) if self.v0 is None else np.asarray(self.v0, float)
        return w0, v0


def validate_config(cfg: RunConfig) -> np.ndarray:
    """Check every invariant before any step runs; returns the stepsize vector."""
    if not isinstance(cfg.T, (int, np.integer)) or cfg.T < 0:
        raise ConfigurationError(f"T must be a non-negative integer, got {cfg.T!r}")
    if cfg.update_order not in ORDERS:
        raise ConfigurationError(f"update_order must be one of {ORDERS}")
    if cfg.mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}")
    if cfg.chain.n != cfg.dataset.n:
        raise ConfigurationError(f"chain has {cfg.chain.n} states but workers hold {cfg.dataset.n} samples")
    if cfg.gossip.m != cfg.dataset.m:
        raise ConfigurationError(f"gossip matrix is {cfg.gossip.m}x{cfg.gossip.m} but there are {cfg.dataset.m} workers")
    unknown = set(cfg.record) - RECORD_FLAGS
    if unknown:
        raise ConfigurationError(f"unknown record flags {sorted(unknown)}")
    etas = cfg.schedule.etas(int(cfg.T))
    if cfg.mode == "sgda":
        if not isinstance(cfg.loss, MinimaxLossSpec):
            raise ConfigurationError("sgda mode needs a minimax loss")
        if cfg.loss.beta > 0 and etas.sum() > 1.0 / (2.0 * cfg.loss.beta) + STEP_TOL:
            raise ConfigurationError(
                f"sum of stepsizes {etas.sum()!r} exceeds 1/(2 beta) = {1.0 / (2.0 * cfg.loss.beta)!r}"
            )
    else:
        if not isinstance(cfg.loss, LossSpec):
            raise ConfigurationError("sgd mode needs a minimisation loss")
        if cfg.loss.beta and etas.size and etas.max() > 2.0 / cfg.loss.beta + STEP_TOL:
            raise ConfigurationError(f"stepsize {etas.max()!r} exceeds 2/beta = {2.0 / cfg.loss.beta!r}")
    w0, v0 = cfg.initial()
    if w0.shape != (cfg.d,) or float(np.linalg.norm(w0)) > cfg.loss.radius_W * (1 + 1e-12):
        raise ConfigurationError("w0 must be a vector inside the primal ball")
    if cfg.mode == "sgda" and (v0.shape != (cfg.d,) or float(np.linalg.norm(v0)) > cfg.loss.radius_V * (1 + 1e-12)):
        raise ConfigurationError("v0 must be a vector inside the dual ball")
    return etas


def draw_paths(cfg: RunConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Per-worker index paths ``(m, T)``; column ``t-1`` holds ``j_t(i)``."""
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0xC4A1]))
    paths = draw_worker_paths(cfg.chain, cfg.m, int(cfg.T), rng)
    if cfg.forced_index:
        paths = np.tile(paths[0], (cfg.m, 1))
    return paths


# --------------------------------------------------------------------------
# batched core


def mix(P: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``out[..., i, :] = sum_l P[i, l] W[..., l, :]``, summed over ascending ``l``."""
    acc = P[:, 0][:, None] * W[..., 0:1, :]
    for l in range(1, P.shape[1]):
        acc = acc + P[:, l][:, None] * W[..., l : l + 1, :]
    return acc


def node_mean(W: np.ndarray) -> np.ndarray:
    acc = W[..., 0, :]
    for i in range(1, W.shape[-2]):
        acc = acc + W[..., i, :]
    return acc / W.shape[-2]


def node_dispersion(W: np.ndarray, wbar: np.ndarray) -> np.ndarray:
    """``sqrt(sum_i |wbar - w(i)|^2)`` over the node axis."""
    diff = W - wbar[..., None, :]
    sq = rowdot(diff, diff)
    acc = sq[..., 0]
    for i in range(1, sq.shape[-1]):
        acc = acc + sq[..., i]
    return np.sqrt(acc)


@dataclass
class BatchResult:
    w_final: np.ndarray  # (B, d) network average at T
    w_avg: np.ndarray  # (B, d) stepsize-weighted average of w_bar^1..T
    v_final: np.ndarray | None = None
    v_avg: np.ndarray | None = None
    w_bar: np.ndarray | None = None  # (T+1, B, d)
    v_bar: np.ndarray | None = None
    consensus: np.ndarray | None = None  # (T+1, B)
    nodes: np.ndarray | None = None  # (T+1, B, m, d)
    v_nodes: np.ndarray | None = None


def simulate_batch(
    loss,
    P: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    paths: np.ndarray,
    etas: np.ndarray,
    order: str = "CtG",
    mode: str = "sgd",
    w0=None,
    v0=None,
    history: bool = False,
    per_node: bool = False,
    consensus: bool = False,
) -> BatchResult:
    """Run ``B`` coupled trajectories; ``X`` is ``(B, m, n, p)``, ``paths`` is ``(m, T)``."""
    B, m = X.shape[0], X.shape[1]
    T = paths.shape[1]
    d = loss.d if mode == "sgda" else X.shape[-1]
    W = np.broadcast_to(np.zeros(d) if w0 is None else np.asarray(w0, float), (B, m, d)).copy()
    V = np.broadcast_to(np.zeros(d) if v0 is None else np.asarray(v0, float), (B, m, d)).copy() if mode == "sgda" else None
    rW = loss.radius_W
    rV = getattr(loss, "radius_V", None)
    nodes_idx = np.arange(m)

    wbar = node_mean(W)
    vbar = node_mean(V) if V is not None else None
    w_sum = np.zeros((B, d))
    v_sum = np.zeros((B, d)) if V is not None else None
    w_plain = np.zeros((B, d))
    v_plain = np.zeros((B, d)) if V is not None else None
    eta_sum = 0.0

    hist_w = [wbar] if history else None
    hist_v = [vbar] if history and V is not None else None
    hist_c = [node_dispersion(W, wbar)] if consensus else None
    hist_n = [W.copy()] if per_node else None
    hist_vn = [V.copy()] if per_node and V is not None else None

    for t in range(1, T + 1):
        eta = float(etas[t - 1])
        idx = paths[:, t - 1]
        Z = X[:, nodes_idx, idx]  # (B, m, p)
        if mode == "sgd":
            Y = y[:, nodes_idx, idx]
            G = loss_grads(loss, W, Z, Y)
            if order == "CtG":
                W = project(mix(P, W) - eta * G, rW)
            else:
                W = project(mix(P, W - eta * G), rW)
        else:
            Gw, Gv = minimax_grads(loss, W, V, Z)
            if order == "CtG":
                W, V = project(mix(P, W) - eta * Gw, rW), project(mix(P, V) + eta * Gv, rV)
            else:
                W, V = project(mix(P, W - eta * Gw), rW), project(mix(P, V + eta * Gv), rV)

        wbar = node_mean(W)
        w_sum = w_sum + eta * wbar
        w_plain = w_plain + wbar
        if V is not None:
            vbar = node_mean(V)
            v_sum = v_sum + eta * vbar
            v_plain = v_plain + vbar
        eta_sum += eta
        if history:
            hist_w.append(wbar)
            if V is not None:
                hist_v.append(vbar)
        if consensus:
            hist_c.append(node_dispersion(W, wbar))
        if per_node:
            hist_n.append(W.copy())
            if V is not None:
                hist_vn.append(V.copy())

    def averaged(total, plain, final):
        if T == 0:
            return final.copy()
        if eta_sum > 0:
            return total / eta_sum
        # all stepsizes zero: weights are undefined, fall back to the plain mean
        return plain / T

    res = BatchResult(w_final=wbar, w_avg=averaged(w_sum, w_plain, wbar))
    if V is not None:
        res.v_final = vbar
        res.v_avg = averaged(v_sum, v_plain, vbar)
    if history:
        res.w_bar = np.stack(hist_w)
        if V is not None:
            res.v_bar = np.stack(hist_v)
    if consensus:
        res.consensus = np.stack(hist_c)
    if per_node:
        res.nodes = np.stack(hist_n)
        if V is not None:
            res.v_nodes = np.stack(hist_vn)
    return res


# --------------------------------------------------------------------------
# single runs


@dataclass
class TrajectoryRecord:
    w_bar: np.ndarray  # (T+1, d); row t is the network average after step t
    w_avg: np.ndarray
    etas: np.ndarray
    v_bar: np.ndarray | None = None
    v_avg: np.ndarray | None = None
    consensus: np.ndarray | None = None
    paths: np.ndarray | None = None
    grad_norm: np.ndarray | None = None  # |grad R_S(w_bar_t)|, t = 0..T
    nodes: np.ndarray | None = None  # (T+1, m, d)
    v_nodes: np.ndarray | None = None
    final_nodes: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.w_bar.shape[0] - 1

    def output(self, kind: str = "averaged"):
        if kind == "final":
            return self.w_bar[-1]
        if kind == "averaged":
            return self.w_avg
        raise ParameterError(f"output must be 'final' or 'averaged', got {kind!r}")

    def grad_norm_running_min(self) -> np.ndarray:
        if self.grad_norm is None:
            raise UnavailableError("grad_norm recording was disabled for this run")
        return np.minimum.accumulate(self.grad_norm**2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        d = self.w_bar.shape[1]
        cols = ["t", "eta_t", "consensus_error"]
        if self.grad_norm is not None:
            cols.append("grad_norm")
        cols += [f"w_bar_{j}" for j in range(d)]
        if self.v_bar is not None:
            cols += [f"v_bar_{j}" for j in range(d)]
        buf.write(",".join(cols) + "\n")
        for t in range(self.T + 1):
            row = [str(t), repr(float(self.etas[t - 1])) if t else "", repr(float(self.consensus[t])) if self.consensus is not None else ""]
            if self.grad_norm is not None:
                row.append(repr(float(self.grad_norm[t])))
            row += [repr(float(x)) for x in self.w_bar[t]]
            if self.v_bar is not None:
                row += [repr(float(x)) for x in self.v_bar[t]]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


def _run(cfg: RunConfig, paths: np.ndarray | None = None) -> TrajectoryRecord:
    etas = validate_config(cfg)
    if paths is None:
        paths = draw_paths(cfg)
    w0, v0 = cfg.initial()
    res = simulate_batch(
        cfg.loss,
        np.asarray(cfg.gossip.entries),
        cfg.dataset.X[None],
        cfg.dataset.y[None],
        paths,
        etas,
        order=cfg.update_order,
        mode=cfg.mode,
        w0=w0,
        v0=v0,
        history=True,
        per_node=True,
        consensus=True,
    )
    rec = TrajectoryRecord(
        w_bar=res.w_bar[:, 0],
        w_avg=res.w_avg[0],
        etas=etas,
        meta={"order": cfg.update_order, "mode": cfg.mode, "seed": int(cfg.seed)},
    )
    rec.final_nodes = res.nodes[-1, 0]
    if cfg.mode == "sgda":
        rec.v_bar = res.v_bar[:, 0]
        rec.v_avg = res.v_avg[0]
        if "per_node" in cfg.record:
            rec.v_nodes = res.v_nodes[:, 0]
    if "per_node" in cfg.record:
        rec.nodes = res.nodes[:, 0]
    if "consensus" in cfg.record or "per_node" in cfg.record:
        rec.consensus = res.consensus[:, 0]
    if "sampled_indices" in cfg.record:
        rec.paths = paths
    if "grad_norm" in cfg.record and cfg.mode == "sgd":
        rec.grad_norm = np.array([np.linalg.norm(full_gradient(cfg.loss, w, cfg.dataset)) for w in rec.w_bar])
    return rec


def run_dmcsgd(cfg: RunConfig, paths: np.ndarray | None = None) -> TrajectoryRecord:
    if cfg.mode != "sgd":
        raise ConfigurationError("run_dmcsgd needs mode='sgd'")
    return _run(cfg, paths)


def run_dmcsgda(cfg: RunConfig, paths: np.ndarray | None = None) -> TrajectoryRecord:
    if cfg.mode != "sgda":
        raise ConfigurationError("run_dmcsgda needs mode='sgda'")
    return _run(cfg, paths)


def consensus_error(record: TrajectoryRecord, t: int) -> float:
    if record.nodes is None:
        raise UnavailableError("consensus_error needs per_node recording")
    W = record.nodes[t]
    return float(math.sqrt(sum(float(np.sum((record.w_bar[t] - W[i]) ** 2)) for i in range(W.shape[0]))))


# --------------------------------------------------------------------------
# replay


def dump_replay(cfg: RunConfig, path) -> None:
    """Write everything needed to rerun ``cfg`` bit for bit into an ``.npz`` file."""
    w0, v0 = cfg.initial()
    meta = {
        "loss": {k: getattr(cfg.loss, k) for k in cfg.loss.__dataclass_fields__},
        "loss_type": type(cfg.loss).__name__,
        "schedule": cfg.schedule.describe(),
        "T": int(cfg.T),
        "update_order": cfg.update_order,
        "mode": cfg.mode,
        "seed": int(cfg.seed),
        "record": sorted(cfg.record),
        "forced_index": bool(cfg.forced_index),
        "chain_kind": cfg.chain.kind,
        "topology": cfg.gossip.topology,
    }
    np.savez(
        path,
        meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        X=cfg.dataset.X,
        y=cfg.dataset.y,
        P=np.asarray(cfg.gossip.entries),
        H=np.asarray(cfg.chain.entries),
        w0=w0,
        v0=v0,
        planted=cfg.dataset.distribution.planted,
    )


def load_replay(path, distribution=None) -> RunConfig:
    from .problems import Distribution

    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        X, y, P, H, w0, v0, planted = (z[k].copy() for k in ("X", "y", "P", "H", "w0", "v0", "planted"))
    if distribution is None:
        distribution = Distribution("replay", X.shape[-1], 0.0, planted)
    lt = meta["loss_type"]
    loss = (MinimaxLossSpec if lt == "MinimaxLossSpec" else LossSpec)(**meta["loss"])
    g = validate_gossip(P)
    s = meta["schedule"]
    sched = StepsizeSchedule(s["kind"], s.get("eta", 0.0), tuple(s.get("values", ())))
    return RunConfig(
        dataset=Dataset(X, y, distribution),
        loss=loss,
        gossip=GossipMatrix(g.entries, g.lam, meta["topology"]),
        chain=TransitionMatrix(H, kind=meta["chain_kind"]),
        schedule=sched,
        T=meta["T"],
        update_order=meta["update_order"],
        mode=meta["mode"],
        w0=w0,
        v0=v0,
        seed=meta["seed"],
        record=frozenset(meta["record"]),
        forced_index=meta["forced_index"],
    )
