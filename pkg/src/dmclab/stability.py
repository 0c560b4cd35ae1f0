"""Monte Carlo estimates of stability, generalization and minimax risks.

Every replication ``r`` derives three independent streams from
``SeedSequence([seed, r])``: the training set ``S``, the replacement set
``S~`` and the chain paths.  All perturbed datasets ``S_(rk)`` of a
replication run as one batch next to ``S`` on the same paths, so a pair whose
replaced sample is never visited contributes exactly zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bounds as bd
from .chain import draw_worker_paths, validate_chain
from .engine import RunConfig, simulate_batch, validate_config
from .errors import ConfigurationError, ParameterError, UnsupportedError
from .problems import (
    Dataset,
    MinimaxLossSpec,
    ball_max_concave,
    draw_samples,
    empirical_risk,
    erm_reference,
    population_minimizer,
    population_risk,
    primal_minimizer,
    primal_value,
    rowdot,
    saddle_means_of,
)

OUTPUTS = ("final", "averaged")


@dataclass
class PerturbationPlan:
    """Which ``(worker, index)`` pairs to replace and how many replications to run.

    ``pairs=None`` enumerates all ``m*n`` pairs; ``pair_sample`` draws that
    many distinct pairs per replication instead.  ``fixed_data`` reuses the
    config's dataset as ``S`` in every replication.  ``alias`` sets ``S~ = S``;
    ``replacement`` fixes ``S~`` to a given dataset instead of drawing it.
    """

    replications: int = 20
    pairs: list | None = None
    pair_sample: int | None = None
    fixed_data: bool = False
    alias: bool = False
    seed: int | None = None
    replacement: Dataset | None = None


@dataclass
class StabilityReport:
    epsilon_hat: float
    stderr: float
    per_pair: np.ndarray
    per_replication: np.ndarray
    replications: int
    output: str
    mode: str
    sgda_epsilon_hat: float | None = None
    bound_name: str | None = None
    bound_value: float | None = None
    dominated: bool | None = None  # epsilon_hat - 2 stderr <= bound
    below_bound: bool | None = None  # epsilon_hat <= bound

    def to_json(self) -> str:
        d = asdict(self)
        d["per_pair"] = self.per_pair.tolist()
        d["per_replication"] = self.per_replication.tolist()
        d["schema_version"] = 1
        return json.dumps(d, sort_keys=True)

    def per_pair_csv(self) -> str:
        lines = ["worker,index,mean_distance"]
        for r in range(self.per_pair.shape[0]):
            for k in range(self.per_pair.shape[1]):
                lines.append(f"{r},{k},{float(self.per_pair[r, k])!r}")
        return "\n".join(lines) + "\n"


def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()) if x.size else 0.0, 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def replication_rngs(seed: int, r: int):
    """Generators for (S, S~, chain) of replication ``r``."""
    children = np.random.SeedSequence([int(seed), int(r)]).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def _draw(cfg: RunConfig, rng) -> Dataset:
    m, n = cfg.m, cfg.dataset.n
    X, y = draw_samples(cfg.dataset.distribution, m * n, rng)
    return Dataset(X.reshape(m, n, -1), y.reshape(m, n), cfg.dataset.distribution)


def _paths(cfg: RunConfig, rng) -> np.ndarray:
    paths = draw_worker_paths(cfg.chain, cfg.m, int(cfg.T), rng)
    if cfg.forced_index:
        paths = np.tile(paths[0], (cfg.m, 1))
    return paths


def _outputs(cfg: RunConfig, X, y, paths, etas, output: str):
    w0, v0 = cfg.initial()
    res = simulate_batch(
        cfg.loss, np.asarray(cfg.gossip.entries), X, y, paths, etas,
        order=cfg.update_order, mode=cfg.mode, w0=w0, v0=v0,
    )
    if output == "final":
        return res.w_final, res.v_final
    return res.w_avg, res.v_avg


def _replicate(cfg: RunConfig, plan: PerturbationPlan, r: int, seed: int):
    rng_s, rng_t, rng_c = replication_rngs(seed, r)
    S = cfg.dataset if plan.fixed_data else _draw(cfg, rng_s)
    if plan.alias:
        S_tilde = S
    elif plan.replacement is not None:
        S_tilde = plan.replacement
    else:
        S_tilde = _draw(cfg, rng_t)
    return S, S_tilde, _paths(cfg, rng_c), rng_t


# --------------------------------------------------------------------------
# stability


def bound_inputs_from(cfg: RunConfig, etas=None, D0: float = 0.0) -> bd.BoundInputs:
    etas = cfg.schedule.etas(int(cfg.T)) if etas is None else etas
    rep = validate_chain(cfg.chain)
    loss = cfg.loss
    return bd.BoundInputs(
        etas=etas,
        lam=cfg.gossip.lam,
        beta=loss.beta,
        L=loss.L,
        rho=getattr(loss, "rho", 0.0),
        m=cfg.m,
        n=cfg.dataset.n,
        lambda_H=rep.lambda_H,
        K_H=rep.K_H if rep.K_H is not None else 0,
        C_H=rep.C_H,
        D0=D0,
        D_w=2.0 * loss.radius_W,
        D_v=2.0 * getattr(loss, "radius_V", 0.0),
        sup_f0=loss.sup_f0,
    )


def paired_bound(cfg: RunConfig, output: str):
    """The analytic bound matching ``(mode, order, smoothness, output)``, or ``(None, None)``."""
    inp = bound_inputs_from(cfg)
    smooth = cfg.loss.beta is not None
    try:
        if cfg.mode == "sgda":
            return "sgda_stability", bd.sgda_stability_bound(inp, smooth=smooth)
        if cfg.update_order == "GtC":
            return ("gtc_stability", bd.gtc_stability_bound(inp)) if smooth else (None, None)
        if output == "averaged":
            return "averaged_iterate", bd.generalization_bound_avg(inp, smooth=smooth)
        return "sgd_stability", bd.stability_bound_sgd(inp, smooth=smooth)
    except (UnsupportedError, ConfigurationError):
        return None, None


def estimate_stability(cfg: RunConfig, plan: PerturbationPlan | None = None, output: str = "final", bound: float | None = None) -> StabilityReport:
    plan = plan or PerturbationPlan()
    if plan.replications < 1:
        raise ParameterError("replications must be at least 1")
    if output not in OUTPUTS:
        raise ParameterError(f"output must be one of {OUTPUTS}")
    etas = validate_config(cfg)
    m, n = cfg.m, cfg.dataset.n
    all_pairs = [(r, k) for r in range(m) for k in range(n)]
    if plan.pairs is not None:
        for r, k in plan.pairs:
            if not (0 <= r < m and 0 <= k < n):
                raise ParameterError(f"pair {(r, k)} outside [0,{m}) x [0,{n})")
    seed = cfg.seed if plan.seed is None else plan.seed

    sums = np.zeros((m, n))
    counts = np.zeros((m, n))
    per_rep = np.empty(plan.replications)
    for rep in range(plan.replications):
        S, St, paths, rng_t = _replicate(cfg, plan, rep, seed)
        if plan.pair_sample is not None:
            pick = rng_t.choice(len(all_pairs), size=min(plan.pair_sample, len(all_pairs)), replace=False)
            pairs = [all_pairs[i] for i in sorted(pick)]
        else:
            pairs = all_pairs if plan.pairs is None else list(plan.pairs)
        B = len(pairs) + 1
        X = np.repeat(S.X[None], B, axis=0)
        y = np.repeat(S.y[None], B, axis=0)
        for b, (r, k) in enumerate(pairs, start=1):
            X[b, r, k] = St.X[r, k]
            y[b, r, k] = St.y[r, k]
        w, v = _outputs(cfg, X, y, paths, etas, output)
        dw = w[1:] - w[0]
        dist = np.sqrt(rowdot(dw, dw))
        if v is not None:
            dv = v[1:] - v[0]
            dist = dist + np.sqrt(rowdot(dv, dv))
        for (r, k), dval in zip(pairs, dist):
            sums[r, k] += dval
            counts[r, k] += 1
        per_rep[rep] = float(np.mean(dist))

    eps, se = _mean_se(per_rep)
    per_pair = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    if bound is None:
        name, value = paired_bound(cfg, output)
    else:
        name, value = "user", float(bound)
    rep_ = StabilityReport(
        epsilon_hat=eps,
        stderr=se,
        per_pair=per_pair,
        per_replication=per_rep,
        replications=plan.replications,
        output=output,
        mode=cfg.mode,
        sgda_epsilon_hat=eps if cfg.mode == "sgda" else None,
        bound_name=name,
        bound_value=value,
    )
    if value is not None:
        rep_.dominated = bool(eps - 2.0 * se <= value)
        rep_.below_bound = bool(eps <= value)
    return rep_


# --------------------------------------------------------------------------
# risks


def _single_outputs(cfg, S, paths, etas, output):
    w, v = _outputs(cfg, S.X[None], S.y[None], paths, etas, output)
    return w[0], (None if v is None else v[0])


def estimate_generalization_gap(cfg: RunConfig, replications: int = 20, output: str = "final", seed: int | None = None, n_draws: int = 10**6) -> dict:
    """``E[R(A(S)) - R_S(A(S))]`` over fresh ``(S, paths)`` replications."""
    if replications < 1:
        raise ParameterError("replications must be at least 1")
    etas = validate_config(cfg)
    seed = cfg.seed if seed is None else seed
    gaps = np.empty(replications)
    mc_se = 0.0
    for rep in range(replications):
        S, _, paths, _ = _replicate(cfg, PerturbationPlan(replications), rep, seed)
        w, _ = _single_outputs(cfg, S, paths, etas, output)
        pop = population_risk(cfg.loss, w, S.distribution, n_draws=n_draws)
        mc_se = max(mc_se, pop.stderr)
        gaps[rep] = pop.value - empirical_risk(cfg.loss, w, S)
    gap, se = _mean_se(gaps)
    return {"gap": gap, "stderr": se, "per_replication": gaps, "population_stderr": mc_se}


def estimate_excess_decomposition(cfg: RunConfig, replications: int = 10, output: str = "averaged", seed: int | None = None, force_erm: bool = False, n_draws: int = 10**6) -> dict:
    """Split ``R(A(S)) - R(w*)`` into generalization, optimization and test parts.

    ``force_erm`` replaces ``A(S)`` by ``w_S*`` (diagnostic: the optimization
    term is then exactly zero).
    """
    if replications < 1:
        raise ParameterError("replications must be at least 1")
    etas = validate_config(cfg)
    seed = cfg.seed if seed is None else seed
    dist = cfg.dataset.distribution
    loss = cfg.loss
    w_star = population_minimizer(loss, dist)
    R_star = population_risk(loss, w_star, dist, n_draws=n_draws).value
    rows = np.empty((replications, 4))
    for rep in range(replications):
        S, _, paths, _ = _replicate(cfg, PerturbationPlan(replications), rep, seed)
        w_S = erm_reference(loss, S)
        w = w_S if force_erm else _single_outputs(cfg, S, paths, etas, output)[0]
        R_w = population_risk(loss, w, dist, n_draws=n_draws).value
        RS_w = empirical_risk(loss, w, S)
        RS_erm = empirical_risk(loss, w_S, S)
        rows[rep] = (R_w - RS_w, RS_w - RS_erm, RS_erm - R_star, R_w - R_star)
    out = {}
    for j, name in enumerate(("gen", "opt", "test", "excess")):
        out[name], out[name + "_stderr"] = _mean_se(rows[:, j])
    out["test_nonpositive"] = bool(out["test"] - 2.0 * out["test_stderr"] <= 1e-12)
    out["per_replication"] = rows
    return out


def _require_minimax(cfg: RunConfig):
    if cfg.mode != "sgda" or not isinstance(cfg.loss, MinimaxLossSpec):
        raise UnsupportedError("closed-form inner optimisation needs an SGDA run on a saddle loss")


def _weak_pd(loss: MinimaxLossSpec, mom: dict, pop_means) -> dict:
    """Weak PD risks from replication moments; the inner problems are solved exactly."""
    rho = loss.rho
    A0, b0, c0 = pop_means
    Ew, Ev = mom["w"], mom["v"]
    # population: E[R(A_w, v)] is a concave quadratic in v with linear term A0'E[w] - c0
    sup_pop = float(b0 @ Ew + 0.5 * rho * mom["ww"]) + ball_max_concave(A0.T @ Ew - c0, rho, loss.radius_V)[0]
    inf_pop = float(-c0 @ Ev - 0.5 * rho * mom["vv"]) - ball_max_concave(-(A0 @ Ev + b0), rho, loss.radius_W)[0]
    # empirical: moments couple the data means with the outputs
    sup_emp = float(mom["bw"] + 0.5 * rho * mom["ww"]) + ball_max_concave(mom["Atw"] - mom["c"], rho, loss.radius_V)[0]
    inf_emp = float(-mom["cv"] - 0.5 * rho * mom["vv"]) - ball_max_concave(-(mom["Av"] + mom["b"]), rho, loss.radius_W)[0]
    pop, emp = sup_pop - inf_pop, sup_emp - inf_emp
    return {"weak_pd_population": pop, "weak_pd_empirical": emp, "weak_pd_gen": pop - emp}


def estimate_weak_pd_gap(cfg: RunConfig, replications: int = 20, output: str = "averaged", seed: int | None = None, fixed_data: bool = False, population_means=None) -> dict:
    """Weak primal-dual population and empirical risks and their difference.

    ``population_means`` overrides the distribution's ``(A0, b0, c0)``; with
    ``fixed_data`` and the dataset's own means this makes the gap vanish.
    """
    _require_minimax(cfg)
    if replications < 1:
        raise ParameterError("replications must be at least 1")
    etas = validate_config(cfg)
    seed = cfg.seed if seed is None else seed
    plan = PerturbationPlan(replications, fixed_data=fixed_data)
    keys = ("w", "v", "ww", "vv", "Atw", "Av", "bw", "cv", "b", "c")
    samples = {k: [] for k in keys}
    for rep in range(replications):
        S, _, paths, _ = _replicate(cfg, plan, rep, seed)
        w, v = _single_outputs(cfg, S, paths, etas, output)
        A, b, c = saddle_means_of(S)
        vals = (w, v, w @ w, v @ v, A.T @ w, A @ v, b @ w, c @ v, b, c)
        for k, val in zip(keys, vals):
            samples[k].append(np.asarray(val, float))
    arrays = {k: np.stack(v) for k, v in samples.items()}
    pop_means = cfg.dataset.distribution.saddle_means() if population_means is None else population_means
    out = _weak_pd(cfg.loss, {k: a.mean(axis=0) for k, a in arrays.items()}, pop_means)
    # jackknife standard error of the (nonlinear) gap
    if replications > 1:
        loo = np.array([
            _weak_pd(cfg.loss, {k: np.delete(a, i, axis=0).mean(axis=0) for k, a in arrays.items()}, pop_means)["weak_pd_gen"]
            for i in range(replications)
        ])
        out["weak_pd_gen_stderr"] = float(math.sqrt((replications - 1) / replications * np.sum((loo - loo.mean()) ** 2)))
    else:
        out["weak_pd_gen_stderr"] = 0.0
    return out


def estimate_primal_risk(cfg: RunConfig, replications: int = 20, output: str = "averaged", seed: int | None = None, fixed_data: bool = False, population_means=None) -> dict:
    """Primal generalization error and excess primal risk (needs ``rho > 0``)."""
    _require_minimax(cfg)
    if cfg.loss.rho <= 0:
        raise UnsupportedError("primal risk needs a strongly concave dual (rho > 0)")
    if replications < 1:
        raise ParameterError("replications must be at least 1")
    etas = validate_config(cfg)
    seed = cfg.seed if seed is None else seed
    pop_means = cfg.dataset.distribution.saddle_means() if population_means is None else population_means
    _, F_min = primal_minimizer(cfg.loss, pop_means)
    plan = PerturbationPlan(replications, fixed_data=fixed_data)
    gen = np.empty(replications)
    exc = np.empty(replications)
    for rep in range(replications):
        S, _, paths, _ = _replicate(cfg, plan, rep, seed)
        w, _ = _single_outputs(cfg, S, paths, etas, output)
        F = primal_value(cfg.loss, w, pop_means)
        gen[rep] = F - primal_value(cfg.loss, w, saddle_means_of(S))
        exc[rep] = F - F_min
    g, gse = _mean_se(gen)
    e, ese = _mean_se(exc)
    return {"primal_gen": g, "primal_gen_stderr": gse, "excess_primal": e, "excess_primal_stderr": ese, "primal_min": F_min}


def estimate_optimization_error(cfg: RunConfig, replications: int = 20, output: str = "averaged", seed: int | None = None) -> dict:
    """``E_A[R_S(A(S)) - R_S(w_S*)]`` on the fixed dataset of ``cfg``, over chain replications."""
    if replications < 1:
        raise ParameterError("replications must be at least 1")
    etas = validate_config(cfg)
    seed = cfg.seed if seed is None else seed
    S = cfg.dataset
    w_S = erm_reference(cfg.loss, S)
    base = empirical_risk(cfg.loss, w_S, S)
    plan = PerturbationPlan(replications, fixed_data=True)
    errs = np.empty(replications)
    for rep in range(replications):
        _, _, paths, _ = _replicate(cfg, plan, rep, seed)
        w, _ = _single_outputs(cfg, S, paths, etas, output)
        errs[rep] = empirical_risk(cfg.loss, w, S) - base
    mean, se = _mean_se(errs)
    return {"opt_error": mean, "stderr": se, "D0": float(np.linalg.norm(w_S)), "per_replication": errs}
