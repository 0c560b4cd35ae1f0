"""Closed-form stability, generalization and optimization bounds.

All functions are pure.  Discounted consensus sums are evaluated by the
recursion ``S_t = lam * S_{t-1} + eta_t`` rather than by geometric closed
forms, which avoids cancellation as ``lam`` approaches one and handles
arbitrary schedules uniformly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError, ParameterError, UnsupportedError

STEP_TOL = 1e-12
SQRT2 = math.sqrt(2.0)


@dataclass
class BoundInputs:
    etas: np.ndarray
    lam: float = 0.0
    beta: float | None = None
    L: float = 1.0
    rho: float = 0.0
    m: int = 1
    n: int = 1
    lambda_H: float = 0.5
    K_H: int = 0
    C_H: float | None = None
    D0: float = 0.0
    D: float | None = None  # overrides the analytic diameter when set
    D_w: float = 0.0
    D_v: float = 0.0
    sup_f0: float = 0.0

    def __post_init__(self):
        self.etas = np.asarray(self.etas, dtype=float).reshape(-1)
        if np.any(self.etas < 0):
            raise ParameterError("stepsizes must be non-negative")
        if not 0.0 <= self.lam < 1.0:
            raise DomainError(f"lambda must lie in [0, 1), got {self.lam}")
        for name in ("L", "rho", "D0", "D_w", "D_v", "sup_f0"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be non-negative")
        if self.m < 1 or self.n < 1:
            raise ParameterError("m and n must be positive")
        if self.C_H is None:
            self.C_H = float(self.n) ** 1.5

    @property
    def T(self) -> int:
        return int(self.etas.size)

    @property
    def gamma(self) -> float:
        return 1.0 - self.lam

    @classmethod
    def constant(cls, eta: float, T: int, **kw) -> "BoundInputs":
        return cls(etas=np.full(int(T), float(eta)), **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["etas"] = [float(e) for e in self.etas]
        return d


# --------------------------------------------------------------------------
# sums


def discounted_sums(etas, lam: float, convention: str = "main") -> np.ndarray:
    """Per-``t`` consensus sums.

    ``main``: ``sum_{q=1}^{t} eta_q lam^(t-q)``.  ``appendix``:
    ``sum_{q=1}^{t-1} eta_q lam^(t-q-1)``.  ``0**0`` is taken as 1.
    """
    etas = np.asarray(etas, dtype=float)
    out = np.empty(etas.size)
    s = 0.0
    for t, e in enumerate(etas):
        s = lam * s + e
        out[t] = s
    if convention == "main":
        return out
    if convention == "appendix":
        return np.concatenate([[0.0], out[:-1]]) if etas.size else out
    raise ParameterError(f"index convention must be 'main' or 'appendix', got {convention!r}")


def _double_sum(inp: BoundInputs, convention: str) -> float:
    return float(np.dot(inp.etas, discounted_sums(inp.etas, inp.lam, convention)))


def c_lambda(lam: float) -> float:
    """Constant ``C`` with ``sum_{q=1}^{t-1} lam^(t-1-q)/(q+1) <= C/t``.

    At ``lam = 0`` only the ``q = t-1`` term survives and equals ``1/t``, so
    ``C = 1`` is exact there.
    """
    if lam == 0.0:
        return 1.0
    if not 0.0 < lam < 1.0:
        raise DomainError(f"lambda must lie in [0, 1), got {lam}")
    ln = math.log(1.0 / lam)
    return (8.0 / (math.e**2 * ln) + 2.0) / (lam * ln)


def _check_smooth(inp: BoundInputs):
    if inp.beta is None:
        raise ConfigurationError("smooth bound needs beta")
    if inp.T and inp.beta > 0 and inp.etas.max() > 2.0 / inp.beta + STEP_TOL:
        raise ConfigurationError(f"stepsize {inp.etas.max()!r} exceeds 2/beta")


def _constant_eta(inp: BoundInputs) -> float:
    if inp.T == 0:
        return 0.0
    if np.any(inp.etas != inp.etas[0]):
        raise UnsupportedError("this bound needs a constant stepsize schedule")
    return float(inp.etas[0])


# --------------------------------------------------------------------------
# SGD stability


def stability_bound_sgd(inp: BoundInputs, smooth: bool = True, index_convention: str = "main") -> float:
    mn = inp.m * inp.n
    total = float(inp.etas.sum())
    double = _double_sum(inp, index_convention)
    if smooth:
        _check_smooth(inp)
        return 4.0 * inp.beta * inp.L * double + 2.0 * inp.L * total / mn
    return 2.0 * inp.L * math.sqrt(float(np.dot(inp.etas, inp.etas))) + 4.0 * inp.L * math.sqrt(double) + 4.0 * inp.L * total / mn


def corollary_bounds(inp: BoundInputs, smooth: bool = True, schedule_kind: str = "constant", variant: str = "main") -> float:
    """Closed forms for constant or ``1/(t+1)`` schedules.

    ``variant='appendix'`` swaps the non-smooth constant-step consensus factor
    ``1/sqrt(1-lam)`` for ``1/(1-lam)``.
    """
    T, L, lam, mn = inp.T, inp.L, inp.lam, inp.m * inp.n
    if variant not in ("main", "appendix"):
        raise ParameterError("variant must be 'main' or 'appendix'")
    if schedule_kind == "constant":
        eta = _constant_eta(inp)
        if smooth:
            _check_smooth(inp)
            return 4.0 * eta**2 * inp.beta * L * T / (1.0 - lam) + 2.0 * eta * L * T / mn
        denom = math.sqrt(1.0 - lam) if variant == "main" else (1.0 - lam)
        return 2.0 * L * eta * math.sqrt(T) + 4.0 * eta * L * math.sqrt(T) / denom + 4.0 * eta * L * T / mn
    if schedule_kind == "decreasing":
        expected = 1.0 / (np.arange(1, T + 1) + 1.0)
        if not np.allclose(inp.etas, expected, rtol=1e-12, atol=0.0):
            raise ParameterError("decreasing closed form needs eta_t = 1/(t+1)")
        C = c_lambda(lam)
        if smooth:
            _check_smooth(inp)
            return 4.0 * inp.beta * L * C * T / (T + 1.0) + 2.0 * L * math.log(T + 1.0) / mn
        return 2.0 * L + 4.0 * L * math.sqrt(C) + 2.0 * L * math.log(T) / mn
    raise ParameterError(f"schedule_kind must be 'constant' or 'decreasing', got {schedule_kind!r}")


def generalization_bound_avg(inp: BoundInputs, smooth: bool = True) -> float:
    """Averaged-iterate bound, constant stepsize, with the printed constants."""
    eta = _constant_eta(inp)
    T, L, lam, mn = inp.T, inp.L, inp.lam, inp.m * inp.n
    if smooth:
        _check_smooth(inp)
        return 2.0 * eta**2 * inp.beta * L * T / (1.0 - lam) + eta * L * T / mn
    return 2.0 * L * eta * math.sqrt(T) + 4.0 * eta * L * math.sqrt(T) / math.sqrt(1.0 - lam) + 4.0 * eta * L * T / mn


def consensus_bound(inp: BoundInputs, t: int, index_convention: str = "main") -> float:
    """``2 sqrt(m) L sum_{q<=t} eta_q lam^(t-q)`` (or the appendix form)."""
    if not 0 <= t <= inp.T:
        raise ParameterError(f"t must lie in [0, {inp.T}]")
    if t == 0:
        return 0.0
    s = discounted_sums(inp.etas[:t], inp.lam, index_convention)[-1]
    return 2.0 * math.sqrt(inp.m) * inp.L * float(s)


def consensus_bounds(inp: BoundInputs, index_convention: str = "main") -> np.ndarray:
    """``consensus_bound`` for every ``t = 0..T`` at once."""
    s = discounted_sums(inp.etas, inp.lam, index_convention)
    return 2.0 * math.sqrt(inp.m) * inp.L * np.concatenate([[0.0], s])


def gtc_stability_bound(inp: BoundInputs) -> float:
    return 2.0 * inp.L * float(inp.etas.sum()) / (inp.m * inp.n)


# --------------------------------------------------------------------------
# SGDA


def _check_sgda_smooth(inp: BoundInputs):
    if inp.beta is None:
        raise ConfigurationError("smooth bound needs beta")
    if inp.beta > 0 and inp.etas.sum() > 1.0 / (2.0 * inp.beta) + STEP_TOL:
        raise ConfigurationError("sum of stepsizes exceeds 1/(2 beta)")


def sgda_stability_bound(inp: BoundInputs, smooth: bool = True) -> float:
    """Smooth form with printed constants; non-smooth form is order-level (unit constants)."""
    mn = inp.m * inp.n
    total = float(inp.etas.sum())
    double = _double_sum(inp, "appendix")
    if smooth:
        _check_sgda_smooth(inp)
        return 8.0 * SQRT2 * inp.beta * inp.L * double + 4.0 * SQRT2 * inp.L * total / mn
    return math.sqrt(float(np.dot(inp.etas, inp.etas))) + math.sqrt(double) + total / mn


def sgda_generalization_bounds(inp: BoundInputs, smooth: bool = True, primal: bool = True) -> dict:
    eta = _constant_eta(inp)
    T, L, lam, mn = inp.T, inp.L, inp.lam, inp.m * inp.n
    if inp.beta is None:
        raise ConfigurationError("SGDA generalization bounds need beta")
    if smooth:
        _check_sgda_smooth(inp)
        weak = 4.0 * SQRT2 * eta**2 * inp.beta * L**2 * T / (1.0 - lam) + 2.0 * SQRT2 * eta * L**2 * T / mn
        core = 2.0 * eta**2 * inp.beta * T / (1.0 - lam) + eta * T / mn
    else:
        weak = (
            2.0 * SQRT2 * L**2 * eta * math.sqrt(T)
            + 4.0 * eta * L**2 * math.sqrt(T) / math.sqrt(1.0 - lam)
            + 4.0 * SQRT2 * eta * L**2 * T / mn
        )
        core = eta * math.sqrt(T) + eta * math.sqrt(2.0 * T) / math.sqrt(1.0 - lam) + 2.0 * eta * T / mn
    out = {"weak_pd": weak}
    if primal:
        if inp.rho <= 0:
            raise UnsupportedError("primal bound needs rho > 0")
        out["primal"] = 2.0 * SQRT2 * L**2 * (1.0 + inp.beta / inp.rho) * core
    return out


# --------------------------------------------------------------------------
# optimization error


def diameter_D(inp: BoundInputs) -> float:
    """Trajectory diameter: ``sqrt(sum_s eta_s (L^2 + 2L^2 A_s + 2 sup f(0,Z))) + D0``."""
    if inp.D is not None:
        return float(inp.D)
    A = discounted_sums(inp.etas, inp.lam, "appendix")
    L2 = inp.L**2
    inner = float(np.dot(inp.etas, L2 + 2.0 * L2 * A + 2.0 * inp.sup_f0))
    return math.sqrt(inner) + inp.D0


def truncation_window(t: int, inp: BoundInputs, D: float | None = None) -> int:
    if inp.lambda_H >= 1.0:
        raise DomainError("lambda_H must be < 1")
    if not 0.0 < inp.lambda_H:
        raise DomainError("lambda_H must be positive")
    D = diameter_D(inp) if D is None else D
    arg = 2.0 * inp.C_H * D * inp.n * t
    raw = math.ceil(math.log(arg) / math.log(1.0 / inp.lambda_H)) if arg > 0 else 0
    return int(min(max(raw, inp.K_H), t))


@dataclass
class OptimizationBound:
    total: float
    terms: dict = field(default_factory=dict)
    D: float = 0.0
    windows: list = field(default_factory=list)


def optimization_bound_convex(inp: BoundInputs, smooth: bool = True) -> OptimizationBound:
    etas, L, T = inp.etas, inp.L, inp.T
    total_eta = float(etas.sum())
    if total_eta <= 0:
        raise UnsupportedError("optimization bound is 0/0 when every stepsize is zero")
    if smooth:
        _check_smooth(inp)
    D = diameter_D(inp)
    # prefix[k] = eta_1 + ... + eta_k
    prefix = np.concatenate([[0.0], np.cumsum(etas)])
    windows, window_sum = [], 0.0
    for t in range(1, T + 1):
        Tt = truncation_window(t, inp, D)
        windows.append(Tt)
        lo = t - Tt  # sums run over q = lo+1 .. t (resp. t-1)
        upto_t = prefix[t] - prefix[lo] if Tt > 0 else 0.0
        upto_tm1 = prefix[t - 1] - prefix[lo] if Tt > 1 else 0.0
        window_sum += etas[t - 1] * (upto_t + upto_tm1)
    K = inp.K_H
    init = inp.D0**2 + 4.0 * L * D * float(prefix[max(K - 1, 0)])
    if smooth:
        cons = 2.0 * D * inp.beta * L * _double_sum(inp, "appendix")
    else:
        cons = 2.0 * D * L * total_eta
    ts = np.arange(1, T + 1)
    keep = ts >= max(K, 1)
    mixing = float(np.sum(L * etas[keep] / (2.0 * ts[keep])))
    terms = {
        "window": L**2 * window_sum / total_eta,
        "init": init / (2.0 * total_eta),
        "consensus": cons / total_eta,
        "mixing": mixing / total_eta,
        "variance": L**2 * float(np.dot(etas, etas)) / (2.0 * total_eta),
    }
    return OptimizationBound(total=float(sum(terms.values())), terms=terms, D=D, windows=windows)
