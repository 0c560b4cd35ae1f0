"""Loss families with certified constants, synthetic data and reference solvers.

Everything that touches arrays in the inner loop (dot products, norms,
matrix-vector products) is written as an explicit, fixed-order loop over the
last axis.  Elementwise arithmetic is then bit-for-bit independent of where a
row sits in memory, so two batch entries with identical inputs always produce
identical outputs.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .errors import ConvergenceError, ParameterError, PreconditionError, UnsupportedError

DISTRIBUTIONS = ("linear-regression", "logistic-labels", "saddle")
LOSS_KINDS = ("least_squares_ball", "logistic", "hinge", "zero")
MINIMAX_KINDS = ("bilinear_saddle", "scsc_saddle")
BALL_TOL = 1e-9


# --------------------------------------------------------------------------
# small fixed-order kernels


def rowdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Inner product over the last axis, summed left to right."""
    a, b = np.broadcast_arrays(a, b)
    acc = a[..., 0] * b[..., 0]
    for j in range(1, a.shape[-1]):
        acc = acc + a[..., j] * b[..., j]
    return acc


def rownorm(a: np.ndarray) -> np.ndarray:
    return np.sqrt(rowdot(a, a))


def project(x, radius: float) -> np.ndarray:
    """Euclidean projection onto the ball of the given radius (last axis)."""
    if radius <= 0:
        raise ParameterError("projection radius must be positive")
    x = np.asarray(x, dtype=float)
    norm = rownorm(x)[..., None]
    safe = np.where(norm > radius, norm, 1.0)
    return np.where(norm > radius, x * (radius / safe), x)


def matvec(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``A @ v`` over trailing axes, fixed summation order."""
    acc = A[..., :, 0] * v[..., 0:1]
    for j in range(1, A.shape[-1]):
        acc = acc + A[..., :, j] * v[..., j : j + 1]
    return acc


def rmatvec(A: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``A.T @ w`` over trailing axes, fixed summation order."""
    acc = A[..., 0, :] * w[..., 0:1]
    for i in range(1, A.shape[-2]):
        acc = acc + A[..., i, :] * w[..., i : i + 1]
    return acc


# --------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: float


@dataclass(frozen=True, eq=False)
class Distribution:
    """A fixed data-generating distribution ``D``.

    ``planted`` is ``w°`` for the regression/classification families and the
    flattened mean ``(A0, b0, c0)`` for the saddle family.  ``noise`` is the
    label-noise half width (regression), the label-flip probability
    (classification) or the entrywise half width of the ``A`` perturbation
    (saddle); ``noise_bc`` is the radius of the ball noise on ``b`` and ``c``.
    """

    tag: str
    d: int
    feature_bound: float
    planted: np.ndarray
    noise: float = 0.0
    noise_bc: float = 0.0
    label_bound: float = 1.0

    @property
    def key(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.planted, dtype=float).tobytes()).hexdigest()[:16]
        return f"{self.tag}|{self.d}|{self.feature_bound!r}|{self.noise!r}|{self.noise_bc!r}|{h}"

    # saddle helpers
    def saddle_means(self):
        return unpack_saddle(self.planted, self.d)

    @property
    def saddle_bounds(self) -> tuple[float, float, float]:
        A0, b0, c0 = self.saddle_means()
        a = float(np.linalg.norm(A0, 2)) + self.noise * self.d
        return a, float(np.linalg.norm(b0)) + self.noise_bc, float(np.linalg.norm(c0)) + self.noise_bc


def unpack_saddle(z: np.ndarray, d: int):
    z = np.asarray(z, dtype=float)
    A = z[..., : d * d].reshape(z.shape[:-1] + (d, d))
    return A, z[..., d * d : d * d + d], z[..., d * d + d : d * d + 2 * d]


def _uniform_ball(rng: np.random.Generator, size: int, d: int, radius: float) -> np.ndarray:
    g = rng.standard_normal((size, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(size) ** (1.0 / d)
    return g * r[:, None]


def make_distribution(
    tag: str,
    d: int,
    feature_bound: float = 1.0,
    noise: float = 0.0,
    planted=None,
    planted_norm: float = 1.0,
    seed: int = 0,
    noise_bc: float = 0.0,
    a_norm: float = 0.5,
    bc_norm: float = 0.5,
) -> Distribution:
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise ParameterError(f"dimension must be a positive integer, got {d!r}")
    if tag not in DISTRIBUTIONS:
        raise ParameterError(f"unknown distribution {tag!r}; expected one of {DISTRIBUTIONS}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    if tag == "saddle":
        if planted is None:
            A0 = rng.standard_normal((d, d))
            A0 *= a_norm / np.linalg.norm(A0, 2)
            b0 = rng.standard_normal(d)
            b0 *= bc_norm / np.linalg.norm(b0)
            c0 = rng.standard_normal(d)
            c0 *= bc_norm / np.linalg.norm(c0)
            planted = np.concatenate([A0.ravel(), b0, c0])
        planted = np.asarray(planted, dtype=float)
        dist = Distribution(tag, int(d), 0.0, planted, float(noise), float(noise_bc), 0.0)
        a, b, c = dist.saddle_bounds
        A0 = unpack_saddle(planted, d)[0]
        fb = float(np.linalg.norm(A0)) + noise * d + b + c
        return Distribution(tag, int(d), fb, planted, float(noise), float(noise_bc), 0.0)

    if planted is None:
        w = rng.standard_normal(d)
        planted = w * (planted_norm / np.linalg.norm(w))
    planted = np.asarray(planted, dtype=float)
    if tag == "linear-regression":
        label_bound = feature_bound * float(np.linalg.norm(planted)) + noise
    else:
        if not 0.0 <= noise < 0.5:
            raise ParameterError("label-flip probability must be in [0, 1/2)")
        label_bound = 1.0
    return Distribution(tag, int(d), float(feature_bound), planted, float(noise), 0.0, label_bound)


def draw_samples(dist: Distribution, size: int, rng: np.random.Generator):
    """Draw ``size`` i.i.d. samples; returns ``(X, y)`` with ``X`` of shape ``(size, p)``."""
    d = dist.d
    if dist.tag == "saddle":
        A0, b0, c0 = dist.saddle_means()
        E = rng.uniform(-dist.noise, dist.noise, size=(size, d, d)) if dist.noise > 0 else np.zeros((size, d, d))
        nb = _uniform_ball(rng, size, d, dist.noise_bc) if dist.noise_bc > 0 else np.zeros((size, d))
        nc = _uniform_ball(rng, size, d, dist.noise_bc) if dist.noise_bc > 0 else np.zeros((size, d))
        A = A0[None] + E
        X = np.concatenate([A.reshape(size, d * d), b0 + nb, c0 + nc], axis=1)
        return X, np.zeros(size)
    X = _uniform_ball(rng, size, d, dist.feature_bound)
    lin = rowdot(X, dist.planted)
    if dist.tag == "linear-regression":
        y = lin + (rng.uniform(-dist.noise, dist.noise, size) if dist.noise > 0 else 0.0)
    else:
        y = np.where(lin >= 0, 1.0, -1.0)
        if dist.noise > 0:
            flip = rng.random(size) < dist.noise
            y = np.where(flip, -y, y)
    return X, np.asarray(y, dtype=float)


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray  # (m, n, p)
    y: np.ndarray  # (m, n)
    distribution: Distribution
    seed: int | None = None

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[2]

    def sample(self, r: int, k: int) -> Sample:
        return Sample(self.X[r, k].copy(), float(self.y[r, k]))

    def with_replaced(self, r: int, k: int, other: "Dataset") -> "Dataset":
        X, y = self.X.copy(), self.y.copy()
        X[r, k], y[r, k] = other.X[r, k], other.y[r, k]
        return Dataset(X, y, self.distribution, None)

    def to_csv(self) -> str:
        head = ["worker", "index"] + [f"x{j}" for j in range(self.p)] + ["label"]
        lines = [",".join(head)]
        for r in range(self.m):
            for k in range(self.n):
                vals = [str(r), str(k)] + [repr(float(v)) for v in self.X[r, k]] + [repr(float(self.y[r, k]))]
                lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


def synth_dataset(distribution, m: int, n: int, d: int | None = None, seed: int = 0, **params) -> Dataset:
    """Draw ``m * n`` i.i.d. samples, ``n`` per worker, reproducibly from ``seed``."""
    for name, val in (("m", m), ("n", n)):
        if not isinstance(val, (int, np.integer)) or val < 1:
            raise ParameterError(f"{name} must be a positive integer, got {val!r}")
    if isinstance(distribution, str):
        if d is None:
            raise ParameterError("dimension d is required when the distribution is given by tag")
        distribution = make_distribution(distribution, d, **params)
    elif d is not None and d != distribution.d:
        raise ParameterError("d disagrees with the distribution's dimension")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xDA7A]))
    X, y = draw_samples(distribution, m * n, rng)
    return Dataset(X.reshape(m, n, -1), y.reshape(m, n), distribution, int(seed))


# --------------------------------------------------------------------------
# minimisation losses


@dataclass(frozen=True)
class LossSpec:
    kind: str
    L: float
    beta: float | None
    radius_W: float
    sup_f0: float = 0.0

    @property
    def smooth(self) -> bool:
        return self.beta is not None


def make_loss(kind: str, distribution: Distribution, radius_W: float) -> LossSpec:
    """Certify ``(L, beta)`` analytically for ``kind`` on the ball of ``radius_W``."""
    if radius_W <= 0:
        raise ParameterError("radius_W must be positive")
    B = distribution.feature_bound
    if kind == "least_squares_ball":
        Y = distribution.label_bound
        return LossSpec(kind, B * (B * radius_W + Y), B * B, float(radius_W), Y * Y / 2.0)
    if kind == "logistic":
        return LossSpec(kind, B, B * B / 4.0, float(radius_W), math.log(2.0))
    if kind == "hinge":
        return LossSpec(kind, B, None, float(radius_W), 1.0)
    if kind == "zero":
        return LossSpec(kind, 0.0, 0.0, float(radius_W), 0.0)
    raise ParameterError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def loss_values(loss: LossSpec, W, X, y) -> np.ndarray:
    W, X, y = np.asarray(W, float), np.asarray(X, float), np.asarray(y, float)
    if loss.kind == "zero":
        return np.zeros(np.broadcast_shapes(W.shape[:-1], X.shape[:-1], y.shape))
    lin = rowdot(W, X)
    if loss.kind == "least_squares_ball":
        return 0.5 * (lin - y) ** 2
    if loss.kind == "logistic":
        return np.logaddexp(0.0, -y * lin)
    if loss.kind == "hinge":
        return np.maximum(0.0, 1.0 - y * lin)
    raise ParameterError(f"unknown loss kind {loss.kind!r}")


def loss_grads(loss: LossSpec, W, X, y) -> np.ndarray:
    """Batched (sub)gradients in ``w``; the hinge kink maps to the zero subgradient."""
    W, X, y = np.asarray(W, float), np.asarray(X, float), np.asarray(y, float)
    if loss.kind == "zero":
        return np.zeros(np.broadcast_shapes(W.shape, X.shape))
    lin = rowdot(W, X)
    if loss.kind == "least_squares_ball":
        coef = lin - y
    elif loss.kind == "logistic":
        coef = -y * expit(-y * lin)
    elif loss.kind == "hinge":
        coef = np.where(y * lin < 1.0, -y, 0.0)
    else:
        raise ParameterError(f"unknown loss kind {loss.kind!r}")
    return coef[..., None] * X


def _check_ball(w, radius: float, what: str = "w"):
    if float(np.linalg.norm(w)) > radius * (1 + BALL_TOL) + BALL_TOL:
        raise PreconditionError(f"{what} lies outside the ball of radius {radius}; project first")


def value(loss: LossSpec, w, z: Sample) -> float:
    _check_ball(w, loss.radius_W)
    return float(loss_values(loss, w, z.features, z.label))


def grad(loss: LossSpec, w, z: Sample) -> np.ndarray:
    _check_ball(w, loss.radius_W)
    return loss_grads(loss, np.asarray(w, float), z.features, z.label)


def empirical_risk(loss: LossSpec, w, S: Dataset) -> float:
    return float(np.mean(loss_values(loss, np.asarray(w, float), S.X, S.y)))


def full_gradient(loss: LossSpec, w, S: Dataset) -> np.ndarray:
    g = loss_grads(loss, np.asarray(w, float), S.X, S.y)
    return g.reshape(-1, g.shape[-1]).mean(axis=0)


class RiskEstimate(NamedTuple):
    value: float
    stderr: float
    n_draws: int  # 0 for closed form


_POPULATION_CACHE: dict = {}


def population_sample(dist: Distribution, n_draws: int, seed: int = 0):
    key = (dist.key, int(n_draws), int(seed))
    if key not in _POPULATION_CACHE:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x909]))
        _POPULATION_CACHE[key] = draw_samples(dist, int(n_draws), rng)
    return _POPULATION_CACHE[key]


def _ls_closed_form(dist: Distribution, w) -> float:
    diff = np.asarray(w, float) - dist.planted
    second_moment = dist.feature_bound**2 / (dist.d + 2.0)
    return 0.5 * second_moment * float(diff @ diff) + 0.5 * dist.noise**2 / 3.0


def population_risk(loss: LossSpec, w, distribution: Distribution, n_draws: int = 10**6, seed: int = 0) -> RiskEstimate:
    """``E_Z f(w; Z)``: closed form for least squares on the planted model, else Monte Carlo."""
    if loss.kind == "zero":
        return RiskEstimate(0.0, 0.0, 0)
    if loss.kind == "least_squares_ball" and distribution.tag == "linear-regression":
        return RiskEstimate(_ls_closed_form(distribution, w), 0.0, 0)
    X, y = population_sample(distribution, n_draws, seed)
    vals = loss_values(loss, np.asarray(w, float), X, y)
    return RiskEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals))), int(n_draws))


# --------------------------------------------------------------------------
# minimax losses


@dataclass(frozen=True)
class MinimaxLossSpec:
    """``f = w'A v + b'w - c'v + (rho/2)|w|^2 - (rho/2)|v|^2`` with ``z = (A, b, c)``."""

    kind: str
    L: float
    beta: float
    rho: float
    radius_W: float
    radius_V: float
    d: int
    sup_f0: float = 0.0

    @property
    def smooth(self) -> bool:
        return True

    @property
    def D_w(self) -> float:
        return 2.0 * self.radius_W

    @property
    def D_v(self) -> float:
        return 2.0 * self.radius_V


def make_minimax_loss(kind: str, distribution: Distribution, radius_W: float, radius_V: float, rho: float = 0.0) -> MinimaxLossSpec:
    if distribution.tag != "saddle":
        raise ParameterError("minimax losses need the saddle distribution")
    if kind == "bilinear_saddle":
        if rho != 0:
            raise ParameterError("bilinear_saddle has rho = 0")
    elif kind == "scsc_saddle":
        if rho <= 0:
            raise ParameterError("scsc_saddle needs rho > 0")
    else:
        raise ParameterError(f"unknown minimax kind {kind!r}; expected one of {MINIMAX_KINDS}")
    a, b, c = distribution.saddle_bounds
    gw = a * radius_V + b + rho * radius_W
    gv = a * radius_W + c + rho * radius_V
    L = math.hypot(gw, gv)
    beta = math.hypot(rho, a)
    return MinimaxLossSpec(kind, L, beta, float(rho), float(radius_W), float(radius_V), distribution.d, 0.0)


def minimax_values(loss: MinimaxLossSpec, W, V, Z) -> np.ndarray:
    A, b, c = unpack_saddle(Z, loss.d)
    W, V = np.asarray(W, float), np.asarray(V, float)
    return (
        rowdot(W, matvec(A, V))
        + rowdot(b, W)
        - rowdot(c, V)
        + 0.5 * loss.rho * (rowdot(W, W) - rowdot(V, V))
    )


def minimax_grads(loss: MinimaxLossSpec, W, V, Z):
    A, b, c = unpack_saddle(Z, loss.d)
    W, V = np.asarray(W, float), np.asarray(V, float)
    gw = matvec(A, V) + b + loss.rho * W
    gv = rmatvec(A, W) - c - loss.rho * V
    return gw, gv


def grad_minimax(loss: MinimaxLossSpec, w, v, z) -> tuple[np.ndarray, np.ndarray]:
    _check_ball(w, loss.radius_W, "w")
    _check_ball(v, loss.radius_V, "v")
    feats = z.features if isinstance(z, Sample) else z
    return minimax_grads(loss, w, v, feats)


def saddle_means_of(S: Dataset):
    """Empirical means of ``(A, b, c)`` over every sample in ``S``."""
    return unpack_saddle(S.X.reshape(-1, S.p).mean(axis=0), S.distribution.d)


def ball_max_concave(g, rho: float, radius: float):
    """``max_{|v| <= radius} g'v - (rho/2)|v|^2`` and its maximiser."""
    g = np.asarray(g, float)
    ng = float(np.linalg.norm(g))
    if rho > 0 and ng / rho <= radius:
        return ng * ng / (2.0 * rho), g / rho
    if ng == 0.0:
        return 0.0, np.zeros_like(g)
    return radius * ng - 0.5 * rho * radius * radius, g * (radius / ng)


def minimax_objective(loss: MinimaxLossSpec, w, v, means) -> float:
    A, b, c = means
    w, v = np.asarray(w, float), np.asarray(v, float)
    return float(w @ A @ v + b @ w - c @ v + 0.5 * loss.rho * (w @ w - v @ v))


def primal_value(loss: MinimaxLossSpec, w, means) -> float:
    """``max_v R(w, v)`` over the dual ball, exactly."""
    A, b, c = means
    w = np.asarray(w, float)
    inner, _ = ball_max_concave(A.T @ w - c, loss.rho, loss.radius_V)
    return float(b @ w + 0.5 * loss.rho * (w @ w) + inner)


def dual_value(loss: MinimaxLossSpec, v, means) -> float:
    """``min_w R(w, v)`` over the primal ball, exactly."""
    A, b, c = means
    v = np.asarray(v, float)
    inner, _ = ball_max_concave(-(A @ v + b), loss.rho, loss.radius_W)
    return float(-c @ v - 0.5 * loss.rho * (v @ v) - inner)


def primal_minimizer(loss: MinimaxLossSpec, means, tol: float = 1e-10, max_iter: int = 200_000):
    """Minimise ``F(w) = max_v R(w, v)`` over the primal ball (needs ``rho > 0``)."""
    if loss.rho <= 0:
        raise UnsupportedError("primal risk needs a strongly concave dual (rho > 0)")
    A, b, c = means
    step = 1.0 / (loss.rho + float(np.linalg.norm(A, 2)) ** 2 / loss.rho)

    def gradF(w):
        _, vstar = ball_max_concave(A.T @ w - c, loss.rho, loss.radius_V)
        return b + loss.rho * w + A @ vstar

    w = _fista(gradF, np.zeros(loss.d), step, loss.radius_W, tol, max_iter)
    return w, primal_value(loss, w, means)


# --------------------------------------------------------------------------
# reference solvers


def _fista(gradf, w0, step, radius, tol, max_iter):
    w = w0.copy()
    z = w.copy()
    tk = 1.0
    res = np.inf
    for _ in range(max_iter):
        w_new = project(z - step * gradf(z), radius)
        tk_new = (1.0 + math.sqrt(1.0 + 4.0 * tk * tk)) / 2.0
        z = w_new + ((tk - 1.0) / tk_new) * (w_new - w)
        w, tk = w_new, tk_new
        # gradient-mapping residual at the current iterate
        res = float(np.linalg.norm(w - project(w - step * gradf(w), radius))) / step
        if res <= tol:
            return w
    raise ConvergenceError(f"projected gradient did not reach tolerance {tol}", residual=res)


def erm_reference(loss: LossSpec, S: Dataset, radius: float | None = None, tol: float | None = None, max_iter: int = 200_000) -> np.ndarray:
    """Empirical risk minimiser ``w_S*`` on the ball.

    Least squares: normal equations, refined by projected gradient when the
    solution leaves the ball (tolerance 1e-10).  Logistic: accelerated
    projected gradient to stationarity 1e-8.  Hinge: second-order cone
    program.
    """
    radius = loss.radius_W if radius is None else radius
    X = S.X.reshape(-1, S.p)
    y = S.y.reshape(-1)
    N = X.shape[0]
    if loss.kind == "zero":
        return np.zeros(S.p)
    if loss.kind == "least_squares_ball":
        w, *_ = np.linalg.lstsq(X, y, rcond=None)
        if np.linalg.norm(w) <= radius:
            return w
        beta_emp = max(float(np.linalg.eigvalsh(X.T @ X / N)[-1]), 1e-12)
        gradf = lambda w: X.T @ (X @ w - y) / N  # noqa: E731
        return _fista(gradf, project(w, radius), 1.0 / beta_emp, radius, 1e-10 if tol is None else tol, max_iter)
    if loss.kind == "logistic":
        beta_emp = max(float(np.linalg.eigvalsh(X.T @ X / N)[-1]) / 4.0, 1e-12)

        def gradf(w):
            s = y * (X @ w)
            return X.T @ (-y * expit(-s)) / N

        return _fista(gradf, np.zeros(S.p), 1.0 / beta_emp, radius, 1e-8 if tol is None else tol, max_iter)
    if loss.kind == "hinge":
        import cvxpy as cp

        w = cp.Variable(S.p)
        obj = cp.Minimize(cp.sum(cp.pos(1 - cp.multiply(y, X @ w))) / N)
        prob = cp.Problem(obj, [cp.norm(w, 2) <= radius])
        prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
        if prob.status not in ("optimal", "optimal_inaccurate") or w.value is None:
            raise ConvergenceError(f"hinge ERM solver returned status {prob.status}")
        return project(np.asarray(w.value, float), radius)
    raise UnsupportedError(f"no reference solver for {loss.kind!r}")


def population_minimizer(loss: LossSpec, distribution: Distribution, n_draws: int = 10**5, seed: int = 0) -> np.ndarray:
    """``w*``: closed form for planted least squares, else ERM on a large population draw."""
    if loss.kind == "zero":
        return np.zeros(distribution.d)
    if loss.kind == "least_squares_ball" and distribution.tag == "linear-regression":
        # isotropic second moment: the ball-constrained minimiser is the projected plant
        return project(distribution.planted, loss.radius_W)
    X, y = population_sample(distribution, n_draws, seed)
    big = Dataset(X[None], y[None], distribution)
    return erm_reference(loss, big)
