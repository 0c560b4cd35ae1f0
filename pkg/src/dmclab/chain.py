"""Finite-state Markov chains that drive the per-worker sample indices.

Only symmetric (hence doubly stochastic, reversible) families are built here,
which makes the uniform distribution stationary and lets the mixing envelope
``n**1.5 * lambda_H**t`` hold for every ``t >= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import DomainError, ParameterError, PreconditionError, ValidationError

TOL = 1e-12
CHAIN_KINDS = ("uniform", "lazy-cycle", "two-state")


@dataclass(frozen=True)
class TransitionMatrix:
    entries: np.ndarray
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        H = np.array(self.entries, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1] or H.shape[0] < 1:
            raise ParameterError(f"transition matrix must be square and non-empty, got {H.shape}")
        if np.any(H < -TOL) or np.any(H > 1 + TOL):
            raise ValidationError("transition matrix entries must lie in [0, 1]")
        if np.max(np.abs(H.sum(axis=1) - 1.0)) > TOL:
            raise ValidationError("transition matrix rows must sum to 1")
        H.setflags(write=False)
        object.__setattr__(self, "entries", H)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def symmetric(self) -> bool:
        return bool(np.max(np.abs(self.entries - self.entries.T)) <= TOL)


@dataclass(frozen=True)
class ChainSpectralReport:
    lambda2: float
    lambda_n: float
    lambda_H: float
    stationary: np.ndarray
    irreducible: bool
    aperiodic: bool
    reversible: bool
    K_H: int | None
    C_H: float | None
    note: str = ""


def build_chain(kind: str, n: int, **params) -> TransitionMatrix:
    """Construct one of the supported symmetric chain families.

    ``uniform``: every entry ``1/n``. ``lazy-cycle``: hold with probability
    ``h`` and move to each cycle neighbour with ``(1-h)/2``. ``two-state``:
    flip with probability ``p``.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ParameterError(f"state count must be a positive integer, got {n!r}")
    n = int(n)
    if kind == "uniform":
        H = np.full((n, n), 1.0 / n)
    elif kind == "lazy-cycle":
        h = float(params.get("h", 0.5))
        if not 0.0 < h < 1.0:
            raise ParameterError(f"lazy-cycle hold probability must be in (0, 1), got {h}")
        H = np.zeros((n, n))
        step = (1.0 - h) / 2.0
        for i in range(n):
            H[i, i] += h
            H[i, (i + 1) % n] += step
            H[i, (i - 1) % n] += step
        params = {"h": h}
    elif kind == "two-state":
        if n != 2:
            raise ParameterError("two-state chain requires n = 2")
        p = float(params.get("p", 0.5))
        if not 0.0 < p <= 0.5:
            raise ParameterError(f"two-state flip probability must be in (0, 1/2], got {p}")
        H = np.array([[1.0 - p, p], [p, 1.0 - p]])
        params = {"p": p}
    else:
        raise ParameterError(f"unknown chain kind {kind!r}; expected one of {CHAIN_KINDS}")
    return TransitionMatrix(H, kind=kind, params=dict(params))


def _period(support: np.ndarray) -> int:
    # BFS levels from state 0; the period is the gcd of level[u] + 1 - level[v] over edges.
    n = support.shape[0]
    level = np.full(n, -1)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(support[u]):
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(int(v))
        frontier = nxt
    us, vs = np.nonzero(support)
    diffs = np.abs(level[us] + 1 - level[vs])
    return int(reduce(math.gcd, diffs.tolist(), 0))


def _sorted_eigenvalues(H: np.ndarray, symmetric: bool) -> np.ndarray:
    if symmetric:
        vals = np.linalg.eigvalsh((H + H.T) / 2.0)
    else:
        vals = np.real(np.linalg.eigvals(H))
    # stable sort keeps index order for ties
    order = np.argsort(-vals, kind="stable")
    return vals[order]


def lambda_h_from(lambda2: float, lambda_n: float) -> float:
    return (max(abs(lambda2), abs(lambda_n)) + 1.0) / 2.0


def validate_chain(H: TransitionMatrix) -> ChainSpectralReport:
    P = H.entries
    n = H.n
    support = P > 0
    n_comp, _ = connected_components(support.astype(np.int8), directed=True, connection="strong")
    irreducible = n_comp == 1
    if not irreducible:
        raise ValidationError("chain is not irreducible")
    aperiodic = _period(support) == 1
    if not aperiodic:
        raise ValidationError("chain is periodic (not aperiodic)")

    reversible = H.symmetric
    vals = _sorted_eigenvalues(P, reversible)
    if n == 1:
        lam2 = lam_n = 0.0
    else:
        lam2, lam_n = float(vals[1]), float(vals[-1])

    if reversible:
        pi = np.full(n, 1.0 / n)
        K_H, C_H, note = 0, float(n) ** 1.5, ""
    else:
        w, V = np.linalg.eig(P.T)
        vec = np.real(V[:, int(np.argmin(np.abs(w - 1.0)))])
        pi = vec / vec.sum()
        K_H, C_H = None, None
        note = "non-reversible: analytic envelopes unavailable"
        nonunit = np.sort(np.abs(np.linalg.eigvals(P)))[::-1][1:]
        lam2 = float(nonunit[0]) if nonunit.size else 0.0
        lam_n = lam2
    pi.setflags(write=False)
    return ChainSpectralReport(
        lambda2=lam2,
        lambda_n=lam_n,
        lambda_H=lambda_h_from(lam2, lam_n),
        stationary=pi,
        irreducible=irreducible,
        aperiodic=aperiodic,
        reversible=reversible,
        K_H=K_H,
        C_H=C_H,
        note=note,
    )


def sample_path(H: TransitionMatrix, start: int, T: int, rng: np.random.Generator) -> np.ndarray:
    """Return ``T`` successive states; ``path[0]`` is drawn from row ``start``."""
    n = H.n
    if not 0 <= start < n:
        raise PreconditionError(f"start state {start} outside [0, {n})")
    if T < 0:
        raise PreconditionError("step count must be non-negative")
    cdf = np.cumsum(H.entries, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(T)
    path = np.empty(T, dtype=np.int64)
    state = int(start)
    for t in range(T):
        state = min(int(np.searchsorted(cdf[state], u[t], side="right")), n - 1)
        path[t] = state
    return path


def draw_worker_paths(H: TransitionMatrix, m: int, T: int, rng: np.random.Generator) -> np.ndarray:
    """One independent path per worker, each from a uniform initial state.

    Returns an ``(m, T)`` integer array whose column ``t-1`` holds ``j_t(i)``.
    """
    paths = np.empty((m, T), dtype=np.int64)
    for i in range(m):
        start = int(rng.integers(H.n))
        paths[i] = sample_path(H, start, T, rng)
    return paths


def stationary_matrix(H: TransitionMatrix) -> np.ndarray:
    pi = validate_chain(H).stationary
    return np.tile(pi, (H.n, 1))


def mixing_gap(H: TransitionMatrix, t: int) -> float:
    """Max-row-sum norm of ``Pi* - H**t`` (``H**t`` by repeated multiplication)."""
    if t < 0:
        raise PreconditionError("t must be non-negative")
    Pi = stationary_matrix(H)
    Ht = np.eye(H.n)
    for _ in range(t):
        Ht = Ht @ H.entries
    return float(np.max(np.abs(Pi - Ht).sum(axis=1)))


def mixing_gaps(H: TransitionMatrix, t_max: int) -> np.ndarray:
    """``mixing_gap(H, t)`` for every ``t`` in ``0..t_max`` in one pass."""
    Pi = stationary_matrix(H)
    Ht = np.eye(H.n)
    out = np.empty(t_max + 1)
    for t in range(t_max + 1):
        out[t] = np.max(np.abs(Pi - Ht).sum(axis=1))
        Ht = Ht @ H.entries
    return out


def mixing_envelope(n: int, lambda_H: float, t: int) -> float:
    if not 0.5 <= lambda_H < 1.0:
        raise DomainError(f"lambda_H must lie in [1/2, 1), got {lambda_H}")
    return float(n) ** 1.5 * lambda_H**t


def to_csv(H: TransitionMatrix) -> str:
    return "\n".join(",".join(repr(float(x)) for x in row) for row in H.entries) + "\n"
