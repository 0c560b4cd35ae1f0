"""Gossip matrices for standard network topologies."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ValidationError

TOL = 1e-12
TOPOLOGIES = ("complete", "ring", "grid", "star")


@dataclass(frozen=True)
class GossipMatrix:
    entries: np.ndarray
    lam: float
    topology: str = "custom"

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def gamma(self) -> float:
        return 1.0 - self.lam


def _metropolis(edges, m: int) -> np.ndarray:
    deg = np.zeros(m, dtype=int)
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    P = np.zeros((m, m))
    for i, j in edges:
        P[i, j] = P[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    P[np.diag_indices(m)] = 1.0 - P.sum(axis=1)
    return P


def grid_edges(rows: int, cols: int):
    idx = lambda r, c: r * cols + c  # noqa: E731
    edges = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                edges.append((idx(r, c), idx(r, c + 1)))
            if r + 1 < rows:
                edges.append((idx(r, c), idx(r + 1, c)))
    return edges


def squarest_rows(m: int) -> int:
    return max(r for r in range(1, int(math.isqrt(m)) + 1) if m % r == 0)


def build_gossip(topology: str, m: int, grid_rows: int | None = None) -> GossipMatrix:
    """Build ``P`` for a named topology.

    Ring uses uniform 1/3 weights; star and grid use Metropolis-Hastings
    weights ``1/(1 + max(d_i, d_j))`` with the diagonal taking the rest.
    """
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise ParameterError(f"worker count must be a positive integer, got {m!r}")
    m = int(m)
    if topology not in TOPOLOGIES:
        raise ParameterError(f"unknown topology {topology!r}; expected one of {TOPOLOGIES}")
    if m == 1:
        return GossipMatrix(np.ones((1, 1)), 0.0, topology)
    if topology == "complete":
        P = np.full((m, m), 1.0 / m)
    elif topology == "ring":
        if m < 3:
            raise ParameterError("ring topology requires m >= 3")
        P = np.zeros((m, m))
        for i in range(m):
            P[i, i] += 1.0 / 3.0
            P[i, (i + 1) % m] += 1.0 / 3.0
            P[i, (i - 1) % m] += 1.0 / 3.0
    elif topology == "star":
        P = _metropolis([(0, j) for j in range(1, m)], m)
    else:
        if grid_rows is None:
            raise ParameterError("grid topology requires grid_rows")
        if grid_rows < 1 or m % grid_rows:
            raise ParameterError(f"grid_rows={grid_rows} does not factor m={m}")
        P = _metropolis(grid_edges(grid_rows, m // grid_rows), m)
    g = validate_gossip(P)
    return GossipMatrix(g.entries, g.lam, topology)


def consensus_rate(P: np.ndarray) -> float:
    m = P.shape[0]
    if m == 1:
        return 0.0
    vals = np.linalg.eigvalsh((P + P.T) / 2.0)
    vals = vals[np.argsort(-vals, kind="stable")]
    return float(max(abs(vals[1]), abs(vals[-1])))


def validate_gossip(P) -> GossipMatrix:
    P = np.array(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
        raise ValidationError(f"gossip matrix must be square, got shape {P.shape}")
    if np.max(np.abs(P - P.T)) > TOL:
        raise ValidationError("gossip matrix is not symmetric")
    if np.any(P < -TOL) or np.any(P > 1 + TOL):
        raise ValidationError("gossip matrix entries must lie in [0, 1]")
    if np.max(np.abs(P.sum(axis=1) - 1.0)) > TOL:
        raise ValidationError("gossip matrix rows must sum to 1")
    if np.max(np.abs(P.sum(axis=0) - 1.0)) > TOL:
        raise ValidationError("gossip matrix columns must sum to 1")
    lam = consensus_rate(P)
    if lam >= 1.0 - TOL:
        raise ValidationError("gap is zero: disconnected mixing")
    P.setflags(write=False)
    return GossipMatrix(P, lam)


def _scaling(topology: str, m: int) -> float:
    return {"ring": float(m) ** 2, "grid": float(m)}.get(topology, 1.0)


def spectral_gap_order_check(topology: str, m_list) -> list[dict]:
    """Rows of ``(m, gamma, gamma * scaling)`` exposing the Theta-orders.

    Scaling is ``m**2`` for rings, ``m`` for grids and ``1`` otherwise; grids
    use the most nearly square factorisation of ``m``.
    """
    rows = []
    for m in m_list:
        rows_arg = squarest_rows(m) if topology == "grid" else None
        g = build_gossip(topology, m, grid_rows=rows_arg)
        rows.append({"m": m, "gamma": g.gamma, "scaled": g.gamma * _scaling(topology, m)})
    return rows


def to_csv(P: GossipMatrix) -> str:
    return "\n".join(",".join(repr(float(x)) for x in row) for row in P.entries) + "\n"
