import math

import numpy as np
import pytest

from dmclab.errors import ParameterError, ValidationError
from dmclab.topology import (
    build_gossip,
    consensus_rate,
    spectral_gap_order_check,
    squarest_rows,
    to_csv,
    validate_gossip,
)


def _ring_lambda(m):
    # circulant eigenvalues 1/3 + (2/3) cos(2 pi k / m)
    vals = 1 / 3 + 2 / 3 * np.cos(2 * np.pi * np.arange(1, m) / m)
    return float(np.max(np.abs(vals)))


@pytest.mark.parametrize("m", [4, 5, 8, 16, 32])
def test_ring_lambda_matches_circulant_formula(m):
    assert build_gossip("ring", m).lam == pytest.approx(_ring_lambda(m), abs=1e-12)


def test_ring_known_values():
    assert build_gossip("ring", 8).lam == pytest.approx(1 / 3 + 2 / 3 * math.cos(math.pi / 4), abs=1e-12)
    assert build_gossip("ring", 4).lam == pytest.approx(1 / 3, abs=1e-12)


def test_complete_has_zero_lambda():
    assert build_gossip("complete", 7).lam == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("m", [4, 8, 16])
def test_star_gap_is_one_over_m(m):
    # Metropolis star: the leaf-difference eigenvectors pin lambda_2 at 1 - 1/m
    assert build_gossip("star", m).gamma == pytest.approx(1 / m, abs=1e-12)


def test_single_worker():
    g = build_gossip("ring", 1)
    assert g.lam == 0.0 and g.entries.tolist() == [[1.0]]


def test_grid_needs_factorisation():
    with pytest.raises(ParameterError):
        build_gossip("grid", 8)
    with pytest.raises(ParameterError):
        build_gossip("grid", 8, grid_rows=3)
    assert build_gossip("grid", 8, grid_rows=2).m == 8
    assert squarest_rows(16) == 4 and squarest_rows(8) == 2 and squarest_rows(7) == 1


def test_parameter_errors():
    with pytest.raises(ParameterError):
        build_gossip("ring", 2)
    with pytest.raises(ParameterError):
        build_gossip("torus", 4)
    with pytest.raises(ParameterError):
        build_gossip("ring", 0)


def test_validation_errors():
    with pytest.raises(ValidationError, match="symmetric"):
        validate_gossip([[0.5, 0.5], [0.4, 0.6]])
    with pytest.raises(ValidationError, match="gap is zero"):
        validate_gossip(np.eye(3))
    with pytest.raises(ValidationError, match="gap is zero"):
        validate_gossip(np.kron(np.eye(2), np.full((2, 2), 0.5)))
    with pytest.raises(ValidationError):
        validate_gossip(np.ones((2, 3)))


def test_consensus_rate_counts_negative_end():
    # bipartite-ish swap has eigenvalue -1
    P = np.array([[0.1, 0.9], [0.9, 0.1]])
    assert consensus_rate(P) == pytest.approx(0.8)


def test_order_check_rows():
    rows = spectral_gap_order_check("ring", [8, 16])
    assert [r["m"] for r in rows] == [8, 16]
    assert rows[0]["scaled"] == pytest.approx(rows[0]["gamma"] * 64)
    grid = spectral_gap_order_check("grid", [16])[0]
    assert grid["scaled"] == pytest.approx(16 * build_gossip("grid", 16, grid_rows=4).gamma)


def test_ring_band_over_sizes():
    scaled = [r["scaled"] for r in spectral_gap_order_check("ring", [8, 16, 32])]
    assert max(scaled) / min(scaled) <= 3.0


def test_csv_round_trip():
    g = build_gossip("star", 5)
    back = np.array([[float(x) for x in line.split(",")] for line in to_csv(g).splitlines()])
    assert np.array_equal(back, g.entries)
