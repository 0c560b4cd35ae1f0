import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmclab import problems as pr
from dmclab.errors import ConvergenceError, ParameterError, PreconditionError, UnsupportedError


def _ls(d=3, noise=0.0, radius=2.0, seed=1):
    dist = pr.make_distribution("linear-regression", d, seed=seed, noise=noise)
    return dist, pr.make_loss("least_squares_ball", dist, radius)


# ---------------------------------------------------------------- data


def test_dataset_is_reproducible():
    dist = pr.make_distribution("linear-regression", 1)
    a = pr.synth_dataset(dist, 1, 1, seed=9)
    b = pr.synth_dataset(dist, 1, 1, seed=9)
    assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()


def test_noiseless_plant_is_exact():
    dist = pr.make_distribution("linear-regression", 4, seed=3)
    S = pr.synth_dataset(dist, 3, 7, seed=1)
    assert np.array_equal(S.y, pr.rowdot(S.X, dist.planted))


def test_features_respect_bound():
    dist = pr.make_distribution("logistic-labels", 6, feature_bound=2.5)
    S = pr.synth_dataset(dist, 5, 40, seed=0)
    assert np.linalg.norm(S.X, axis=-1).max() <= 2.5 + 1e-12


def test_logistic_label_balance_over_seeds():
    dist = pr.make_distribution("logistic-labels", 5, seed=0)
    for seed in range(100):
        S = pr.synth_dataset(dist, 4, 25, seed=seed)
        frac = np.mean(S.y > 0)
        assert 0.2 <= frac <= 0.8


@pytest.mark.parametrize("m,n,d", [(0, 1, 1), (1, 0, 1), (1, 1, 0)])
def test_zero_sizes_rejected(m, n, d):
    with pytest.raises(ParameterError):
        pr.synth_dataset("linear-regression", m, n, d=d)


def test_dataset_csv_rows():
    S = pr.synth_dataset("linear-regression", 2, 3, d=2)
    lines = S.to_csv().splitlines()
    assert lines[0] == "worker,index,x0,x1,label" and len(lines) == 7


def test_saddle_samples_within_declared_bounds():
    dist = pr.make_distribution("saddle", 3, noise=0.2, noise_bc=0.3, seed=2)
    S = pr.synth_dataset(dist, 4, 50, seed=1)
    A, b, c = pr.unpack_saddle(S.X.reshape(-1, S.p), 3)
    a_bound, b_bound, c_bound = dist.saddle_bounds
    assert max(np.linalg.norm(Ai, 2) for Ai in A) <= a_bound + 1e-12
    assert np.linalg.norm(b, axis=1).max() <= b_bound + 1e-12
    assert np.linalg.norm(c, axis=1).max() <= c_bound + 1e-12


# ---------------------------------------------------------------- losses


def test_planted_optimum_has_zero_loss_and_gradient():
    dist, loss = _ls()
    z = pr.Sample(np.array([0.3, -0.2, 0.1]), float(np.array([0.3, -0.2, 0.1]) @ dist.planted))
    assert pr.value(loss, dist.planted, z) == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(pr.grad(loss, dist.planted, z), 0.0)


def test_logistic_at_zero_is_log_two():
    dist = pr.make_distribution("logistic-labels", 3)
    loss = pr.make_loss("logistic", dist, 1.0)
    z = pr.Sample(np.array([0.1, 0.2, 0.3]), -1.0)
    assert pr.value(loss, np.zeros(3), z) == pytest.approx(math.log(2.0))


def test_hinge_kink_takes_zero_subgradient():
    dist = pr.make_distribution("logistic-labels", 2)
    loss = pr.make_loss("hinge", dist, 2.0)
    w = np.array([1.0, 0.0])
    z = pr.Sample(np.array([1.0, 0.0]), 1.0)  # margin exactly 1
    assert np.array_equal(pr.grad(loss, w, z), np.zeros(2))
    z_in = pr.Sample(np.array([0.5, 0.0]), 1.0)
    assert np.array_equal(pr.grad(loss, w, z_in), np.array([-0.5, -0.0]))


def test_outside_ball_is_a_precondition_error():
    _, loss = _ls(radius=1.0)
    with pytest.raises(PreconditionError):
        pr.value(loss, np.array([2.0, 0, 0]), pr.Sample(np.zeros(3), 0.0))


def test_certified_constants_for_least_squares():
    dist, loss = _ls(d=2, noise=0.1, radius=2.0)
    Y = dist.feature_bound * np.linalg.norm(dist.planted) + 0.1
    assert loss.beta == 1.0 and loss.L == pytest.approx(2.0 + Y)


@pytest.mark.parametrize("kind", ["least_squares_ball", "logistic", "hinge"])
def test_certified_lipschitz_and_smoothness(kind):
    tag = "linear-regression" if kind == "least_squares_ball" else "logistic-labels"
    dist = pr.make_distribution(tag, 4, seed=5, noise=0.3 if kind == "least_squares_ball" else 0.1)
    loss = pr.make_loss(kind, dist, 1.5)
    g = np.random.default_rng(0)
    X, y = pr.draw_samples(dist, 10_000, g)
    W = pr.project(g.normal(size=(10_000, 4)) * 2, 1.5)
    W2 = pr.project(g.normal(size=(10_000, 4)) * 2, 1.5)
    G = pr.loss_grads(loss, W, X, y)
    assert np.linalg.norm(G, axis=1).max() <= loss.L + 1e-9
    if loss.beta is not None:
        G2 = pr.loss_grads(loss, W2, X, y)
        lhs = np.linalg.norm(G - G2, axis=1)
        rhs = loss.beta * np.linalg.norm(W - W2, axis=1)
        assert np.all(lhs <= rhs + 1e-9)


def test_zero_loss_is_degenerate():
    dist, _ = _ls()
    loss = pr.make_loss("zero", dist, 1.0)
    S = pr.synth_dataset(dist, 2, 3, seed=0)
    assert loss.L == 0.0 and pr.empirical_risk(loss, np.zeros(3), S) == 0.0
    assert pr.population_risk(loss, np.zeros(3), dist).value == 0.0


def test_empirical_risk_hand_dataset():
    dist = pr.make_distribution("linear-regression", 1, planted=[1.0])
    X = np.array([[[1.0], [0.5]], [[-0.5], [0.2]]])
    y = np.array([[1.0, 0.0], [0.3, 0.2]])
    S = pr.Dataset(X, y, dist)
    loss = pr.make_loss("least_squares_ball", dist, 2.0)
    w = np.array([0.5])
    resid = [0.5 - 1.0, 0.25 - 0.0, -0.25 - 0.3, 0.1 - 0.2]
    assert pr.empirical_risk(loss, w, S) == pytest.approx(sum(r * r for r in resid) / 2 / 4, abs=1e-15)


def test_population_risk_closed_form_matches_monte_carlo():
    dist, loss = _ls(d=3, noise=0.3)
    w = np.array([0.2, -0.1, 0.4])
    exact = pr.population_risk(loss, w, dist)
    assert exact.n_draws == 0
    X, y = pr.population_sample(dist, 400_000, seed=3)
    vals = pr.loss_values(loss, w, X, y)
    assert abs(vals.mean() - exact.value) <= 4 * vals.std() / math.sqrt(len(vals))
    assert pr.population_risk(loss, dist.planted, pr.make_distribution("linear-regression", 3, seed=1)).value == 0.0


def test_logistic_population_risk_reports_stderr():
    dist = pr.make_distribution("logistic-labels", 3, seed=2)
    loss = pr.make_loss("logistic", dist, 1.0)
    r = pr.population_risk(loss, np.zeros(3), dist, n_draws=10_000)
    assert r.value == pytest.approx(math.log(2.0)) and r.stderr == pytest.approx(0.0, abs=1e-15)
    r2 = pr.population_risk(loss, np.array([0.5, 0.0, 0.0]), dist, n_draws=10_000)
    assert r2.stderr > 0 and r2.n_draws == 10_000


# ---------------------------------------------------------------- projection


def test_projection_examples():
    x = np.array([0.3, 0.4])
    assert np.array_equal(pr.project(x, 1.0), x)
    np.testing.assert_allclose(pr.project(np.array([3.0, 4.0]), 1.0), [0.6, 0.8], rtol=1e-15)
    with pytest.raises(ParameterError):
        pr.project(x, 0.0)


def test_projection_is_non_expansive_and_idempotent():
    g = np.random.default_rng(1)
    a = g.normal(size=(1000, 5)) * 3
    b = g.normal(size=(1000, 5)) * 3
    pa, pb = pr.project(a, 1.3), pr.project(b, 1.3)
    assert np.all(np.linalg.norm(pa - pb, axis=1) <= np.linalg.norm(a - b, axis=1) + 1e-12)
    np.testing.assert_allclose(pr.project(pa, 1.3), pa, rtol=1e-15, atol=0)


@settings(max_examples=200, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.sampled_from(["least_squares_ball", "logistic"]),
    st.floats(0.05, 1.0),
)
def test_projected_gradient_map_is_non_expansive(seed, kind, frac):
    tag = "linear-regression" if kind == "least_squares_ball" else "logistic-labels"
    dist = pr.make_distribution(tag, 3, seed=seed % 97, noise=0.2 if tag == "linear-regression" else 0.0)
    loss = pr.make_loss(kind, dist, 1.0)
    g = np.random.default_rng(seed)
    eta = frac * 2.0 / loss.beta
    X, y = pr.draw_samples(dist, 1, g)
    w, w2 = pr.project(g.normal(size=(2, 3)), 1.0)
    step = lambda v: pr.project(v - eta * pr.loss_grads(loss, v, X[0], y[0]), 1.0)  # noqa: E731
    assert np.linalg.norm(step(w) - step(w2)) <= np.linalg.norm(w - w2) + 1e-10


# ---------------------------------------------------------------- minimax


def _saddle(rho=0.7, kind="scsc_saddle"):
    dist = pr.make_distribution("saddle", 3, noise=0.2, noise_bc=0.2, seed=4)
    return dist, pr.make_minimax_loss(kind, dist, 1.0, 1.0, rho=rho)


def test_minimax_gradient_examples():
    dist, loss = _saddle(kind="bilinear_saddle", rho=0.0)
    z = pr.draw_samples(dist, 1, np.random.default_rng(0))[0][0]
    A, b, c = pr.unpack_saddle(z, 3)
    gw, gv = pr.grad_minimax(loss, np.zeros(3), np.zeros(3), z)
    assert np.array_equal(gw, b) and np.array_equal(gv, -c)
    _, loss2 = _saddle(rho=0.7)
    w, v = np.array([0.1, 0.2, 0.3]), np.array([-0.3, 0.0, 0.5])
    gw, gv = pr.grad_minimax(loss2, w, v, np.zeros(15))
    np.testing.assert_allclose(gw, 0.7 * w)
    np.testing.assert_allclose(gv, -0.7 * v)


def test_minimax_gradients_match_finite_differences():
    dist, loss = _saddle()
    g = np.random.default_rng(3)
    for _ in range(20):
        z = pr.draw_samples(dist, 1, g)[0][0]
        w, v = pr.project(g.normal(size=(2, 3)), 0.9)
        gw, gv = pr.grad_minimax(loss, w, v, z)
        h = 1e-6
        for j in range(3):
            e = np.eye(3)[j] * h
            fd_w = (pr.minimax_values(loss, w + e, v, z) - pr.minimax_values(loss, w - e, v, z)) / (2 * h)
            fd_v = (pr.minimax_values(loss, w, v + e, z) - pr.minimax_values(loss, w, v - e, z)) / (2 * h)
            assert fd_w == pytest.approx(gw[j], rel=1e-6, abs=1e-8)
            assert fd_v == pytest.approx(gv[j], rel=1e-6, abs=1e-8)


def test_minimax_certified_constants():
    dist, loss = _saddle()
    g = np.random.default_rng(7)
    Z = pr.draw_samples(dist, 5000, g)[0]
    W = pr.project(g.normal(size=(5000, 3)) * 2, 1.0)
    V = pr.project(g.normal(size=(5000, 3)) * 2, 1.0)
    W2 = pr.project(g.normal(size=(5000, 3)) * 2, 1.0)
    V2 = pr.project(g.normal(size=(5000, 3)) * 2, 1.0)
    gw, gv = pr.minimax_grads(loss, W, V, Z)
    assert np.sqrt((gw**2).sum(1) + (gv**2).sum(1)).max() <= loss.L + 1e-9
    gw2, gv2 = pr.minimax_grads(loss, W2, V2, Z)
    lhs = np.sqrt(((gw - gw2) ** 2).sum(1) + ((gv - gv2) ** 2).sum(1))
    rhs = loss.beta * np.sqrt(((W - W2) ** 2).sum(1) + ((V - V2) ** 2).sum(1))
    assert np.all(lhs <= rhs + 1e-9)


def test_scsc_monotonicity():
    dist, loss = _saddle(rho=0.7)
    g = np.random.default_rng(11)
    for _ in range(1000):
        z = pr.draw_samples(dist, 1, g)[0][0]
        w1, v1, w2, v2 = pr.project(g.normal(size=(4, 3)), 1.0)
        a1, b1 = pr.minimax_grads(loss, w1, v1, z)
        a2, b2 = pr.minimax_grads(loss, w2, v2, z)
        inner = (a1 - a2) @ (w1 - w2) - (b1 - b2) @ (v1 - v2)
        dist2 = np.sum((w1 - w2) ** 2) + np.sum((v1 - v2) ** 2)
        assert inner >= loss.rho * dist2 - 1e-10


def test_minimax_kind_checks():
    dist, _ = _saddle()
    with pytest.raises(ParameterError):
        pr.make_minimax_loss("scsc_saddle", dist, 1.0, 1.0, rho=0.0)
    with pytest.raises(ParameterError):
        pr.make_minimax_loss("bilinear_saddle", dist, 1.0, 1.0, rho=0.5)
    with pytest.raises(ParameterError):
        pr.make_minimax_loss("scsc_saddle", pr.make_distribution("logistic-labels", 3), 1.0, 1.0, rho=1.0)


def test_ball_max_matches_grid_in_two_dimensions():
    g = np.array([0.6, -0.8]) * 1.7
    theta = np.linspace(0, 2 * np.pi, 2001)
    radii = np.linspace(0, 1.2, 601)
    V = (radii[:, None, None] * np.stack([np.cos(theta), np.sin(theta)], -1)[None]).reshape(-1, 2)
    for rho in (0.0, 0.5, 3.0):
        grid = np.max(V @ g - 0.5 * rho * (V**2).sum(1))
        val, arg = pr.ball_max_concave(g, rho, 1.2)
        assert val == pytest.approx(grid, abs=2e-5)
        assert val >= grid - 1e-12
        assert g @ arg - 0.5 * rho * arg @ arg == pytest.approx(val)


def test_primal_minimizer_needs_strong_concavity():
    dist, loss = _saddle(kind="bilinear_saddle", rho=0.0)
    with pytest.raises(UnsupportedError):
        pr.primal_minimizer(loss, dist.saddle_means())


def test_primal_minimizer_beats_random_points():
    dist, loss = _saddle(rho=0.7)
    means = dist.saddle_means()
    w, F = pr.primal_minimizer(loss, means)
    g = np.random.default_rng(0)
    for p in pr.project(g.normal(size=(500, 3)), 1.0):
        assert pr.primal_value(loss, p, means) >= F - 1e-10


# ---------------------------------------------------------------- ERM


def test_erm_recovers_noiseless_plant():
    dist, loss = _ls(d=3, radius=2.0)
    S = pr.synth_dataset(dist, 2, 10, seed=4)
    assert np.allclose(pr.erm_reference(loss, S), dist.planted, atol=1e-8)


def test_erm_single_sample_formula():
    dist = pr.make_distribution("linear-regression", 1, planted=[0.5], noise=0.3)
    loss = pr.make_loss("least_squares_ball", dist, 5.0)
    S = pr.Dataset(np.array([[[0.4]]]), np.array([[0.7]]), dist)
    assert pr.erm_reference(loss, S)[0] == pytest.approx(0.7 * 0.4 / 0.4**2, rel=1e-12)


def test_erm_projects_and_refines_when_outside_ball():
    dist = pr.make_distribution("linear-regression", 2, planted=[3.0, 0.0])
    loss = pr.make_loss("least_squares_ball", dist, 1.0)
    S = pr.synth_dataset(dist, 2, 10, seed=1)
    w = pr.erm_reference(loss, S)
    assert np.linalg.norm(w) <= 1.0 + 1e-12
    g = np.random.default_rng(0)
    for p in pr.project(g.normal(size=(300, 2)), 1.0):
        assert pr.empirical_risk(loss, p, S) >= pr.empirical_risk(loss, w, S) - 1e-10


def test_erm_logistic_is_stationary():
    dist = pr.make_distribution("logistic-labels", 3, seed=3, noise=0.1)
    loss = pr.make_loss("logistic", dist, 1.0)
    S = pr.synth_dataset(dist, 2, 20, seed=0)
    w = pr.erm_reference(loss, S)
    gfull = pr.full_gradient(loss, w, S)
    # projected-gradient fixed point
    assert np.linalg.norm(w - pr.project(w - gfull, 1.0)) <= 1e-7


def test_erm_hinge_separable_pair_reaches_zero():
    dist = pr.make_distribution("logistic-labels", 1, planted=[1.0])
    loss = pr.make_loss("hinge", dist, 5.0)
    S = pr.Dataset(np.array([[[0.5], [-0.8]]]), np.array([[1.0, -1.0]]), dist)
    w = pr.erm_reference(loss, S)
    assert pr.empirical_risk(loss, w, S) <= 1e-6
    grid = np.linspace(-5, 5, 10001)
    best = min(pr.empirical_risk(loss, np.array([g]), S) for g in grid)
    assert best == pytest.approx(0.0, abs=1e-12)


def test_erm_convergence_error_carries_residual():
    dist = pr.make_distribution("logistic-labels", 3, seed=3)
    loss = pr.make_loss("logistic", dist, 1.0)
    S = pr.synth_dataset(dist, 2, 20, seed=0)
    with pytest.raises(ConvergenceError) as info:
        pr.erm_reference(loss, S, tol=1e-30, max_iter=5)
    assert info.value.residual is not None and info.value.residual > 0


def test_population_minimizer_projects_plant():
    dist = pr.make_distribution("linear-regression", 2, planted=[3.0, 4.0])
    loss = pr.make_loss("least_squares_ball", dist, 1.0)
    np.testing.assert_allclose(pr.population_minimizer(loss, dist), [0.6, 0.8])
