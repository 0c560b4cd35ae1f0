import numpy as np
import pytest

from dmclab import problems as pr
from dmclab.chain import build_chain
from dmclab.engine import RunConfig, StepsizeSchedule
from dmclab.topology import build_gossip

ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion(request):
    """Log one ``CRITERION k: PASS|FAIL detail`` line and echo it to stdout."""

    def _record(number: int, passed: bool, detail: str):
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} {detail}"
        print(line)
        request.config.stash[ACCEPTANCE_KEY].append(line)

    return _record


def make_config(
    loss_kind="logistic",
    m=4,
    n=8,
    d=5,
    topology="ring",
    chain="lazy-cycle",
    eta=0.01,
    T=50,
    order="CtG",
    seed=0,
    radius=1.0,
    noise=0.0,
    schedule=None,
    data_seed=2,
    **kw,
):
    dist_tag = "linear-regression" if loss_kind in ("least_squares_ball", "zero") else "logistic-labels"
    dist = pr.make_distribution(dist_tag, d, seed=1, noise=noise)
    S = pr.synth_dataset(dist, m, n, seed=data_seed)
    loss = pr.make_loss(loss_kind, dist, radius)
    gossip = build_gossip(topology, m) if topology != "grid" else build_gossip("grid", m, grid_rows=kw.pop("grid_rows"))
    H = build_chain(chain, n, **kw.pop("chain_params", {}))
    sched = schedule or StepsizeSchedule("constant", eta)
    return RunConfig(S, loss, gossip, H, sched, T, update_order=order, seed=seed, **kw)


def make_saddle_config(m=4, n=8, d=3, rho=1.0, kind="scsc_saddle", eta=None, T=50, order="CtG", seed=0, noise=0.2, noise_bc=0.3, planted=None, topology="ring", **kw):
    dist = pr.make_distribution("saddle", d, seed=1, noise=noise, noise_bc=noise_bc, planted=planted)
    S = pr.synth_dataset(dist, m, n, seed=2)
    loss = pr.make_minimax_loss(kind, dist, 1.0, 1.0, rho=rho)
    if eta is None:
        eta = 0.9 / (2.0 * loss.beta) / T if loss.beta > 0 else 0.01
    H = build_chain("lazy-cycle", n) if n > 1 else build_chain("uniform", 1)
    return RunConfig(
        S, loss, build_gossip(topology, m), H, StepsizeSchedule("constant", eta), T,
        update_order=order, mode="sgda", seed=seed, **kw,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
