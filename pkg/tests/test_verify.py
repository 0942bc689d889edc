import numpy as np
import pytest

from coopsynth.graph import eval_adjacency
from coopsynth.lumped import certify_theta
from coopsynth.sstools import ClosedLoopSystem, block_diag_compose, close_lft, hinf_norm
from coopsynth.verify import (Trajectory, agent_view, check_dissipation, check_neutrality,
                              dist_spatial_supply, estimate_l2_gain, random_consistent_signals,
                              random_l2_input, simulate, simulate_network, storage_gap_bound,
                              theorem1_gap)


def zero_input(n):
    return lambda t: np.zeros((np.size(t), n))


def single(agent):
    return close_lft(block_diag_compose([agent]), np.zeros((1, 1)))


def test_simulate_zero(agent):
    tr = simulate(single(agent), zero_input(1), 1e-2, 1.0)
    assert not np.any(tr.x) and not np.any(tr.z1)


def test_simulate_step(agent):
    tr = simulate(single(agent), lambda t: np.ones((np.size(t), 1)), 1e-3, 15.0)
    assert tr.z1[-1, 0] == pytest.approx(0.5, abs=1e-6)


def test_simulate_convergence(S4, param4):
    cl = close_lft(S4, eval_adjacency(param4, [0.17]))
    u = random_l2_input(np.random.default_rng(3), 4, T=10.0)
    a = simulate(cl, u, 1e-3, 10.0)
    b = simulate(cl, u, 5e-4, 10.0)
    assert np.max(np.abs(a.x[-1] - b.x[-1])) < 1e-6


def test_simulate_bad_dt(agent):
    with pytest.raises(ValueError):
        simulate(single(agent), zero_input(1), 0.0, 1.0)


def test_estimate_gain(agent):
    g = estimate_l2_gain(single(agent))
    assert 0.49 < g <= 0.5 + 1e-9
    D = np.array([[2.0, 0.0], [1.0, 1.0]])
    static = ClosedLoopSystem(A=-np.eye(1), B=np.zeros((1, 2)), C=np.zeros((2, 1)), D=D)
    assert estimate_l2_gain(static, [0.0, 1.0], T=5.0) == pytest.approx(np.linalg.norm(D, 2))


def test_estimate_gain_at_reported_alpha(S4, param4):
    cl = close_lft(S4, eval_adjacency(param4, [0.1698]))
    assert estimate_l2_gain(cl) <= 1.0153 + 2e-3


def test_gain_chain(S4, param4, lumped4, dist4):
    for res in (lumped4, dist4):
        cl = close_lft(S4, eval_adjacency(param4, res.theta_star))
        est, hinf = estimate_l2_gain(cl), hinf_norm(cl)
        assert est <= 1.01 * hinf
        assert hinf <= 1.01 * res.gamma_star


def test_dissipation_zero_trajectory(agent):
    t = np.linspace(0, 1, 11)
    tr = Trajectory(t=t, x=np.zeros((11, 2)), w1=np.zeros((11, 1)), z1=np.zeros((11, 1)),
                    w=np.zeros((11, 1)), z=np.zeros((11, 1)))
    r = check_dissipation(agent, np.eye(2), 1.0, tr, np.zeros(11))
    assert r.passed and r.residual == 0.0 and r.performance_supply == 0.0


def test_dissipation_lumped_and_negated(S4, param4, lumped4):
    U = eval_adjacency(param4, lumped4.theta_star)
    cl = close_lft(S4, U)
    rng = np.random.default_rng(7)
    X = lumped4.witness["X"]
    for _ in range(5):
        tr = simulate_network(S4, U, random_l2_input(rng, 4))
        assert check_dissipation(cl, X, lumped4.gamma_star, tr).passed
    x0 = np.ones(8)
    tr = simulate(cl, zero_input(4), 1e-3, 10.0, x0=x0)
    assert check_dissipation(cl, X, lumped4.gamma_star, tr).passed
    assert not check_dissipation(cl, -X, lumped4.gamma_star, tr).passed


def test_dissipation_distributed(S4, param4, dist4, agent):
    U = eval_adjacency(param4, dist4.theta_star)
    rng = np.random.default_rng(8)
    for _ in range(5):
        tr = simulate_network(S4, U, random_l2_input(rng, 4))
        for i in range(4):
            v = agent_view(tr, i)
            s = dist_spatial_supply(dist4.witness, param4, i, v)
            assert check_dissipation(agent, dist4.witness[f"X_{i + 1}"], dist4.gamma_star, v,
                                     s).passed


def test_dissipation_inconsistent(S4, param4, lumped4):
    U = eval_adjacency(param4, lumped4.theta_star)
    tr = simulate_network(S4, U, random_l2_input(np.random.default_rng(2), 4))
    other = close_lft(S4, eval_adjacency(param4, [0.0]))
    with pytest.raises(ValueError, match="inconsistent trajectory"):
        check_dissipation(other, lumped4.witness["X"], lumped4.gamma_star, tr)


def _blocks(rng, N=3):
    from coopsynth import lmi
    from coopsynth.dist import build_zhat_blocks, declare_supply

    reg = lmi.VariableRegistry()
    sb = declare_supply(reg, N, 2)
    wit = reg.assignment(rng.normal(size=reg.n_scalars))

    def num(who):
        return {k: lmi.evaluate(v, wit) for k, v in build_zhat_blocks(reg, sb, who).items()}

    return [num(i + 1) for i in range(N)], num("c")


def test_neutrality(rng):
    agents, comm = _blocks(rng)
    sa, sc = random_consistent_signals(rng, 3)
    assert check_neutrality(sa, sc, agents, comm, 3) <= 1e-10
    zs = [(np.zeros((1, 12)), np.zeros((1, 12)))] * 3
    assert check_neutrality(zs, zs[0], agents, comm, 3) == 0.0
    # communication blocks from an unrelated multiplier assignment
    _, comm2 = _blocks(rng)
    assert check_neutrality(sa, sc, agents, comm2, 3) > 1e-3
    sa[1][0][0, -1] += 1.0
    with pytest.raises(ValueError, match="port mismatch"):
        check_neutrality(sa, sc, agents, comm, 3)


def test_theorem1_gap_trivial():
    assert storage_gap_bound(np.eye(3), 10.0) == 0.0
    assert theorem1_gap(0.0, 0.0, np.eye(3), 0.0)
    assert not theorem1_gap(1.0, 0.0, np.eye(3), 5.0)


def test_theorem1_gap_four_agents(S4, param4, dist4):
    U = eval_adjacency(param4, dist4.theta_star)
    _, wit = certify_theta(S4, param4, dist4.theta_star)
    Xb = wit["X"]
    Xh = np.zeros((8, 8))
    for i in range(4):
        Xh[2 * i:2 * i + 2, 2 * i:2 * i + 2] = dist4.witness[f"X_{i + 1}"]
    rng = np.random.default_rng(5)
    for _ in range(5):
        tr = simulate_network(S4, U, random_l2_input(rng, 4))
        xT = tr.x[-1]
        zz = np.sum(tr.z ** 2) * tr.dt
        assert theorem1_gap(xT @ Xh @ xT, xT @ Xb @ xT, U, zz)
    tr = simulate_network(S4, U, zero_input(4), T=1.0)
    assert tr.x[-1] @ Xh @ tr.x[-1] == 0.0


def test_trajectory_csv(tmp_path, agent):
    tr = simulate(single(agent), lambda t: np.ones((np.size(t), 1)), 0.1, 1.0)
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,x1,x2,w11,z11"
    assert len(lines) == 12
