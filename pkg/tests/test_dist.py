import numpy as np
import pytest

from coopsynth import lmi
from coopsynth.dist import (SupplyBlocks, build_comm_agent, build_dist_mis, build_zhat_blocks,
                            certify_theta, check_aux19, declare_supply, extend_agent,
                            neutrality_map)
from coopsynth.graph import AdjacencyParameterization, eval_adjacency, spectral_norm
from coopsynth.sdpsolve import is_feasible, solve
from coopsynth.sstools import close_lft, hinf_norm
from coopsynth.verify import check_neutrality, random_consistent_signals
from conftest import example_agent


def test_extend_single_slot(agent):
    e = extend_agent(agent, 1, 1)
    for k in ("A", "B1", "B", "C1", "C", "D1", "E1", "F1"):
        np.testing.assert_array_equal(getattr(e, k), getattr(agent, k))


def test_extend_bar_placement(agent):
    e = extend_agent(agent, 4, 2, "bar")
    assert e.B1.shape == (2, 4)
    np.testing.assert_array_equal(e.B1[:, 1], [0, 1])
    assert not np.any(np.delete(e.B1, 1, axis=1))
    np.testing.assert_array_equal(e.A, agent.A)


def test_extend_hat_dims(agent):
    e = extend_agent(agent, 4, 3, "hat")
    assert e.B1.shape == (2, 20)
    assert e.C.shape == (20, 2)
    assert e.D1.shape == (20, 20)


def test_extend_errors(agent):
    with pytest.raises(ValueError):
        extend_agent(agent, 4, 5)
    with pytest.raises(ValueError):
        extend_agent(agent, 4, 0)


def test_extend_round_trip(rng):
    from test_sstools import random_agent

    a = random_agent(rng, nx=3, nw1=2, nz1=2)
    for level in ("bar", "hat"):
        b = extend_agent(a, 3, 2, level).compress()
        for k in ("A", "B1", "B", "C1", "C", "D1", "E1", "F1"):
            np.testing.assert_array_equal(getattr(a, k), getattr(b, k))


def test_comm_agent(param4):
    zero = AdjacencyParameterization(np.zeros((4, 4)), (np.zeros((4, 4)),), [0.0], [0.0])
    assert not np.any(build_comm_agent(zero, [0.0]).Dhat)
    c = build_comm_agent(param4, [0.05])
    U = eval_adjacency(param4, [0.05])
    n = 20
    np.testing.assert_array_equal(c.Dhat[16:20, 16:20], U)
    np.testing.assert_array_equal(c.Dhat[n + 16:, n + 16:], U)
    mask = np.ones_like(c.Dhat, dtype=bool)
    mask[16:20, 16:20] = mask[n + 16:, n + 16:] = False
    assert not np.any(c.Dhat[mask])
    assert spectral_norm(c.Dhat) == pytest.approx(spectral_norm(U))
    assert not np.any(c.Chat) and not np.any(c.Ahat) and not np.any(c.Bhat)


def test_neutrality_map(rng):
    Z = np.zeros((3, 3))
    for M in neutrality_map(Z, Z, Z):
        assert not np.any(M)
    a = rng.normal(size=(3, 3))
    cY11, cY22, cY12 = a + a.T, np.diag(rng.normal(size=3)), rng.normal(size=(3, 3))
    Y11, Y12, Y22 = neutrality_map(cY11, cY12, cY22)
    np.testing.assert_allclose(Y11, -cY22)
    np.testing.assert_allclose(Y12, -cY12.T)
    np.testing.assert_allclose(Y22, -cY11)
    back = neutrality_map(Y11, Y12, Y22)
    for x, y in zip(back, (cY11, cY12, cY22)):
        np.testing.assert_allclose(x, y)


def _supply(N=4, nx=2):
    reg = lmi.VariableRegistry()
    sb = declare_supply(reg, N, nx)
    return reg, sb


def _random_assignment(reg, rng):
    return reg.assignment(rng.normal(size=reg.n_scalars))


def _blocks(reg, sb, wit):
    def num(who):
        return {k: lmi.evaluate(v, wit) for k, v in build_zhat_blocks(reg, sb, who).items()}
    return [num(i + 1) for i in range(sb.N)], num("c")


def test_zhat_zero_and_comm_layout(rng):
    reg, sb = _supply()
    agents, comm = _blocks(reg, sb, reg.assignment(np.zeros(reg.n_scalars)))
    for b in agents + [comm]:
        assert all(not np.any(M) for M in b.values())
    wit = _random_assignment(reg, rng)
    _, comm = _blocks(reg, sb, wit)
    for i in range(4):
        s = slice(4 * i, 4 * i + 4)
        np.testing.assert_array_equal(comm["Z11"][s, s], -wit[sb.cY11(i + 1)])


def test_zhat_neutrality(rng):
    reg, sb = _supply()
    for _ in range(100):
        agents, comm = _blocks(reg, sb, _random_assignment(reg, rng))
        sa, sc = random_consistent_signals(rng, 4)
        assert check_neutrality(sa, sc, agents, comm, 4) <= 1e-10


def test_agent_z12_vanishes(rng):
    reg, sb = _supply()
    agents, _ = _blocks(reg, sb, _random_assignment(reg, rng))
    assert all(not np.any(b["Z12"]) for b in agents)


def test_aux19(param4, rng):
    reg, sb = _supply()
    _, comm = _blocks(reg, sb, _random_assignment(reg, rng))
    for a in np.linspace(0, 0.2, 11):
        assert check_aux19(build_comm_agent(param4, [a]), comm["Z11"]) <= 1e-12
    zero = AdjacencyParameterization(np.zeros((4, 4)), (np.zeros((4, 4)),), [0.0], [0.0])
    assert check_aux19(build_comm_agent(zero, [0.0]), comm["Z11"]) == 0.0
    bad = comm["Z11"].copy()
    bad[16:, 16:] = np.eye(4)
    assert check_aux19(build_comm_agent(param4, [0.1]), bad) > 0.1


def test_dist_structure(param4):
    system, reg = build_dist_mis([example_agent()] * 4, param4)
    for c in system.constraints:
        if c.name.startswith(("agent_", "X_")):
            assert not c.bilinear
    system.screen()
    assert lmi.count_unknowns(reg) == 45


def test_dist_feasible_at_reported_optimum(param4):
    system, reg = build_dist_mis([example_agent()] * 4, param4, gamma=1.0712 + 1e-3)
    fixed = lmi.fix_variables(system, {"theta0": 0.1602})
    fixed.objective = None
    assert is_feasible(solve(lmi.to_standard_form(fixed)))


@pytest.mark.parametrize("alpha", [0.05, 0.10, 0.15])
def test_dist_bound_dominates_gain(S4, param4, alpha):
    g, _ = certify_theta([example_agent()] * 4, param4, [alpha])
    assert g >= hinf_norm(close_lft(S4, eval_adjacency(param4, [alpha]))) - 1e-6


def test_synth_dist(dist4, lumped4):
    gammas = [e.gamma for e in dist4.trace]
    assert all(b <= a + 2e-6 for a, b in zip(gammas, gammas[1:]))
    assert dist4.gamma_star >= lumped4.gamma_star
    assert dist4.unknowns == 45


def test_supply_names():
    sb = SupplyBlocks(3)
    assert sb.Y11(2) == "Y11_2" and sb.cY12(1) == "cY12_1"
