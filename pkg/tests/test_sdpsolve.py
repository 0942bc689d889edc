import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coopsynth import lmi
from coopsynth.lumped import build_lumped_mi
from coopsynth.sdpsolve import (DUAL_INFEASIBLE, INFEASIBLE, OPTIMAL, SdpProblem,
                                SolverSettings, bisect_feasibility, is_feasible, solve)
from coopsynth.sstools import block_diag_compose

A28 = np.array([[0.0, 1.0], [-2.0, -2.0]])
SYM2 = np.array([[[1, 0], [0, 0]], [[0, 1], [1, 0]], [[0, 0], [0, 1]]], dtype=float)


def lyapunov(sign, eps=1e-7):
    """X >= eps I and sign * -(A^T X + X A) >= eps I."""
    pos = (-eps * np.eye(2), SYM2)
    lyap = (-eps * np.eye(2), np.array([-sign * (A28.T @ B + B @ A28) for B in SYM2]))
    return SdpProblem([pos, lyap], np.zeros(3))


def test_scalar_bound():
    sol = solve(SdpProblem([(np.array([[-1.0]]), np.array([[[1.0]]]))], [1.0]))
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)


def test_lyapunov_pair():
    ok = solve(lyapunov(1.0))
    assert ok.status == OPTIMAL and is_feasible(ok)
    X = np.tensordot(ok.x, SYM2, axes=1)
    assert np.linalg.eigvalsh(X).min() > 0
    assert np.linalg.eigvalsh(A28.T @ X + X @ A28).max() < 0
    assert solve(lyapunov(-1.0)).status == INFEASIBLE


def test_unbounded_lp_flagged():
    # min -x s.t. x >= 0
    sol = solve(SdpProblem([(np.zeros((1, 1)), np.ones((1, 1, 1)))], [-1.0]))
    assert sol.status == DUAL_INFEASIBLE


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_diagonal_sdp_matches_lp(seed):
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(seed)
    m, n = 3, 6
    Fs = rng.normal(size=(m, n))
    F0 = -(Fs.T @ rng.normal(size=m)) + rng.uniform(0.1, 1, n)
    c = Fs @ rng.uniform(0.1, 1, n)          # dual feasible, so bounded below
    sol = solve(SdpProblem([(np.diag(F0), np.array([np.diag(f) for f in Fs]))], c))
    x = cp.Variable(m)
    prob = cp.Problem(cp.Minimize(c @ x), [F0 + Fs.T @ x >= 0])
    prob.solve()
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(prob.value, abs=1e-6 * max(1, abs(prob.value)))


def test_optimal_witness_is_psd(agent):
    sol = solve(lyapunov(1.0))
    for B in lyapunov(1.0).evaluate(sol.x):
        assert np.linalg.eigvalsh(B).min() >= -1e-7


def single_agent_builder(agent):
    S = block_diag_compose([agent])
    from coopsynth.graph import AdjacencyParameterization

    param = AdjacencyParameterization(np.zeros((1, 1)), (np.zeros((1, 1)),), [0.0], [0.0])
    system, reg = build_lumped_mi(S, param)
    system = lmi.fix_variables(system, {"theta0": 0.0})
    system.objective = None

    def builder(g):
        return lmi.to_standard_form(lmi.fix_variables(system, {"mu": g * g}))

    return builder


def test_bisection_single_agent(agent):
    builder = single_agent_builder(agent)
    g, sol = bisect_feasibility(builder, (0.1, 10.0), 1e-6)
    assert g == pytest.approx(0.5, abs=1e-4)
    assert is_feasible(sol)
    assert is_feasible(solve(builder(g + 2e-6)))
    assert not is_feasible(solve(builder(g - 2e-6)))


def test_bisection_edges(agent):
    builder = single_agent_builder(agent)
    g, _ = bisect_feasibility(builder, (0.6, 10.0))
    assert g == 0.6
    with pytest.raises(ValueError, match="does not bracket"):
        bisect_feasibility(builder, (0.1, 0.4))


def test_dump_sdpa(tmp_path):
    p = lyapunov(1.0)
    path = tmp_path / "p.dat-s"
    p.dump(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("*")
    assert lines[1] == "3" and lines[2] == "2"   # variables, blocks
    sol = solve(p, SolverSettings(dump_dir=str(tmp_path / "d")))
    assert sol.status == OPTIMAL
    assert len(list((tmp_path / "d").iterdir())) == 1
