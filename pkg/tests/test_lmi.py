import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coopsynth import lmi
from coopsynth.dist import build_dist_mis
from coopsynth.graph import benchmark_topology
from coopsynth.lumped import build_lumped_mi, certify_theta
from coopsynth.sstools import block_diag_compose
from conftest import example_agent


@pytest.mark.parametrize("structure,dim,count", [
    ("symmetric", 8, 36), ("skew", 4, 6), ("scalar", 1, 1), ("diagonal", 5, 5), ("full", 3, 9)])
def test_declare_counts(structure, dim, count):
    reg = lmi.VariableRegistry()
    reg.declare("V", structure, dim)
    assert lmi.count_unknowns(reg) == count


def test_declare_errors():
    reg = lmi.VariableRegistry()
    with pytest.raises(ValueError):
        reg.declare("V", "symmetric", 0)
    with pytest.raises(ValueError):
        reg.declare("V", "hermitian", 2)
    reg.declare("V", "scalar")
    with pytest.raises(ValueError):
        reg.declare("V", "scalar")


def test_count_empty():
    assert lmi.count_unknowns(lmi.VariableRegistry()) == 0


def test_evaluate_constant_and_scalar_term():
    reg = lmi.VariableRegistry()
    v = reg.declare("v", "scalar")
    C = np.array([[1.0, 2.0], [2.0, 5.0]])
    assert np.array_equal(lmi.evaluate(lmi.const(reg, C), {"v": 3.0}), C)
    e = lmi.AffineMatrixExpression.from_terms(reg, C, [(v, np.eye(2), np.eye(2))])
    np.testing.assert_allclose(lmi.evaluate(e, {"v": 0.7}), C + 1.4 * np.eye(2))


def test_evaluate_missing_variable():
    reg = lmi.VariableRegistry()
    reg.declare("a", "scalar")
    reg.declare("b", "scalar")
    e = reg.expr("a") + reg.expr("b")
    with pytest.raises(KeyError, match="missing"):
        lmi.evaluate(e, {"a": 1.0})


def _random_system(rng):
    reg = lmi.VariableRegistry()
    X = reg.declare("X", "symmetric", 3)
    K = reg.declare("K", "full", (2, 3))
    W = reg.declare("W", "skew", 3)
    t = reg.declare("t", "scalar")
    L1, R1 = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    L2, R2 = rng.normal(size=(3, 2)), rng.normal(size=(3, 3))
    C0 = rng.normal(size=(3, 3))
    e = lmi.AffineMatrixExpression.from_terms(
        reg, C0 + C0.T, [(X, L1, R1), (K, L2, R2), (W, np.eye(3), rng.normal(size=(3, 3))),
                         (t, np.eye(3), np.eye(3))])
    system = lmi.MISystem(reg)
    system.add(e, "<<", name="a")
    system.add(reg.expr(X), ">>", name="b")
    return system, reg


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_symmetric_and_round_trip(seed):
    rng = np.random.default_rng(seed)
    system, reg = _random_system(rng)
    x = rng.normal(size=reg.n_scalars)
    p = lmi.to_standard_form(system)
    vals = p.evaluate(p.restrict(x))
    for c, V in zip(system.constraints, vals):
        M = lmi.evaluate(c.expr, x)
        assert np.max(np.abs(M - M.T)) <= 1e-12
        sign = 1.0 if c.sense == ">>" else -1.0
        np.testing.assert_allclose(V, sign * M - c.margin * np.eye(c.dim), atol=1e-12)


def test_standard_form_single_scalar():
    reg = lmi.VariableRegistry()
    reg.declare("x", "scalar")
    system = lmi.MISystem(reg)
    system.add(reg.expr("x") - 1.0, ">>", strict=False)
    p = lmi.to_standard_form(system)
    assert p.block_sizes == [1]


def test_lumped_block_sizes_and_feasible_point():
    S = block_diag_compose([example_agent()] * 4)
    param = benchmark_topology(4)
    system, reg = build_lumped_mi(S, param)
    fixed = lmi.fix_variables(system, {"theta0": 0.1698})
    assert not fixed.has_bilinear
    p = lmi.to_standard_form(fixed)
    assert sorted(p.block_sizes) == [8, 12]
    # the fixed-alpha bounded-real witness makes the assembled inequality negative definite
    gamma, wit = certify_theta(S, param, [0.1698])
    br = next(c for c in system.constraints if c.name == "bounded_real")
    assert np.linalg.eigvalsh(br.value(wit)).max() < 0


def test_count_matches_closed_form():
    for N, expect in [(3, 22), (4, 37), (5, 56)]:
        S = block_diag_compose([example_agent()] * N)
        system, reg = build_lumped_mi(S, benchmark_topology(N))
        system.screen()
        assert lmi.count_unknowns(reg) == expect == N * 2 * (1 + N * 2) // 2 + 1


def test_distributed_count():
    system, reg = build_dist_mis([example_agent()] * 4, benchmark_topology(4))
    system.screen()
    assert lmi.count_unknowns(reg) == 45


def test_fix_variables_folds_bilinear():
    reg = lmi.VariableRegistry()
    reg.declare("a", "scalar")
    reg.declare("b", "scalar")
    system = lmi.MISystem(reg)
    G, H = reg.expr("a"), reg.expr("b")
    system.add(lmi.const(reg, [[1.0]]), ">>", strict=False, bilinear=[(G, H)])
    fixed = lmi.fix_variables(system, {"b": 2.0})
    assert not fixed.has_bilinear
    # 1 + 2ab at a = 3, b = 2
    assert lmi.evaluate(fixed.constraints[0].expr, {"a": 3.0, "b": 2.0})[0, 0] == pytest.approx(13.0)
