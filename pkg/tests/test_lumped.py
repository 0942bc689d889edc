import numpy as np
import pytest

from coopsynth import lmi
from coopsynth.graph import eval_adjacency
from coopsynth.lumped import (SynthesisSettings, build_lumped_mi, certify_theta, linearize_about,
                              oracle_grid, synth_lumped)
from coopsynth.sdpsolve import is_feasible, solve
from coopsynth.sstools import close_lft, hinf_norm

BISECT_TOL = 1e-6


def test_witness_at_reported_optimum(S4, param4):
    gamma, wit = certify_theta(S4, param4, [0.1698])
    assert gamma == pytest.approx(1.0153, abs=2e-3)
    system, reg = build_lumped_mi(S4, param4)
    wit = dict(wit, mu=(gamma + 1e-4) ** 2)
    assert system.feasible(wit, tol=1e-9)


def test_theta_zero_is_plain_lmi(S4, param4):
    system, reg = build_lumped_mi(S4, param4)
    fixed = lmi.fix_variables(system, {"theta0": 0.0})
    assert not fixed.has_bilinear
    sol = solve(lmi.to_standard_form(fixed))
    assert is_feasible(sol)
    gamma = np.sqrt(sol.objective)
    assert gamma == pytest.approx(hinf_norm(close_lft(S4, eval_adjacency(param4, [0.0]))),
                                  rel=1e-3)


def test_linearize_without_bilinear_is_identity():
    reg = lmi.VariableRegistry()
    reg.declare("x", "scalar")
    system = lmi.MISystem(reg)
    system.add(reg.expr("x"), ">>")
    assert linearize_about(system, np.zeros(1)) is system


def test_linearize_keeps_expansion_point(S4, param4):
    system, reg = build_lumped_mi(S4, param4)
    system.screen()
    gamma, wit = certify_theta(S4, param4, [0.1])
    x0 = reg.vector(dict(wit, mu=(gamma * 1.001) ** 2))
    assert system.feasible(x0)
    assert linearize_about(system, x0).feasible(x0)


def _bilinear_instance(rng):
    reg = lmi.VariableRegistry()
    reg.declare("P", "full", (2, 2))
    reg.declare("Q", "full", (2, 2))
    system = lmi.MISystem(reg)
    F0 = rng.normal(size=(2, 2))
    F0 = -(F0 @ F0.T) - 2 * np.eye(2)
    system.add(lmi.const(reg, F0), "<<", strict=False,
               bilinear=[(reg.expr("P"), reg.expr("Q"))])
    return system, reg


def test_linearization_is_inner_approximation(rng):
    checked = 0
    for _ in range(100):
        system, reg = _bilinear_instance(rng)
        x0 = 0.5 * rng.normal(size=reg.n_scalars)
        lin = linearize_about(system, x0)
        for _ in range(5):
            x = x0 + 0.5 * rng.normal(size=reg.n_scalars)
            if lin.feasible(x):
                checked += 1
                assert system.feasible(x, tol=1e-12)
    assert checked > 50


def test_synth_lumped_trace(lumped4):
    gammas = [e.gamma for e in lumped4.trace]
    assert all(b <= a + 2 * BISECT_TOL for a, b in zip(gammas, gammas[1:]))
    assert lumped4.converged
    assert lumped4.unknowns == 37


def test_synth_lumped_certificate(S4, param4, lumped4):
    hinf = hinf_norm(close_lft(S4, eval_adjacency(param4, lumped4.theta_star)))
    assert lumped4.gamma_star >= hinf - 1e-6
    assert lumped4.gamma_star <= 1.01 * hinf
    system, reg = build_lumped_mi(S4, param4)
    slacks = system.check(lumped4.witness)
    assert min(slacks.values()) >= -10 * lmi.STRICT_MARGIN * 12


def test_synth_lumped_from_optimum(S4, param4, lumped4):
    res = synth_lumped(S4, param4, lumped4.theta_star)
    assert len(res.trace) <= 2
    assert res.gamma_star == pytest.approx(lumped4.gamma_star, abs=1e-4)


def test_initial_point_infeasible(S4, param4):
    st = SynthesisSettings(gamma_interval=(1e-3, 0.5))
    with pytest.raises(ValueError, match="initial point infeasible"):
        synth_lumped(S4, param4, [0.05], st)


def test_oracle_grid(S4, param4, lumped4):
    best, gbest, curve = oracle_grid(S4, param4, 0.002)
    assert len(curve) == 101
    assert curve[0, 1] > gbest and curve[-1, 1] > gbest
    assert lumped4.gamma_star >= gbest - BISECT_TOL
    one = oracle_grid(S4, param4, grid=[0.1])
    assert one[0][0] == 0.1 and one[2].shape == (1, 2)
