"""Lumped edge-weight synthesis on the bounded-real BMI.

The closed loop ``(A + B U C, B1 + B U F1, C1 + E1 U C, D1 + E1 U F1)`` with
``U = Upsilon(theta)`` enters the bounded-real inequality bilinearly through
``X B U C`` and ``X B U F1``. Those products are written as ``G^T H + H^T G``
with ``G`` linear in X and ``H`` affine in theta, and handled by a
convex-concave sequential LMI loop.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import lmi
from .graph import eval_adjacency
from .sdpsolve import SolverSettings, bisect_feasibility, is_feasible, solve
from .sstools import close_lft, hinf_norm

log = logging.getLogger(__name__)


DEFAULT_THETA_INIT = 0.05


@dataclass
class SynthesisSettings:
    tol_gamma: float = 1e-4
    max_iter: int = 50
    gamma_interval: tuple = (1e-3, 1e3)
    bisect_tol: float = 1e-6
    solver: SolverSettings = field(default_factory=SolverSettings)


@dataclass
class TraceEntry:
    iteration: int
    theta: np.ndarray
    gamma: float
    status: str
    ms: float


@dataclass
class SynthesisResult:
    theta_star: np.ndarray
    gamma_star: float
    trace: list
    converged: bool
    unknowns: int = 0
    witness: dict = None
    assembly_ms: float = 0.0
    solve_ms: float = 0.0
    method: str = ""

    def to_dict(self):
        return {
            "method": self.method,
            "theta_star": np.asarray(self.theta_star).tolist(),
            "gamma_star": float(self.gamma_star),
            "converged": bool(self.converged),
            "unknowns": int(self.unknowns),
            "iterations": len(self.trace),
            "assembly_ms": self.assembly_ms,
            "solve_ms": self.solve_ms,
        }


def _require_scalar_ports(S):
    for k, a in enumerate(S.agents):
        if a.n_w != 1 or a.n_z != 1:
            raise NotImplementedError(
                f"unsupported: agent {k + 1} has spatial ports {a.n_w}x{a.n_z}; "
                "synthesis needs scalar spatial ports")


def theta_names(param):
    return [f"theta{k}" for k in range(param.n_theta)]


def theta_expr(reg, param):
    """``Upsilon(theta) - Upsilon0`` as an affine expression."""
    out = lmi.const(reg, np.zeros((param.N, param.N)))
    for name, Uk in zip(theta_names(param), param.bases):
        out = out + reg.expr(name) * Uk
    return out


def add_theta_box(system, param):
    reg = system.registry
    th = [reg.expr(n) for n in theta_names(param)]
    for k, t in enumerate(th):
        system.add(lmi.bmat(reg, [[t - param.lower[k], None], [None, param.upper[k] - t]]),
                   ">>", strict=False, name=f"theta{k}_box")


def build_lumped_mi(S, param, reg=None):
    """Bounded-real BMI over (X, theta, mu = gamma^2); returns (system, reg).

    When ``E1 = 0`` the performance output does not depend on theta and the
    inequality has the compact form of size n_x + n_w1. Otherwise ``C1, D1``
    are lifted by a Schur complement and the block grows by n_z1.
    """
    _require_scalar_ports(S)
    reg = reg or lmi.VariableRegistry()
    nx, nw1, nz1 = S.n_x, S.n_w1, S.n_z1
    X = reg.expr(reg.declare("X", "symmetric", nx))
    for name in theta_names(param):
        reg.declare(name, "scalar")
    mu = reg.expr(reg.declare("mu", "scalar", counted=False))

    U0 = param.upsilon0
    A0 = S.A + S.B @ U0 @ S.C
    B10 = S.B1 + S.B @ U0 @ S.F1
    C10 = S.C1 + S.E1 @ U0 @ S.C
    D10 = S.D1 + S.E1 @ U0 @ S.F1
    dU = theta_expr(reg, param)
    theta_out = not np.any(S.E1)

    system = lmi.MISystem(reg)
    system.add(X, ">>", name="X_pos")
    XA = X @ A0
    XB = X @ B10
    if theta_out:
        CD = np.hstack([C10, D10])
        F = lmi.bmat(reg, [[XA + XA.T, XB], [XB.T, -mu * np.eye(nw1)]]) + CD.T @ CD
        width = nx + nw1
    else:
        C1t = dU.T @ S.E1.T
        C1e = S.C.T @ C1t + C10.T               # (C1 + E1 dU C)^T
        D1e = S.F1.T @ C1t + D10.T
        F = lmi.bmat(reg, [[XA + XA.T, XB, C1e],
                           [XB.T, -mu * np.eye(nw1), D1e],
                           [C1e.T, D1e.T, -np.eye(nz1)]])
        width = nx + nw1 + nz1
    # bilinear part: [X B; 0] dU [C F1 (0)]
    G = S.B.T @ lmi.bmat(reg, [[X, np.zeros((nx, width - nx))]])
    CF = np.zeros((S.n_z, width))
    CF[:, :nx] = S.C
    CF[:, nx:nx + nw1] = S.F1
    H = dU @ CF
    system.add(F, "<<", bilinear=[(G, H)], name="bounded_real")
    system.objective = mu
    return system, reg


def linearize_about(system, iterate, scale=None):
    """Convex-concave inner approximation of every bilinear constraint.

    ``G^T H + H^T G = P^T P / 2 - D^T D / 2`` with ``P = tG + H/t`` and
    ``D = tG - H/t``. The convex part is lifted by a Schur complement and the
    concave part replaced by its linearization at the iterate, which bounds it
    from above. Hence feasibility of the result implies feasibility of the
    original, and the iterate stays feasible if it was.
    """
    if not system.has_bilinear:
        return system
    reg = system.registry
    x0 = iterate if not isinstance(iterate, dict) else reg.vector(iterate)
    out = lmi.MISystem(reg, objective=system.objective)
    for c in system.constraints:
        if not c.bilinear:
            out.constraints.append(c)
            continue
        sign = 1.0 if c.sense == "<<" else -1.0
        F = sign * c.expr
        lifts = []
        for G, H in c.bilinear:
            H = sign * H
            g0, h0 = lmi.evaluate(G, x0), lmi.evaluate(H, x0)
            if scale is not None:
                t = scale
            else:
                ng, nh = np.linalg.norm(g0), np.linalg.norm(h0)
                t = np.sqrt(nh / ng) if ng > 0 and nh > 0 else 1.0
            P = t * G + H * (1.0 / t)
            D = t * G - H * (1.0 / t)
            d0 = t * g0 - h0 / t
            F = F - 0.5 * (D.T @ d0).sym() + 0.5 * d0.T @ d0
            lifts.append(P)
        k = len(lifts)
        rows = [[F] + [L.T for L in lifts]]
        for a, L in enumerate(lifts):
            row = [L] + [None] * k
            row[1 + a] = -2.0 * np.eye(L.shape[0])
            rows.append(row)
        out.add(lmi.bmat(reg, rows), "<<", margin=c.margin, name=c.name + "_ccp")
    return out


def _bisect_fixed_theta(system, reg, param, theta, st):
    """gamma* and witness of the LMI obtained by fixing theta."""
    fixed = lmi.fix_variables(system, dict(zip(theta_names(param), theta)))
    fixed.objective = None

    def builder(g):
        return lmi.to_standard_form(lmi.fix_variables(fixed, {"mu": g * g}))

    g, sol = bisect_feasibility(builder, st.gamma_interval, st.bisect_tol, st.solver)
    x = sol.x_full.copy()
    x[reg["mu"].offset] = g * g
    for name, t in zip(theta_names(param), theta):
        x[reg[name].offset] = t
    return g, x


def sequential_synthesis(system, reg, param, theta, st, method):
    """Alternate a fixed-theta bisection with a convex-concave step.

    ``system`` carries bilinear markers, the objective ``mu`` and the theta box.
    Each iteration (a) bisects gamma at the current theta, giving a strictly
    feasible witness, then (b) minimizes mu over the linearization about that
    witness. The linearized problem contains the witness, so the certified
    gamma never increases (up to the bisection tolerance).
    """
    trace = []
    gamma_prev = None
    converged = False
    x = None
    solve_ms = lin_ms = 0.0
    for it in range(st.max_iter):
        t1 = time.perf_counter()
        try:
            gamma, x = _bisect_fixed_theta(system, reg, param, theta, st)
        except ValueError as exc:
            if it == 0:
                raise ValueError(f"initial point infeasible: {exc}") from exc
            raise
        trace.append(TraceEntry(it, theta.copy(), gamma, "optimal",
                                (time.perf_counter() - t1) * 1e3))
        log.info("%s iter %d theta=%s gamma=%.6f", method, it, theta, gamma)
        if gamma_prev is not None and abs(gamma_prev - gamma) < st.tol_gamma:
            converged = True
            solve_ms += (time.perf_counter() - t1) * 1e3
            break
        gamma_prev = gamma
        ta = time.perf_counter()
        prob = lmi.to_standard_form(linearize_about(system, x))
        dt = (time.perf_counter() - ta) * 1e3
        lin_ms += dt
        sol = solve(prob, st.solver)
        solve_ms += (time.perf_counter() - t1) * 1e3 - dt
        if not is_feasible(sol, st.solver.tol):
            trace[-1].status = sol.status
            break
        theta = param.clip([sol.x_full[reg[n].offset] for n in theta_names(param)])
    return trace, converged, x, solve_ms, lin_ms


def synth_lumped(S, param, theta_init=None, settings=None):
    """Sequential LMI synthesis of the adjacency parameters on the lumped BMI.

    Stops when the certified gamma changes by less than ``tol_gamma`` or
    after ``max_iter`` iterations.
    """
    st = settings or SynthesisSettings()
    if theta_init is None:
        theta_init = param.clip(np.full(param.n_theta, DEFAULT_THETA_INIT))
    theta = param.check_theta(theta_init)
    t0 = time.perf_counter()
    system, reg = build_lumped_mi(S, param)
    system.screen()
    add_theta_box(system, param)
    assembly_ms = (time.perf_counter() - t0) * 1e3
    trace, converged, x, solve_ms, lin_ms = sequential_synthesis(
        system, reg, param, theta, st, "lumped")
    return SynthesisResult(
        theta_star=trace[-1].theta, gamma_star=trace[-1].gamma, trace=trace,
        converged=converged, unknowns=lmi.count_unknowns(reg),
        witness=reg.assignment(x), assembly_ms=assembly_ms + lin_ms,
        solve_ms=solve_ms, method="lumped")


def certify_theta(S, param, theta, settings=None):
    """Smallest certified gamma and its witness at a fixed adjacency."""
    st = settings or SynthesisSettings()
    theta = param.check_theta(theta)
    system, reg = build_lumped_mi(S, param)
    system.screen()
    gamma, x = _bisect_fixed_theta(system, reg, param, theta, st)
    return gamma, reg.assignment(x)


def oracle_grid(S, param, resolution=0.002, grid=None):
    """H-infinity norm of the closed loop over a parameter grid (n_theta = 1).

    Unstable closed loops are recorded as +inf.
    """
    if param.n_theta != 1:
        raise ValueError("oracle_grid needs a single adjacency parameter")
    if grid is None:
        lo, hi = float(param.lower[0]), float(param.upper[0])
        n = int(np.floor((hi - lo) / resolution + 1e-9)) + 1
        grid = lo + resolution * np.arange(n)
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    gam = np.empty(grid.size)
    for k, a in enumerate(grid):
        try:
            gam[k] = hinf_norm(close_lft(S, eval_adjacency(param, [a])))
        except ValueError:
            gam[k] = np.inf
    k = int(np.argmin(gam))
    return np.array([grid[k]]), float(gam[k]), np.column_stack([grid, gam])
