"""Distributed edge-weight synthesis through a synthetic communication agent.

The communication medium is modelled as a static agent that receives every
spatial output ``z_j`` and returns the weighted messages ``m_ij = u_ij z_j``
(plus the aggregate ``w_i = sum_j m_ij``). Every real agent is then connected
to the communication agent only, by ideal port equalities, and the supplies
of the two sides cancel (neutral interconnection).

Multipliers, per agent i, one slot per peer k (diagonal variables):

* ``Y11_i[k]``  (<= 0 in effect) weighs the copy of ``z_i`` sent toward k;
  slot i is the copy used in the aggregate channel.
* ``cY11_i[j]`` (>= 0) weighs the message received from j; slot i weighs the
  aggregate input ``w_i``.

Slots of peers that are not neighbours never receive a coefficient and are
removed by sparsity screening. The only bilinear terms are ``u_ij(theta) *
cY11_i[j]`` in the communication agent's dissipation inequality.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from . import lmi
from .graph import eval_adjacency, spectral_norm
from .lumped import (DEFAULT_THETA_INIT, SynthesisResult, SynthesisSettings,
                     _bisect_fixed_theta, add_theta_box, sequential_synthesis, theta_names)
from .sstools import AgentModel

LEVELS = ("bar", "hat")


# ---------------------------------------------------------------------------
# zero-padding extensions

@dataclass(frozen=True)
class ExtendedAgent:
    """Agent with every input/output vector padded to ``slots`` copies.

    Slot ``i`` (1-based) carries the original signal; the others are zero.
    ``bar`` uses N slots, ``hat`` uses N(N+1) slots. The state is unchanged.
    """

    base: AgentModel
    N: int
    i: int
    level: str
    A: np.ndarray
    B1: np.ndarray
    B: np.ndarray
    C1: np.ndarray
    C: np.ndarray
    D1: np.ndarray
    E1: np.ndarray
    F1: np.ndarray

    @property
    def slots(self):
        return self.N if self.level == "bar" else self.N * (self.N + 1)

    def compress(self):
        """Drop the zero slots, recovering the base agent."""
        a, k = self.base, self.i - 1
        sizes = {"w1": a.n_w1, "w": a.n_w, "z1": a.n_z1, "z": a.n_z}
        roles = {"B1": (None, "w1"), "B": (None, "w"), "C1": ("z1", None), "C": ("z", None),
                 "D1": ("z1", "w1"), "E1": ("z1", "w"), "F1": ("z", "w1")}
        out = {"A": self.A}
        for key, (r, c) in roles.items():
            M = getattr(self, key)
            if r is not None:
                M = M[k * sizes[r]:(k + 1) * sizes[r], :]
            if c is not None:
                M = M[:, k * sizes[c]:(k + 1) * sizes[c]]
            out[key] = M
        return AgentModel(**out, check_stability=False)


def _slot(n, slots, k):
    """Selector placing an n-vector into slot k of a slots*n vector."""
    E = np.zeros((slots * n, n))
    E[k * n:(k + 1) * n, :] = np.eye(n)
    return E


def extend_agent(agent, N, i, level="bar"):
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}, got {level!r}")
    if not 1 <= i <= N:
        raise ValueError(f"agent index {i} out of range 1..{N}")
    slots = N if level == "bar" else N * (N + 1)
    k = i - 1
    Pw1, Pw = _slot(agent.n_w1, slots, k), _slot(agent.n_w, slots, k)
    Pz1, Pz = _slot(agent.n_z1, slots, k), _slot(agent.n_z, slots, k)
    return ExtendedAgent(
        base=agent, N=N, i=i, level=level, A=agent.A,
        B1=agent.B1 @ Pw1.T, B=agent.B @ Pw.T,
        C1=Pz1 @ agent.C1, C=Pz @ agent.C,
        D1=Pz1 @ agent.D1 @ Pw1.T, E1=Pz1 @ agent.E1 @ Pw.T, F1=Pz @ agent.F1 @ Pw1.T)


# ---------------------------------------------------------------------------
# communication agent and supply blocks in the padded layout

@dataclass(frozen=True)
class CommAgent:
    """Static communication agent; ``Dhat = diag(diag(0, U), diag(0, U))``."""

    upsilon: np.ndarray
    Ahat: np.ndarray
    Bhat: np.ndarray
    Chat: np.ndarray
    Dhat: np.ndarray

    @property
    def N(self):
        return self.upsilon.shape[0]


def build_comm_agent(param, theta, N=None, n_x=2):
    U = eval_adjacency(param, theta)
    N = param.N if N is None else N
    if U.shape != (N, N):
        raise ValueError(f"adjacency is {U.shape}, expected {(N, N)}")
    pad = np.zeros((N * N, N * N))
    half = block_diag(pad, U)                     # N(N+1) square
    D = block_diag(half, half)                    # performance half, spatial half
    n = D.shape[0]
    return CommAgent(upsilon=U, Ahat=np.zeros((n_x, n_x)), Bhat=np.zeros((n_x, n)),
                     Chat=np.zeros((n, n_x)), Dhat=D)


def neutrality_map(cY11, cY12, cY22):
    """Agent-side blocks from communication-side blocks.

    ``[[Y11, Y12], [Y21, Y22]] = -J [[cY11, cY12], [cY21, cY22]] J`` with
    ``J = [[0, I], [I, 0]]``, i.e. ``Y11 = -cY22, Y12 = -cY12^T, Y22 = -cY11``.
    """
    cY11, cY12, cY22 = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (cY11, cY12, cY22))
    n1, n2 = cY11.shape[0], cY22.shape[0]
    if cY11.shape != (n1, n1) or cY22.shape != (n2, n2) or cY12.shape != (n1, n2):
        raise ValueError("inconsistent communication-side supply blocks")
    Yc = np.block([[cY11, cY12], [cY12.T, cY22]])
    J = np.block([[np.zeros((n2, n1)), np.eye(n2)], [np.eye(n1), np.zeros((n1, n2))]])
    Y = -J @ Yc @ J.T
    return Y[:n2, :n2], Y[:n2, n2:], Y[n2:, n2:]


@dataclass(frozen=True)
class SupplyBlocks:
    """Variable names of the supply multipliers of an N-agent system."""

    N: int

    def Y11(self, i):
        return f"Y11_{i}"

    def Y12(self, i):
        return f"Y12_{i}"

    def cY11(self, i):
        return f"cY11_{i}"

    def cY12(self, i):
        return f"cY12_{i}"


def declare_supply(reg, N, n_x):
    """Per-agent storage and supply variables; returns SupplyBlocks."""
    sb = SupplyBlocks(N)
    for i in range(1, N + 1):
        reg.declare(f"X_{i}", "symmetric", n_x)
        reg.declare(sb.Y11(i), "diagonal", N)
        reg.declare(sb.cY11(i), "diagonal", N)
        # scalar spatial ports: the 1x1 skew blocks carry no unknowns
        reg.declare(sb.Y12(i), "skew", 1)
        reg.declare(sb.cY12(i), "skew", 1)
    return sb


def build_zhat_blocks(reg, sb, who):
    """The six padded supply partitions for agent ``who`` (1..N) or ``"c"``.

    Agent blocks act on the last N-slot of the padded spatial vectors; the
    communication blocks act on the first N*N entries, slot i holding the
    signals exchanged with agent i. The communication 22 block carries
    ``-diag(Y11_i)`` so that the paired supplies cancel.
    """
    N = sb.N
    pad = np.zeros((N * N, N * N))
    zN = np.zeros((N, N))
    eye = np.eye(N)

    def last(E):
        return lmi.bmat(reg, [[pad, None], [None, E]])

    def first(blocks):
        return lmi.bmat(reg, [[b if a == c else None for c, b in enumerate(blocks)] + [None]
                              for a in range(len(blocks))] + [[None] * len(blocks) + [zN]])

    if who == "c":
        Z11 = first([-reg.expr(sb.cY11(i)) for i in range(1, N + 1)])
        Z12 = first([-(reg.expr(sb.Y12(i)) * eye) for i in range(1, N + 1)])
        Z22 = first([-reg.expr(sb.Y11(i)) for i in range(1, N + 1)])
    else:
        i = int(who)
        if not 1 <= i <= N:
            raise ValueError(f"agent index {i} out of range 1..{N}")
        Z11 = last(reg.expr(sb.Y11(i)))
        Z12 = last(reg.expr(sb.cY12(i)) * eye)
        Z22 = last(reg.expr(sb.cY11(i)))
    return {"Z11": Z11, "Z12": Z12, "Z21": Z12.T, "Z22": Z22}


def check_aux19(comm, Zhat11):
    """``|| [Chat Dhat]^T Zhat11 [Chat Dhat] ||`` on the spatial output half.

    ``Zhat11`` is the evaluated communication 11-block (size N(N+1)).
    """
    Z = np.atleast_2d(np.asarray(Zhat11, dtype=float))
    n = Z.shape[0]
    D = comm.Dhat[n:, n:]
    C = comm.Chat[n:, :]
    if D.shape != (n, n):
        raise ValueError(f"Zhat11 is {Z.shape}, expected {(D.shape[0],) * 2}")
    M = np.hstack([C, D])
    return float(np.linalg.norm(M.T @ Z @ M))


def padded_supply(blocks, zhat, what):
    """Quadratic supply ``[z; w]^T [[Z11, Z12], [Z21, Z22]] [z; w]`` (numeric blocks)."""
    return float(zhat @ blocks["Z11"] @ zhat + 2 * zhat @ blocks["Z12"] @ what
                 + what @ blocks["Z22"] @ what)


# ---------------------------------------------------------------------------
# distributed matrix inequalities

def _edges(param):
    """Directed edges (i, j): agent i receives from agent j (0-based)."""
    return [(i, j) for i, j in param.structural_edges() if i != j]


def _diag_entry(reg, name, k):
    return reg.expr(name)[k:k + 1, k:k + 1]


def build_dist_mis(agents, param, gamma=None, reg=None):
    """Per-agent LMIs plus the communication agent's inequalities.

    Returns ``(system, reg)``. With ``gamma`` given, ``mu = gamma^2`` is fixed.
    """
    agents = list(agents)
    N = len(agents)
    if N != param.N:
        raise ValueError(f"{N} agents but adjacency is {param.N}x{param.N}")
    for k, a in enumerate(agents):
        if a.n_w != 1 or a.n_z != 1:
            raise NotImplementedError(
                f"unsupported: agent {k + 1} has spatial ports {a.n_w}x{a.n_z}; "
                "synthesis needs scalar spatial ports")
    nx = agents[0].n_x
    if any(a.n_x != nx for a in agents):
        raise NotImplementedError("agents with different state sizes are not supported")
    reg = reg or lmi.VariableRegistry()
    sb = declare_supply(reg, N, nx)
    for name in theta_names(param):
        reg.declare(name, "scalar")
    mu = reg.expr(reg.declare("mu", "scalar", counted=False))
    edges = _edges(param)
    inn = {i: [j for (a, j) in edges if a == i] for i in range(N)}
    out = {j: [i for (i, b) in edges if b == j] for j in range(N)}

    def P(i, k):          # weight on agent i's copy of z_i sent to k (>= 0)
        return -_diag_entry(reg, sb.Y11(i + 1), k)

    def R(i, j):          # weight on message from j received by i (>= 0)
        return _diag_entry(reg, sb.cY11(i + 1), j)

    system = lmi.MISystem(reg)
    for i, a in enumerate(agents):
        X = reg.expr(f"X_{i + 1}")
        system.add(X, ">>", name=f"X_{i + 1}_pos")
        d = len(inn[i])
        Ptot = P(i, i)
        for k in out[i]:
            Ptot = Ptot + P(i, k)
        CF = np.hstack([a.C, a.F1])
        ones = np.ones((1, d))
        XA = X @ a.A
        XB1 = X @ a.B1
        top = lmi.bmat(reg, [[XA + XA.T, XB1], [XB1.T, -np.eye(a.n_w1)]]) + Ptot * (CF.T @ CF)
        perf = np.vstack([a.C1.T, a.D1.T])
        zperf = -mu * np.eye(a.n_z1)
        if d:
            msg = lmi.bmat(reg, [[X @ (a.B @ ones)], [np.zeros((a.n_w1, d))]])
            Rm = lmi.const(reg, np.zeros((d, d)))
            for k, j in enumerate(inn[i]):
                e = np.zeros((d, d))
                e[k, k] = 1.0
                Rm = Rm - R(i, j) * e
            Rm = Rm - R(i, i) * np.ones((d, d))
            E1m = a.E1 @ ones
            rows = [[top, msg, perf], [msg.T, Rm, E1m.T], [perf.T, E1m, zperf]]
        else:
            rows = [[top, perf], [perf.T, zperf]]
        system.add(lmi.bmat(reg, rows), "<<", name=f"agent_{i + 1}")

    n_th = param.n_theta
    th = [reg.expr(n) for n in theta_names(param)]
    U0 = param.upsilon0
    for (i, j) in edges:
        rij = R(i, j)
        M = lmi.bmat(reg, [[P(j, i), U0[i, j] * rij], [U0[i, j] * rij, rij]])
        coef = [b[i, j] for b in param.bases]
        pairs = []
        if any(coef):
            G = lmi.bmat(reg, [[np.zeros((n_th, 1)), rij * np.array(coef).reshape(-1, 1)]])
            H = lmi.bmat(reg, [[lmi.bmat(reg, [[t] for t in th]), np.zeros((n_th, 1))]])
            pairs.append((G, H))
        system.add(M, ">>", strict=False, bilinear=pairs, name=f"edge_{i + 1}_{j + 1}")

    Pagg = lmi.const(reg, np.zeros((N, N)))
    Ragg = lmi.const(reg, np.zeros((N, N)))
    for k in range(N):
        e = np.zeros((N, N))
        e[k, k] = 1.0
        Pagg = Pagg + P(k, k) * e
        Ragg = Ragg + R(k, k) * e
    RU = Ragg @ U0
    dU = lmi.const(reg, np.zeros((N, N)))
    for t, b in zip(th, param.bases):
        dU = dU + t * b
    agg = lmi.bmat(reg, [[Pagg, RU.T], [RU, Ragg]])
    G = lmi.bmat(reg, [[np.zeros((N, N)), Ragg]])
    H = lmi.bmat(reg, [[dU, np.zeros((N, N))]])
    system.add(agg, ">>", strict=False, bilinear=[(G, H)], name="comm_aggregate")

    Uth = dU + U0
    system.add(lmi.bmat(reg, [[mu * np.eye(N), Uth], [Uth.T, np.eye(N)]]), ">>",
               strict=False, name="comm_performance")
    system.objective = mu
    if gamma is not None:
        system = lmi.fix_variables(system, {"mu": float(gamma) ** 2})
    return system, reg


def synth_dist(agents, param, theta_init=None, settings=None):
    """Sequential synthesis on the distributed inequalities (same loop as lumped)."""
    st = settings or SynthesisSettings()
    if theta_init is None:
        theta_init = param.clip(np.full(param.n_theta, DEFAULT_THETA_INIT))
    theta = param.check_theta(theta_init)
    t0 = time.perf_counter()
    system, reg = build_dist_mis(agents, param)
    system.screen()
    add_theta_box(system, param)
    assembly_ms = (time.perf_counter() - t0) * 1e3
    trace, converged, x, solve_ms, lin_ms = sequential_synthesis(
        system, reg, param, theta, st, "dist")
    return SynthesisResult(
        theta_star=trace[-1].theta, gamma_star=trace[-1].gamma, trace=trace,
        converged=converged, unknowns=lmi.count_unknowns(reg),
        witness=reg.assignment(x), assembly_ms=assembly_ms + lin_ms,
        solve_ms=solve_ms, method="distributed")


def certify_theta(agents, param, theta, settings=None):
    """Smallest gamma certified by the distributed inequalities at a fixed adjacency."""
    st = settings or SynthesisSettings()
    theta = param.check_theta(theta)
    system, reg = build_dist_mis(agents, param)
    system.screen()
    gamma, x = _bisect_fixed_theta(system, reg, param, theta, st)
    return gamma, reg.assignment(x)


def comm_gain(param, theta):
    """Gain of the communication agent's performance channel, ||Upsilon||_2."""
    return spectral_norm(eval_adjacency(param, theta))
