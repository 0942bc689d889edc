"""Time-domain audits of synthesized certificates.

Trajectories come from a fixed-step classical Runge-Kutta integrator. The
audits integrate supply rates along them and compare against the quadratic
storage ``V = x^T X x`` of a witness.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, signal

from .graph import spectral_norm
from .sstools import ClosedLoopSystem, freq_response

DEFAULT_T = 30.0
DEFAULT_DT = 1e-3


@dataclass
class Trajectory:
    """Uniformly sampled signals; every array has one row per time sample."""

    t: np.ndarray
    x: np.ndarray
    w1: np.ndarray
    z1: np.ndarray
    w: np.ndarray = None
    z: np.ndarray = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.t)
        for name in ("x", "w1", "z1", "w", "z"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise ValueError(f"{name} has {len(arr)} samples, expected {n}")
        if n > 2 and not np.allclose(np.diff(self.t), self.dt, rtol=1e-9, atol=1e-12):
            raise ValueError("time grid is not uniform")

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    def to_csv(self, path):
        cols = [("t", self.t[:, None]), ("x", self.x), ("w1", self.w1), ("z1", self.z1)]
        header, data = [], []
        for name, arr in cols:
            arr = np.atleast_2d(arr.T).T if arr.ndim == 1 else arr
            if name == "t":
                header.append("t")
            else:
                header += [f"{name}{k + 1}" for k in range(arr.shape[1])]
            data.append(arr)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            wr.writerows(np.hstack(data).tolist())


def _inputs_on_grid(u, t):
    vals = np.asarray(u(t), dtype=float)
    return vals.reshape(len(t), -1)


def simulate(sys, u, dt=DEFAULT_DT, T=DEFAULT_T, x0=None):
    """Classical RK4 on ``x' = A x + B u, y = C x + D u``.

    ``u`` maps a time array to an array of shape (len(t), n_in).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = int(round(T / dt))
    t = dt * np.arange(n + 1)
    th = dt * (np.arange(n) + 0.5)
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    U = _inputs_on_grid(u, t)
    Um = _inputs_on_grid(u, th)
    if U.shape[1] != B.shape[1]:
        raise ValueError(f"input has {U.shape[1]} channels, system expects {B.shape[1]}")
    BU, BUm = U @ B.T, Um @ B.T
    x = np.zeros((n + 1, A.shape[0]))
    if x0 is not None:
        x[0] = x0
    At = A.T
    for k in range(n):
        xk = x[k]
        k1 = xk @ At + BU[k]
        k2 = (xk + 0.5 * dt * k1) @ At + BUm[k]
        k3 = (xk + 0.5 * dt * k2) @ At + BUm[k]
        k4 = (xk + dt * k3) @ At + BU[k + 1]
        x[k + 1] = xk + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    y = x @ C.T + U @ D.T
    return Trajectory(t=t, x=x, w1=U, z1=y)


def simulate_network(S, Upsilon, u, dt=DEFAULT_DT, T=DEFAULT_T, x0=None):
    """Simulate the interconnection ``w = Upsilon z`` and keep the spatial signals."""
    from .sstools import close_lft

    traj = simulate(close_lft(S, Upsilon), u, dt, T, x0)
    z = traj.x @ S.C.T + traj.w1 @ S.F1.T
    w = z @ np.asarray(Upsilon).T
    traj.z, traj.w = z, w
    traj.extra["upsilon"] = np.asarray(Upsilon, dtype=float)
    traj.extra["S"] = S
    return traj


def agent_view(traj, i):
    """Signals of agent i (0-based) inside a network trajectory.

    ``extra['messages']`` holds ``m_ij = Upsilon[i, j] z_j`` for every j.
    """
    S, U = traj.extra["S"], traj.extra["upsilon"]
    sl = {k: S.offsets(k) for k in ("n_x", "n_w1", "n_z1", "n_z", "n_w")}

    def cut(arr, key):
        return arr[:, sl[key][i]:sl[key][i + 1]]

    view = Trajectory(t=traj.t, x=cut(traj.x, "n_x"), w1=cut(traj.w1, "n_w1"),
                      z1=cut(traj.z1, "n_z1"), w=cut(traj.w, "n_w"), z=cut(traj.z, "n_z"))
    view.extra["messages"] = traj.z * U[i][None, :]
    view.extra["model"] = S.agents[i]
    return view


# ---------------------------------------------------------------------------
# finite-energy test inputs

def windowed_sinusoid(rng, n_in, T=DEFAULT_T, n_tones=3):
    """Sum of random tones under a Hann window on a random sub-interval."""
    t0 = rng.uniform(0.0, 0.3 * T)
    t1 = rng.uniform(t0 + 0.3 * T, 0.8 * T)
    freqs = rng.uniform(0.05, 5.0, size=(n_tones, n_in))
    phases = rng.uniform(0, 2 * np.pi, size=(n_tones, n_in))
    amps = rng.normal(size=(n_tones, n_in))

    def u(t):
        t = np.atleast_1d(t)[:, None, None]
        win = np.where((t >= t0) & (t <= t1),
                       np.sin(np.pi * (t - t0) / (t1 - t0)) ** 2, 0.0)
        return (win * amps * np.sin(freqs * t + phases)).sum(axis=1)

    return u


def filtered_noise_burst(rng, n_in, T=DEFAULT_T, dt=DEFAULT_DT, cutoff_hz=1.0):
    """Low-pass filtered white noise under a Tukey window on a random burst."""
    h = dt / 2
    grid = h * np.arange(int(round(T / h)) + 1)
    b, a = signal.butter(2, cutoff_hz, fs=1.0 / h)
    raw = signal.filtfilt(b, a, rng.normal(size=(grid.size, n_in)), axis=0)
    raw /= max(np.std(raw), 1e-12)
    t0 = rng.uniform(0.0, 0.3 * T)
    t1 = rng.uniform(t0 + 0.3 * T, 0.8 * T)
    mask = (grid >= t0) & (grid <= t1)
    win = np.zeros(grid.size)
    win[mask] = signal.windows.tukey(int(mask.sum()), 0.5)
    vals = raw * win[:, None]

    def u(t):
        t = np.atleast_1d(t)
        return np.column_stack([np.interp(t, grid, vals[:, k]) for k in range(n_in)])

    return u


def random_l2_input(rng, n_in, T=DEFAULT_T, dt=DEFAULT_DT):
    if rng.uniform() < 0.5:
        return windowed_sinusoid(rng, n_in, T)
    return filtered_noise_burst(rng, n_in, T, dt)


# ---------------------------------------------------------------------------
# gain estimation

def estimate_l2_gain(sys, omegas=None, T=DEFAULT_T, dt=DEFAULT_DT):
    """Largest steady-state sinusoidal gain over a frequency grid.

    Each tone is applied along the worst input direction at that frequency;
    the gain is measured as an RMS ratio over whole periods in the second half
    of the run, so transients only lower the estimate.
    """
    if omegas is None:
        omegas = np.concatenate([[0.0], np.logspace(-1, 1, 9)])
    best = 0.0
    for w in omegas:
        _, _, Vh = np.linalg.svd(freq_response(sys, w))
        v = Vh[0].conj()
        if w == 0.0:
            v = np.real(v)

            def u(t, v=v):
                return np.outer(np.ones_like(np.atleast_1d(t)), v)

            tr = simulate(sys, u, dt, T)
            g = np.linalg.norm(tr.z1[-1]) / np.linalg.norm(tr.w1[-1])
        else:
            def u(t, v=v, w=w):
                return np.real(np.outer(np.exp(1j * w * np.atleast_1d(t)), v))

            period = 2 * np.pi / w
            if period > T / 2:
                continue
            tr = simulate(sys, u, dt, T)
            n_per = int((T / 2) // period)
            k0 = int(round((T - n_per * period) / dt))
            num = np.sum(tr.z1[k0:] ** 2)
            den = np.sum(tr.w1[k0:] ** 2)
            g = np.sqrt(num / den) if den > 0 else 0.0
        best = max(best, float(g))
    return best


# ---------------------------------------------------------------------------
# dissipation audits

@dataclass
class DissipationReport:
    storage: np.ndarray
    performance_supply: float
    spatial_supply: float
    residual: float
    storage_min_eig: float
    tol: float
    passed: bool


def _integrate(vals, dt):
    return float(integrate.trapezoid(vals, dx=dt))


def _dynamics_residual(model, traj):
    """Relative mismatch between the sampled derivative and the model."""
    if isinstance(model, ClosedLoopSystem):
        rhs = traj.x @ model.A.T + traj.w1 @ model.B.T
    else:
        rhs = traj.x @ model.A.T + traj.w1 @ model.B1.T + traj.w @ model.B.T
    dx = np.gradient(traj.x, traj.dt, axis=0)
    scale = max(np.linalg.norm(rhs), np.linalg.norm(dx), 1e-300)
    return float(np.linalg.norm(dx[1:-1] - rhs[1:-1]) / scale)


def check_dissipation(model, X, gamma, traj, spatial_supply=None, tol=None,
                      consistency_tol=1e-3):
    """Audit ``V(T) - V(0) <= int (|w1|^2 - |z1|^2 / gamma^2) + int s``.

    ``s`` is the spatial supply rate (one value per sample, 0 for a closed
    network). The storage must also be nonnegative.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if np.any(traj.x) and _dynamics_residual(model, traj) > consistency_tol:
        raise ValueError("inconsistent trajectory: samples do not satisfy the model dynamics")
    V = np.einsum("ti,ij,tj->t", traj.x, X, traj.x)
    dt = traj.dt if len(traj.t) > 1 else 1.0
    perf = _integrate(np.sum(traj.w1 ** 2, axis=1) - np.sum(traj.z1 ** 2, axis=1) / gamma ** 2, dt)
    spat = 0.0 if spatial_supply is None else _integrate(np.asarray(spatial_supply), dt)
    resid = float(V[-1] - V[0] - perf - spat)
    energy = _integrate(np.sum(traj.w1 ** 2, axis=1), dt)
    tol = 1e-6 * max(1.0, energy, abs(V).max()) if tol is None else tol
    min_eig = float(np.linalg.eigvalsh(0.5 * (X + X.T))[0])
    return DissipationReport(storage=V, performance_supply=perf, spatial_supply=spat,
                             residual=resid, storage_min_eig=min_eig, tol=tol,
                             passed=bool(resid <= tol and min_eig >= -tol))


def dist_spatial_supply(witness, param, i, view):
    """Spatial supply rate of agent i (0-based) under the distributed multipliers.

    ``s = sum_j R_ij m_ij^2 + R_ii w_i^2 - P_tot z_i^2`` with
    ``P = -diag(Y11_i)``, ``R = diag(cY11_i)``.
    """
    N = param.N
    Y11 = np.diag(witness[f"Y11_{i + 1}"])
    R = np.diag(witness[f"cY11_{i + 1}"])
    edges = [(a, b) for a, b in param.structural_edges() if a != b]
    inn = [j for (a, j) in edges if a == i]
    out = [k for (k, b) in edges if b == i]
    Ptot = -(Y11[i] + sum(Y11[k] for k in out))
    m = view.extra["messages"]
    s = -Ptot * np.sum(view.z ** 2, axis=1) + R[i] * np.sum(view.w ** 2, axis=1)
    for j in inn:
        s = s + R[j] * m[:, j] ** 2
    assert N == len(R)
    return s


def check_neutrality(agent_signals, comm_signals, agent_blocks, comm_blocks, N):
    """Pointwise ``max_t |sum_i Phi_i + Phi_c|`` in the padded layout.

    ``agent_signals[i] = (zhat, what)`` and ``comm_signals = (czhat, cwhat)``
    are arrays of shape (n_t, N(N+1)). Agent i's last N-slot must equal the
    communication agent's slot i (input side for z, output side for w).
    """
    cz, cw = (np.atleast_2d(a) for a in comm_signals)
    total = np.zeros(cz.shape[0])
    for i, (zh, wh) in enumerate(agent_signals):
        zh, wh = np.atleast_2d(zh), np.atleast_2d(wh)
        s = slice(i * N, (i + 1) * N)
        if not (np.allclose(zh[:, N * N:], cw[:, s], atol=1e-12)
                and np.allclose(wh[:, N * N:], cz[:, s], atol=1e-12)):
            raise ValueError(f"port mismatch between agent {i + 1} and the communication agent")
        B = agent_blocks[i]
        total += _quad(zh, wh, B)
    total += _quad(cz, cw, comm_blocks)
    return float(np.max(np.abs(total))) if total.size else 0.0


def _quad(a, b, B):
    return (np.einsum("ti,ij,tj->t", a, B["Z11"], a) + 2 * np.einsum("ti,ij,tj->t", a, B["Z12"], b)
            + np.einsum("ti,ij,tj->t", b, B["Z22"], b))


def storage_gap_bound(Upsilon, comm_w1_l2norm_sq):
    return max(0.0, spectral_norm(Upsilon) - 1.0) * float(comm_w1_l2norm_sq)


def theorem1_gap(V_hat_T, V_bar_T, Upsilon, comm_w1_l2norm_sq, tol=1e-8):
    """``V_hat(T) - V_bar(T) <= max(0, ||Upsilon|| - 1) ||c_w1||^2 + tol``."""
    return bool(V_hat_T - V_bar_T <= storage_gap_bound(Upsilon, comm_w1_l2norm_sq) + tol)


# ---------------------------------------------------------------------------
# full audit of a synthesized pair of certificates

def _block_stack(witness, N, n_x):
    from . import lmi
    from .dist import build_zhat_blocks, declare_supply

    reg = lmi.VariableRegistry()
    sb = declare_supply(reg, N, n_x)
    reg.freeze()

    def num(who):
        return {k: lmi.evaluate(v, {n: witness[n] for n in v.handles()})
                for k, v in build_zhat_blocks(reg, sb, who).items()}

    return [num(i + 1) for i in range(N)], num("c")


def random_consistent_signals(rng, N):
    """Padded agent and communication signals that satisfy the port equalities."""
    n = N * (N + 1)
    cz, cw = rng.normal(size=(1, n)), rng.normal(size=(1, n))
    agents = []
    for i in range(N):
        zh, wh = rng.normal(size=(1, n)), rng.normal(size=(1, n))
        zh[:, N * N:] = cw[:, i * N:(i + 1) * N]
        wh[:, N * N:] = cz[:, i * N:(i + 1) * N]
        agents.append((zh, wh))
    return agents, (cz, cw)


def audit_suite(S, agents, param, lumped, dist, trials=50, T=DEFAULT_T, dt=DEFAULT_DT,
                seed=0, alpha_samples=11, neutrality_trials=100, settings=None,
                trajectory_csv=None):
    """Run every time-domain and algebraic audit; returns a plain summary dict.

    ``lumped`` and ``dist`` are synthesis results on the same system.
    """
    from .dist import build_comm_agent, check_aux19
    from .graph import eval_adjacency
    from .lumped import certify_theta
    from .sstools import close_lft, hinf_norm

    rng = np.random.default_rng(seed)
    N, n_x = param.N, agents[0].n_x
    out = {}

    for tag, res in (("lumped", lumped), ("distributed", dist)):
        cl = close_lft(S, eval_adjacency(param, res.theta_star))
        est, hinf = estimate_l2_gain(cl, T=T, dt=dt), hinf_norm(cl)
        out[f"{tag}_gain_chain"] = {
            "estimate": est, "hinf": hinf, "gamma": float(res.gamma_star),
            "holds": bool(est <= 1.01 * hinf and hinf <= 1.01 * res.gamma_star)}

    U_l = eval_adjacency(param, lumped.theta_star)
    cl_l = close_lft(S, U_l)
    U_d = eval_adjacency(param, dist.theta_star)
    cl_d = close_lft(S, U_d)
    gamma_bar, wit_bar = certify_theta(S, param, dist.theta_star, settings)
    X_bar = wit_bar["X"]
    X_hat = np.zeros((S.n_x, S.n_x))
    offs = S.offsets("n_x")
    for i in range(N):
        X_hat[offs[i]:offs[i + 1], offs[i]:offs[i + 1]] = dist.witness[f"X_{i + 1}"]

    lumped_ok = dist_ok = gap_ok = 0
    worst = {"lumped": -np.inf, "distributed": -np.inf, "gap_margin": np.inf}
    for k in range(trials):
        u = random_l2_input(rng, S.n_w1, T, dt)
        tr = simulate_network(S, U_l, u, dt, T)
        if k == 0 and trajectory_csv:
            tr.to_csv(trajectory_csv)
        r = check_dissipation(cl_l, lumped.witness["X"], lumped.gamma_star, tr)
        lumped_ok += r.passed
        worst["lumped"] = max(worst["lumped"], r.residual - r.tol)

        tr = simulate_network(S, U_d, u, dt, T)
        ok = True
        for i in range(N):
            v = agent_view(tr, i)
            r = check_dissipation(agents[i], dist.witness[f"X_{i + 1}"], dist.gamma_star, v,
                                  dist_spatial_supply(dist.witness, param, i, v))
            ok &= r.passed
            worst["distributed"] = max(worst["distributed"], r.residual - r.tol)
        dist_ok += ok
        check_dissipation(cl_d, X_bar, gamma_bar, tr)
        xT = tr.x[-1]
        zz = integrate.trapezoid(np.sum(tr.z ** 2, axis=1), dx=tr.dt)
        vh, vb = float(xT @ X_hat @ xT), float(xT @ X_bar @ xT)
        gap_ok += theorem1_gap(vh, vb, U_d, zz)
        worst["gap_margin"] = min(worst["gap_margin"], storage_gap_bound(U_d, zz) - (vh - vb))

    out["dissipation"] = {"trials": trials, "lumped_passed": int(lumped_ok),
                          "distributed_passed": int(dist_ok),
                          "worst_lumped_excess": worst["lumped"],
                          "worst_distributed_excess": worst["distributed"]}
    out["theorem1"] = {"trials": trials, "passed": int(gap_ok), "gamma_bar": gamma_bar,
                       "min_margin": worst["gap_margin"]}

    alphas = np.linspace(param.lower[0], param.upper[0], alpha_samples) \
        if param.n_theta == 1 else [v for v in param.vertices()]
    agent_blocks, comm_blocks = _block_stack(dist.witness, N, n_x)
    aux = max(check_aux19(build_comm_agent(param, np.atleast_1d(a), N, n_x), comm_blocks["Z11"])
              for a in alphas)
    neut = 0.0
    for _ in range(neutrality_trials):
        sig_a, sig_c = random_consistent_signals(rng, N)
        neut = max(neut, check_neutrality(sig_a, sig_c, agent_blocks, comm_blocks, N))
    out["structure"] = {
        "aux19_max": aux, "alpha_samples": len(alphas),
        "neutrality_max": neut, "neutrality_trials": neutrality_trials,
        "agent_Z12_max": max(float(np.abs(b["Z12"]).max()) for b in agent_blocks)}
    return out
