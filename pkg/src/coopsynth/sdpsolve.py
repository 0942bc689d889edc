"""Dense primal-dual interior-point solver for small semidefinite programs.

Problem form::

    minimize    c^T x
    subject to  F0_b + sum_i x_i F_ib  >= 0     for every block b

Internally this is ``G x + s = h, s >= 0`` with ``h = F0`` and the columns
of ``G`` equal to ``-F_i``. The solver runs a Mehrotra predictor-corrector
on the homogeneous self-dual embedding with Nesterov-Todd scaling, so
infeasible problems terminate with a certificate instead of stalling.
"""
from __future__ import annotations

import itertools
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
DUAL_INFEASIBLE = "dual_infeasible"
MAX_ITERATIONS = "max_iterations"
NUMERICAL_FAILURE = "numerical_failure"

_DUMP_COUNTER = itertools.count()


@dataclass
class SolverSettings:
    tol: float = 1e-8
    max_iter: int = 200
    step: float = 0.98
    # a ray with ||G^T z|| <= cert_tol * (-h^T z) rules out every x with
    # ||x|| < 1/cert_tol
    cert_tol: float = 1e-6
    # when set, every problem handed to solve() is written there as SDPA
    dump_dir: str = None


@dataclass
class SdpProblem:
    """Blocks ``(F0, Fs)`` with ``Fs`` of shape (m, n, n); objective ``c``.

    ``index`` maps the m solver variables back into a registry's scalar
    vector of length ``n_total`` (identity when built by hand).
    """

    blocks: list
    c: np.ndarray
    index: np.ndarray = None
    n_total: int = None
    names: list = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        m = self.c.size
        blocks = []
        for F0, Fs in self.blocks:
            F0 = np.atleast_2d(np.asarray(F0, dtype=float))
            Fs = np.asarray(Fs, dtype=float).reshape(m, *F0.shape)
            if F0.shape[0] != F0.shape[1]:
                raise ValueError("constraint blocks must be square")
            if not (np.all(np.isfinite(F0)) and np.all(np.isfinite(Fs))):
                raise ValueError("non-finite data in SDP block")
            blocks.append((0.5 * (F0 + F0.T), 0.5 * (Fs + Fs.transpose(0, 2, 1))))
        self.blocks = blocks
        if self.index is None:
            self.index = np.arange(m)
        if self.n_total is None:
            self.n_total = m
        if self.names is None:
            self.names = [""] * len(blocks)

    @property
    def m(self):
        return self.c.size

    @property
    def block_sizes(self):
        return [F0.shape[0] for F0, _ in self.blocks]

    def evaluate(self, x):
        """Block values ``F0 + sum x_i F_i`` at a reduced variable vector."""
        x = np.asarray(x, dtype=float)
        return [F0 + np.tensordot(x, Fs, axes=1) for F0, Fs in self.blocks]

    def expand(self, x):
        """Reduced solver vector -> full registry vector (screened entries are 0)."""
        full = np.zeros(self.n_total)
        full[self.index] = x
        return full

    def restrict(self, full):
        return np.asarray(full, dtype=float)[self.index]

    def dump(self, path):
        """Write the problem in SDPA sparse format (``.dat-s``).

        SDPA reads ``min c^T x s.t. sum x_i F_i - F_0 >= 0``, so the constant
        block is emitted negated.
        """
        lines = [f"* coopsynth SDP dump: {len(self.blocks)} blocks",
                 f"{self.m}", f"{len(self.blocks)}",
                 " ".join(str(n) for n in self.block_sizes),
                 " ".join(repr(float(v)) for v in self.c)]
        for b, (F0, Fs) in enumerate(self.blocks):
            mats = [(0, -F0)] + [(i + 1, Fs[i]) for i in range(self.m)]
            for k, M in mats:
                for i, j in zip(*np.nonzero(np.triu(M))):
                    lines.append(f"{k} {b + 1} {i + 1} {j + 1} {M[i, j]!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


@dataclass
class SdpSolution:
    x: np.ndarray
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float
    min_eigs: list = field(default_factory=list)
    objective: float = float("nan")
    x_full: np.ndarray = None

    @property
    def ok(self):
        return self.status == OPTIMAL


def _inner(A, B):
    return sum(float(np.vdot(a, b)) for a, b in zip(A, B))


def _norm(A):
    return np.sqrt(max(_inner(A, A), 0.0))


def _jordan(A, B):
    return 0.5 * (A @ B + B @ A)


class _Scaling:
    """Nesterov-Todd scaling ``R`` with ``R^-1 S R^-T = R^T Z R = diag(lam)``."""

    def __init__(self, S, Z):
        Ls = np.linalg.cholesky(S)
        Lz = np.linalg.cholesky(Z)
        U, lam, Vt = np.linalg.svd(Lz.T @ Ls)
        self.lam = lam
        self.R = Ls @ Vt.T / np.sqrt(lam)
        self.Rinv = np.linalg.solve(self.R, np.eye(len(lam)))
        self.rti = self.Rinv.T

    def scale_s(self, dS):
        return self.Rinv @ dS @ self.Rinv.T

    def scale_z(self, dZ):
        return self.R.T @ dZ @ self.R


def _max_step(lam, d):
    """Largest a with diag(lam) + a*d >= 0 (inf if unbounded)."""
    isq = 1.0 / np.sqrt(lam)
    M = d * np.outer(isq, isq)
    ev = np.linalg.eigvalsh(0.5 * (M + M.T))[0]
    return np.inf if ev >= 0 else -1.0 / ev


def solve(p, settings=None):
    """Solve an :class:`SdpProblem`; never raises on numerical trouble."""
    st = settings or SolverSettings()
    if st.dump_dir:
        os.makedirs(st.dump_dir, exist_ok=True)
        p.dump(os.path.join(st.dump_dir, f"sdp_{next(_DUMP_COUNTER):05d}.dat-s"))
    m = p.m
    if m < 1:
        raise ValueError("SDP needs at least one variable")
    H = [F0 for F0, _ in p.blocks]
    Gc = [-Fs for _, Fs in p.blocks]          # (m, n, n) per block
    c = p.c
    dims = [h.shape[0] for h in H]
    nu = sum(dims)

    def G(x):
        return [np.tensordot(x, g, axes=1) for g in Gc]

    def GT(Z):
        return sum(np.einsum("kij,ij->k", g, z) for g, z in zip(Gc, Z))

    # Gram matrix of G for the starting point
    GtG = sum(np.einsum("kij,lij->kl", g, g) for g in Gc)
    reg = 1e-12 * max(1.0, np.trace(GtG) / m)
    try:
        GtG_f = cho_factor(GtG + reg * np.eye(m))
    except LinAlgError:
        return _fail(p, np.zeros(m), NUMERICAL_FAILURE, 0)
    x = cho_solve(GtG_f, GT(H))
    S = [h - g for h, g in zip(H, G(x))]
    Z = G(-cho_solve(GtG_f, c))

    def shift(B):
        lo = min(np.linalg.eigvalsh(b)[0] for b in B)
        a = -lo
        if a >= -1e-8 * max(1.0, _norm(B)):
            B = [b + (1.0 + a) * np.eye(len(b)) for b in B]
        return B

    S, Z = shift(S), shift(Z)
    tau, kappa = 1.0, 1.0
    hnorm = max(1.0, _norm(H))
    cnorm = max(1.0, float(np.linalg.norm(c)))
    status, it = MAX_ITERATIONS, 0
    pres = dres = gap = np.inf

    for it in range(st.max_iter + 1):
        Gx = G(x)
        rx = GT(Z) + c * tau
        rz = [s + gx - h * tau for s, gx, h in zip(S, Gx, H)]
        cx, hz = float(c @ x), _inner(H, Z)
        rt = kappa + cx + hz
        sz = _inner(S, Z)
        mu = (sz + tau * kappa) / (nu + 1)

        if not np.isfinite(tau) or tau <= 0:
            status = NUMERICAL_FAILURE
            break
        pres = _norm(rz) / tau / hnorm
        dres = float(np.linalg.norm(rx)) / tau / cnorm
        gap = sz / tau**2
        pcost, dcost = cx / tau, -hz / tau
        rel = abs(pcost - dcost) / max(1.0, abs(pcost), abs(dcost))
        if pres <= st.tol and dres <= st.tol and (gap <= st.tol or rel <= st.tol):
            status = OPTIMAL
            break
        # certificates: G^T z = 0, z >= 0, h^T z < 0 (primal infeasible) or
        # G x + s = 0, s >= 0, c^T x < 0 (dual infeasible), tested relatively
        pinf = float(np.linalg.norm(GT(Z))) / -hz if hz < 0 else np.inf
        dinf = _norm([gx + s for gx, s in zip(Gx, S)]) / -cx if cx < 0 else np.inf
        if pinf <= st.cert_tol:
            status = INFEASIBLE
            break
        if dinf <= st.cert_tol:
            status = DUAL_INFEASIBLE
            break
        if tau < 1e-10 * max(1.0, kappa) or not np.isfinite(pres + dres):
            # the embedding collapsed without a clean certificate
            status = INFEASIBLE if pinf <= dinf and hz < 0 else \
                DUAL_INFEASIBLE if cx < 0 else NUMERICAL_FAILURE
            break
        if it == st.max_iter:
            break

        try:
            W = [_Scaling(s, z) for s, z in zip(S, Z)]
            Gt = [np.einsum("ab,kbc,cd->kad", w.rti.T, g, w.rti) for w, g in zip(W, Gc)]
            M = sum(np.einsum("kij,lij->kl", g, g) for g in Gt)
            Mf = cho_factor(M + 1e-14 * max(1.0, np.trace(M) / m) * np.eye(m))
        except (LinAlgError, np.linalg.LinAlgError, ValueError):
            status = NUMERICAL_FAILURE
            break
        Ht = [w.scale_s(h) for w, h in zip(W, H)]
        GtH = sum(np.einsum("kij,ij->k", g, h) for g, h in zip(Gt, Ht))
        x2 = cho_solve(Mf, GtH - c)

        def newton(eta, bs, bk):
            bx = -eta * rx
            bz = [-eta * r for r in rz]
            bt = -eta * rt
            q = [2.0 * b / (w.lam[:, None] + w.lam[None, :]) for w, b in zip(W, bs)]
            bzt = [w.scale_s(b) - qq for w, b, qq in zip(W, bz, q)]  # R^-1 (bz - R q R^T) R^-T
            GtB = sum(np.einsum("kij,ij->k", g, b) for g, b in zip(Gt, bzt))
            x1 = cho_solve(Mf, bx + GtB)
            Gx1 = [np.tensordot(x1, g, axes=1) for g in Gt]
            Gx2 = [np.tensordot(x2, g, axes=1) for g in Gt]
            num = bt - c @ x1 - _inner(Ht, Gx1) + _inner(Ht, bzt) - bk / tau
            den = c @ x2 + _inner(Ht, Gx2) - _inner(Ht, Ht) - kappa / tau
            dtau = num / den
            dx = x1 + x2 * dtau
            dzt = [g1 + g2 * dtau - h * dtau - b
                   for g1, g2, h, b in zip(Gx1, Gx2, Ht, bzt)]  # R^T dZ R
            dst = [qq - d for qq, d in zip(q, dzt)]              # R^-1 dS R^-T
            dk = (bk - kappa * dtau) / tau
            return dx, dst, dzt, dtau, dk

        def step_len(dst, dzt, dtau, dk):
            a = np.inf
            for w, ds, dz in zip(W, dst, dzt):
                a = min(a, _max_step(w.lam, ds), _max_step(w.lam, dz))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dk < 0:
                a = min(a, -kappa / dk)
            return a

        L2 = [np.diag(w.lam**2) for w in W]
        dxa, dsa, dza, dta, dka = newton(1.0, [-l for l in L2], -tau * kappa)
        aa = min(1.0, step_len(dsa, dza, dta, dka))
        sigma = (1.0 - aa) ** 3
        bs = [-l + sigma * mu * np.eye(len(l)) - _jordan(a, b)
              for l, a, b in zip(L2, dsa, dza)]
        bk = -tau * kappa + sigma * mu - dta * dka
        dx, dst, dzt, dtau, dk = newton(1.0 - sigma, bs, bk)
        a = min(1.0, st.step * step_len(dst, dzt, dtau, dk))
        if not np.isfinite(a) or not np.all(np.isfinite(dx)):
            status = NUMERICAL_FAILURE
            break

        x = x + a * dx
        S = [s + a * (w.R @ d @ w.R.T) for s, w, d in zip(S, W, dst)]
        Z = [z + a * (w.rti @ d @ w.rti.T) for z, w, d in zip(Z, W, dzt)]
        S = [0.5 * (s + s.T) for s in S]
        Z = [0.5 * (z + z.T) for z in Z]
        tau, kappa = tau + a * dtau, kappa + a * dk
        if tau <= 0 or kappa <= 0 or not np.isfinite(tau):
            status = NUMERICAL_FAILURE
            break

    if status == INFEASIBLE or status == DUAL_INFEASIBLE:
        xs = x / max(tau, 1e-300)
    else:
        xs = x / tau
    sol = _finish(p, xs, status, it, pres, dres, gap)
    log.debug("sdp solve: status=%s iters=%d pres=%.2e dres=%.2e gap=%.2e",
              status, it, pres, dres, gap)
    return sol


def _finish(p, x, status, it, pres, dres, gap):
    vals = p.evaluate(x) if np.all(np.isfinite(x)) else None
    eigs = [] if vals is None else [float(np.linalg.eigvalsh(v)[0]) for v in vals]
    obj = float(p.c @ x) if np.all(np.isfinite(x)) else float("nan")
    return SdpSolution(x=x, status=status, iterations=it, primal_residual=float(pres),
                       dual_residual=float(dres), gap=float(gap), min_eigs=eigs,
                       objective=obj, x_full=p.expand(x))


def _fail(p, x, status, it):
    return _finish(p, x, status, it, np.inf, np.inf, np.inf)


def is_feasible(sol, tol=1e-8):
    """Optimal status and every block PSD at the returned point (dense re-check)."""
    return sol.ok and all(e >= -10 * tol for e in sol.min_eigs)


def bisect_feasibility(builder, interval, tol=1e-6, settings=None):
    """Smallest feasible parameter of a monotone feasibility family.

    ``builder(g)`` returns an :class:`SdpProblem` that is feasible for all
    ``g`` above a threshold. Returns ``(g_star, witness)`` where the witness
    is the solution at ``g_star``.
    """
    lo, hi = map(float, interval)
    if not lo < hi:
        raise ValueError("interval must satisfy lo < hi")

    def feas(g):
        sol = solve(builder(g), settings)
        return is_feasible(sol, (settings or SolverSettings()).tol), sol

    ok, witness = feas(hi)
    if not ok:
        raise ValueError(f"interval does not bracket: infeasible at hi={hi:g}")
    ok_lo, sol_lo = feas(lo)
    if ok_lo:
        return lo, sol_lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        ok, sol = feas(mid)
        if ok:
            hi, witness = mid, sol
        else:
            lo = mid
    return hi, witness
