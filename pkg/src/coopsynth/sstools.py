"""Continuous-time LTI state-space algebra for cooperative systems.

An agent carries two channel pairs: the performance channel ``w1 -> z1`` and
the spatial channel ``w -> z`` over which agents exchange outputs::

    dx/dt = A x  + B1 w1 + B  w
    z1    = C1 x + D1 w1 + E1 w
    z     = C  x + F1 w1            (no w -> z feedthrough)

Stacking agents block-diagonally and closing the spatial channel with an
adjacency matrix gives the cooperative closed loop.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

HURWITZ_TOL = 1e-9
HINF_TOL = 1e-6

_BLOCKS = ("A", "B1", "B", "C1", "C", "D1", "E1", "F1")


def _as_matrix(value, name):
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _check_partition(blocks, owner):
    A, B1, B, C1, C, D1, E1, F1 = (blocks[k] for k in _BLOCKS)
    nx = A.shape[0]
    if A.shape != (nx, nx):
        raise ValueError(f"{owner}: A must be square, got {A.shape}")
    nw1, nw = B1.shape[1], B.shape[1]
    nz1, nz = C1.shape[0], C.shape[0]
    expected = {
        "B1": (nx, nw1), "B": (nx, nw), "C1": (nz1, nx), "C": (nz, nx),
        "D1": (nz1, nw1), "E1": (nz1, nw), "F1": (nz, nw1),
    }
    for key, shape in expected.items():
        if blocks[key].shape != shape:
            raise ValueError(
                f"{owner}: {key} has shape {blocks[key].shape}, expected {shape}")


def is_hurwitz(A, tol=HURWITZ_TOL):
    """True iff every eigenvalue of ``A`` has real part below ``-tol``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("is_hurwitz expects a square matrix")
    if A.size == 0:
        return True
    return bool(np.max(np.linalg.eigvals(A).real) < -tol)


@dataclass(frozen=True)
class AgentModel:
    """Partitioned realization of a single agent.

    Missing feedthrough blocks default to zeros of the right shape. The agent
    matrix ``A`` must be Hurwitz; this is checked at construction.
    """

    A: np.ndarray
    B1: np.ndarray
    B: np.ndarray
    C1: np.ndarray
    C: np.ndarray
    D1: np.ndarray = None
    E1: np.ndarray = None
    F1: np.ndarray = None
    check_stability: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B1 = _as_matrix(self.B1, "B1")
        B = _as_matrix(self.B, "B")
        C1 = _as_matrix(self.C1, "C1")
        C = _as_matrix(self.C, "C")
        defaults = {
            "D1": (C1.shape[0], B1.shape[1]),
            "E1": (C1.shape[0], B.shape[1]),
            "F1": (C.shape[0], B1.shape[1]),
        }
        blocks = {"A": A, "B1": B1, "B": B, "C1": C1, "C": C}
        for key, shape in defaults.items():
            value = getattr(self, key)
            blocks[key] = np.zeros(shape) if value is None else _as_matrix(value, key)
        _check_partition(blocks, "AgentModel")
        for key, value in blocks.items():
            value.setflags(write=False)
            object.__setattr__(self, key, value)
        if self.check_stability and not is_hurwitz(A):
            raise ValueError("agent A matrix is not Hurwitz")

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_w1(self):
        return self.B1.shape[1]

    @property
    def n_w(self):
        return self.B.shape[1]

    @property
    def n_z1(self):
        return self.C1.shape[0]

    @property
    def n_z(self):
        return self.C.shape[0]

    def blocks(self):
        return {k: getattr(self, k) for k in _BLOCKS}

    def performance_channel(self):
        """The agent on its own, spatial ports left open (w = 0)."""
        return ClosedLoopSystem(self.A, self.B1, self.C1, self.D1)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in _BLOCKS}


@dataclass(frozen=True)
class StackedSystem:
    """Block-diagonal group of agents with the same block roles as one agent."""

    A: np.ndarray
    B1: np.ndarray
    B: np.ndarray
    C1: np.ndarray
    C: np.ndarray
    D1: np.ndarray
    E1: np.ndarray
    F1: np.ndarray
    agents: tuple

    @property
    def n_agents(self):
        return len(self.agents)

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_w(self):
        return self.B.shape[1]

    @property
    def n_z(self):
        return self.C.shape[0]

    @property
    def n_w1(self):
        return self.B1.shape[1]

    @property
    def n_z1(self):
        return self.C1.shape[0]

    def offsets(self, attr):
        """Start index of each agent's slot along dimension ``attr`` (e.g. 'n_x')."""
        sizes = [getattr(a, attr) for a in self.agents]
        return np.concatenate([[0], np.cumsum(sizes)]).astype(int)

    def extract(self, i):
        """Recover agent ``i`` (0-based) from the stacked blocks."""
        rows = {"x": self.offsets("n_x"), "w1": self.offsets("n_w1"),
                "w": self.offsets("n_w"), "z1": self.offsets("n_z1"),
                "z": self.offsets("n_z")}

        def sl(key):
            return slice(rows[key][i], rows[key][i + 1])

        return AgentModel(
            A=self.A[sl("x"), sl("x")], B1=self.B1[sl("x"), sl("w1")],
            B=self.B[sl("x"), sl("w")], C1=self.C1[sl("z1"), sl("x")],
            C=self.C[sl("z"), sl("x")], D1=self.D1[sl("z1"), sl("w1")],
            E1=self.E1[sl("z1"), sl("w")], F1=self.F1[sl("z"), sl("w1")],
            check_stability=False)


@dataclass(frozen=True)
class ClosedLoopSystem:
    """Performance-channel realization (A, B, C, D) of the closed loop."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        C = _as_matrix(self.C, "C")
        D = _as_matrix(self.D, "D")
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n \
                or D.shape != (C.shape[0], B.shape[1]):
            raise ValueError("inconsistent closed-loop dimensions: "
                             f"A{A.shape} B{B.shape} C{C.shape} D{D.shape}")
        for key, value in (("A", A), ("B", B), ("C", C), ("D", D)):
            object.__setattr__(self, key, value)

    @property
    def n_x(self):
        return self.A.shape[0]


def block_diag_compose(agents):
    """Stack agents block-diagonally in every partition."""
    agents = tuple(agents)
    if not agents:
        raise ValueError("no agents")
    blocks = {k: block_diag(*[getattr(a, k) for a in agents]) for k in _BLOCKS}
    # block_diag of zero-width blocks drops shape information
    for k in _BLOCKS:
        rows = sum(getattr(a, k).shape[0] for a in agents)
        cols = sum(getattr(a, k).shape[1] for a in agents)
        if blocks[k].shape != (rows, cols):
            blocks[k] = np.zeros((rows, cols))
    return StackedSystem(agents=agents, **blocks)


def close_lft(S, Upsilon):
    """Lower LFT of ``S`` with the interconnection ``w = Upsilon z``.

    Well-posed without any inverse because the spatial feedthrough is zero.
    """
    U = _as_matrix(Upsilon, "Upsilon")
    if U.shape != (S.n_w, S.n_z):
        raise ValueError(
            f"Upsilon has shape {U.shape}, expected {(S.n_w, S.n_z)}")
    return ClosedLoopSystem(
        A=S.A + S.B @ U @ S.C,
        B=S.B1 + S.B @ U @ S.F1,
        C=S.C1 + S.E1 @ U @ S.C,
        D=S.D1 + S.E1 @ U @ S.F1,
    )


def freq_response(sys, omega):
    """``C (j omega I - A)^-1 B + D`` as a complex matrix."""
    n = sys.n_x
    if n == 0:
        return sys.D.astype(complex)
    M = 1j * omega * np.eye(n) - sys.A
    if np.linalg.cond(M) > 1e14:
        raise np.linalg.LinAlgError(
            f"resolvent is singular at omega={omega}: j*omega is an eigenvalue of A")
    return sys.C @ np.linalg.solve(M, sys.B.astype(complex)) + sys.D


def sigma_max(sys, omega):
    return float(np.linalg.svd(freq_response(sys, omega), compute_uv=False)[0])


def grid_gain(sys, omegas=None):
    """Largest singular value over a frequency grid (a lower bound on the H-inf norm)."""
    if omegas is None:
        omegas = np.concatenate([[0.0], np.logspace(-3, 3, 500)])
    return max(sigma_max(sys, w) for w in omegas)


def _hamiltonian(sys, gamma):
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    R = gamma**2 * np.eye(D.shape[1]) - D.T @ D
    Ri = np.linalg.inv(R)
    Ah = A + B @ Ri @ D.T @ C
    top = np.hstack([Ah, B @ Ri @ B.T])
    bot = np.hstack([-C.T @ (np.eye(D.shape[0]) + D @ Ri @ D.T) @ C, -Ah.T])
    return np.vstack([top, bot])


def _crossing_gain(sys, gamma):
    """Largest gain attained at near-imaginary Hamiltonian eigenvalues, or None.

    A return value >= gamma proves gamma <= ||H||inf; None means gamma is an
    upper bound.
    """
    ev = np.linalg.eigvals(_hamiltonian(sys, gamma))
    scale = max(1.0, np.max(np.abs(ev)))
    cand = ev[np.abs(ev.real) <= 1e-7 * scale]
    best = None
    for lam in cand:
        try:
            g = sigma_max(sys, abs(lam.imag))
        except np.linalg.LinAlgError:
            continue
        if g >= gamma * (1 - 1e-12):
            best = g if best is None else max(best, g)
    return best


def hinf_norm(sys, tol=HINF_TOL):
    """H-infinity norm via bisection on the Hamiltonian imaginary-axis test.

    Returns a certified upper bound ``hi`` with ``hi - ||H|| <= tol*max(1, ||H||)``.
    The bisection starts from a logarithmic frequency-grid lower bound.
    """
    if not is_hurwitz(sys.A):
        raise ValueError("unbounded L2 gain: closed-loop A is not Hurwitz")
    dnorm = float(np.linalg.norm(sys.D, 2)) if sys.D.size else 0.0
    if sys.n_x == 0 or not np.any(sys.B) or not np.any(sys.C):
        return dnorm
    lo = max(dnorm, grid_gain(sys))
    if lo == 0.0:
        lo = 1e-12
    hi = max(2.0 * lo, lo + tol)
    while True:
        g = _crossing_gain(sys, hi)
        if g is None:
            break
        lo = max(lo, g)
        hi = 2.0 * max(hi, g)
    while hi - lo > tol * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        g = _crossing_gain(sys, mid)
        if g is None:
            hi = mid
        else:
            lo = max(lo, g)
    return hi
