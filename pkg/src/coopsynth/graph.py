"""Parameterized adjacency matrices and the benchmark topology family."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

ENTRY_BOUNDS = (0.0, 1.0)


@dataclass(frozen=True)
class AdjacencyParameterization:
    """Affine family ``Upsilon(theta) = Upsilon0 + sum_k theta_k * bases[k]``.

    ``lower``/``upper`` box the parameters. Entries are affine in theta, so
    checking the box vertices is enough to keep every edge weight in [0, 1].
    """

    upsilon0: np.ndarray
    bases: tuple
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        U0 = np.atleast_2d(np.asarray(self.upsilon0, dtype=float))
        n = U0.shape[0]
        if U0.shape != (n, n):
            raise ValueError(f"Upsilon0 must be square, got {U0.shape}")
        bases = tuple(np.asarray(b, dtype=float).reshape(n, n) for b in self.bases)
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != (len(bases),) or hi.shape != (len(bases),):
            raise ValueError("one bound interval per basis matrix is required")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        for name, M in [("Upsilon0", U0)] + [(f"basis {k}", b) for k, b in enumerate(bases)]:
            if np.any(np.diag(M) != 0):
                raise ValueError(f"{name} has a nonzero diagonal (self-loops are not allowed)")
        for arr in (U0, lo, hi, *bases):
            arr.setflags(write=False)
        object.__setattr__(self, "upsilon0", U0)
        object.__setattr__(self, "bases", bases)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        for v in self.vertices():
            U = self._affine(v)
            bad = np.argwhere((U < ENTRY_BOUNDS[0] - 1e-12) | (U > ENTRY_BOUNDS[1] + 1e-12))
            if bad.size:
                raise ValueError(
                    f"edge weights leave [0, 1] at box vertex theta={v.tolist()}: "
                    f"entries {[tuple(int(x) + 1 for x in e) for e in bad]}")

    @property
    def N(self):
        return self.upsilon0.shape[0]

    @property
    def n_theta(self):
        return len(self.bases)

    def vertices(self):
        for corner in itertools.product(*zip(self.lower, self.upper)):
            yield np.array(corner, dtype=float)

    def _affine(self, theta):
        U = self.upsilon0.copy()
        for t, b in zip(theta, self.bases):
            U = U + t * b
        return U

    def check_theta(self, theta, tol=1e-12):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.n_theta,):
            raise ValueError(f"theta must have {self.n_theta} entries, got {theta.shape}")
        bad = [k for k in range(self.n_theta)
               if theta[k] < self.lower[k] - tol or theta[k] > self.upper[k] + tol]
        if bad:
            detail = ", ".join(
                f"theta[{k}]={theta[k]:g} not in [{self.lower[k]:g}, {self.upper[k]:g}]"
                for k in bad)
            raise ValueError(f"theta out of bounds: {detail}")
        return theta

    def clip(self, theta):
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)

    def structural_edges(self):
        """(i, j) pairs whose weight is not identically zero over the family."""
        mask = self.upsilon0 != 0
        for b in self.bases:
            mask = mask | (b != 0)
        return [tuple(e) for e in np.argwhere(mask)]

    def to_dict(self):
        return {
            "upsilon0": self.upsilon0.tolist(),
            "bases": [b.tolist() for b in self.bases],
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
        }


def eval_adjacency(param, theta):
    """Evaluate ``Upsilon(theta)``; raises if theta leaves its box."""
    return param._affine(param.check_theta(theta))


def spectral_norm(M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


# Four-agent example: Upsilon(alpha) = EXAMPLE_U0 + alpha * EXAMPLE_DU
EXAMPLE_U0 = np.array([
    [0, 0, 0, 1],
    [0, 0, 0, 1],
    [0, 0, 0, 1],
    [0, 0, 1, 0],
], dtype=float)
EXAMPLE_DU = np.array([
    [0, 2, 3, -5],
    [1, 0, 3, -4],
    [1, 2, 0, -3],
    [1, 2, -3, 0],
], dtype=float)
EXAMPLE_ALPHA_BOUNDS = (0.0, 0.2)


def benchmark_topology(N, bounds=EXAMPLE_ALPHA_BOUNDS):
    """Adjacency family used for the scaling study.

    N=4 is the four-agent example, N=3 drops its first agent, and every agent
    i >= 5 listens to agent 1 with weight alpha and to agent i-1 with weight
    1 - alpha.
    """
    N = int(N)
    if N < 3:
        raise ValueError(f"benchmark topology needs N >= 3, got {N}")
    if N == 3:
        U0, dU = EXAMPLE_U0[1:, 1:], EXAMPLE_DU[1:, 1:]
    else:
        U0 = np.zeros((N, N))
        dU = np.zeros((N, N))
        U0[:4, :4] = EXAMPLE_U0
        dU[:4, :4] = EXAMPLE_DU
        for i in range(4, N):
            dU[i, 0] = 1.0
            U0[i, i - 1] = 1.0
            dU[i, i - 1] = -1.0
    return AdjacencyParameterization(U0, (dU,), [bounds[0]], [bounds[1]])
