"""Affine matrix expressions, variable registries and matrix-inequality systems.

Expressions are stored in scalarized form: a constant matrix plus one
coefficient matrix per scalar unknown. Structured matrix variables
(symmetric, skew-symmetric, diagonal, full) expand into scalars through a
fixed basis, so every expression is an exact affine function of the
registry's scalar vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STRUCTURES = ("symmetric", "skew", "diagonal", "full", "scalar")

# strict inequalities are realized with margin STRICT_MARGIN * dimension
STRICT_MARGIN = 1e-7


@dataclass(frozen=True)
class Handle:
    name: str
    structure: str
    shape: tuple
    offset: int
    size: int
    counted: bool = True

    @property
    def indices(self):
        return range(self.offset, self.offset + self.size)


def _basis(structure, shape):
    """Basis matrices mapping a variable's scalars to its matrix value."""
    if structure == "scalar":
        return [np.ones((1, 1))]
    n, m = shape
    out = []
    if structure == "full":
        for i in range(n):
            for j in range(m):
                E = np.zeros(shape)
                E[i, j] = 1.0
                out.append(E)
    elif structure == "symmetric":
        for i in range(n):
            for j in range(i, n):
                E = np.zeros(shape)
                E[i, j] = E[j, i] = 1.0
                out.append(E)
    elif structure == "skew":
        for i in range(n):
            for j in range(i + 1, n):
                E = np.zeros(shape)
                E[i, j], E[j, i] = 1.0, -1.0
                out.append(E)
    elif structure == "diagonal":
        for i in range(n):
            E = np.zeros(shape)
            E[i, i] = 1.0
            out.append(E)
    return out


def scalar_count(structure, dim):
    """Number of scalar unknowns carried by one variable."""
    if structure == "scalar":
        return 1
    if isinstance(dim, tuple):
        n, m = dim
    else:
        n = m = int(dim)
    return {
        "symmetric": n * (n + 1) // 2,
        "skew": n * (n - 1) // 2,
        "diagonal": n,
        "full": n * m,
    }[structure]


class VariableRegistry:
    """Ordered collection of structured matrix unknowns."""

    def __init__(self):
        self._handles = {}
        self._bases = {}
        self.n_scalars = 0
        self.live = np.zeros(0, dtype=bool)
        self.frozen = False

    def declare(self, name, structure, dim=1, counted=True):
        if self.frozen:
            raise RuntimeError("registry is frozen")
        if structure not in STRUCTURES:
            raise ValueError(f"unknown structure {structure!r}; expected one of {STRUCTURES}")
        if name in self._handles:
            raise ValueError(f"variable {name!r} already declared")
        if structure == "scalar":
            shape = (1, 1)
        elif isinstance(dim, tuple):
            if structure != "full":
                raise ValueError(f"{structure} variables are square; pass an integer dimension")
            shape = tuple(int(d) for d in dim)
        else:
            shape = (int(dim), int(dim))
        if min(shape) < 1:
            raise ValueError(f"variable dimension must be >= 1, got {dim}")
        size = scalar_count(structure, shape)
        h = Handle(name, structure, shape, self.n_scalars, size, counted)
        self._handles[name] = h
        self._bases[name] = _basis(structure, shape)
        self.n_scalars += size
        self.live = np.concatenate([self.live, np.ones(size, dtype=bool)])
        return h

    def __getitem__(self, name):
        return self._handles[name]

    def __contains__(self, name):
        return name in self._handles

    def handles(self):
        return list(self._handles.values())

    def freeze(self):
        self.frozen = True
        return self

    def owner(self, k):
        for h in self._handles.values():
            if h.offset <= k < h.offset + h.size:
                return h
        raise IndexError(k)

    def expr(self, handle):
        """The variable itself as an affine expression."""
        h = self._resolve(handle)
        coefs = {h.offset + k: B for k, B in enumerate(self._bases[h.name])}
        return AffineMatrixExpression(self, np.zeros(h.shape), coefs)

    def _resolve(self, handle):
        if isinstance(handle, Handle):
            return self._handles[handle.name]
        return self._handles[handle]

    def value(self, handle, x):
        """Matrix value of ``handle`` inside the scalar vector ``x``."""
        h = self._resolve(handle)
        V = np.zeros(h.shape)
        for k, B in enumerate(self._bases[h.name]):
            V = V + x[h.offset + k] * B
        return V

    def vector(self, assignment):
        """Scalar vector from ``{name or handle: matrix value}``."""
        x = np.zeros(self.n_scalars)
        for key, val in assignment.items():
            h = self._resolve(key)
            V = np.atleast_2d(np.asarray(val, dtype=float))
            if V.shape != h.shape:
                raise ValueError(f"{h.name}: expected shape {h.shape}, got {V.shape}")
            for k, B in enumerate(self._bases[h.name]):
                nz = B != 0
                idx = tuple(np.argwhere(nz)[0])
                x[h.offset + k] = V[idx] / B[idx]
        return x

    def assignment(self, x):
        return {h.name: self.value(h, x) for h in self.handles()}


def count_unknowns(reg):
    """Scalar unknowns that survive screening, over counted variables."""
    total = 0
    for h in reg.handles():
        if h.counted:
            total += int(np.count_nonzero(reg.live[h.offset:h.offset + h.size]))
    return total


class AffineMatrixExpression:
    """``constant + sum_k x_k * coefs[k]`` over a registry's scalar unknowns."""

    __array_priority__ = 100

    def __init__(self, registry, constant, coefs=None):
        self.registry = registry
        self.constant = np.atleast_2d(np.asarray(constant, dtype=float))
        self.coefs = {}
        for k, C in (coefs or {}).items():
            C = np.asarray(C, dtype=float).reshape(self.constant.shape)
            if np.any(C):
                self.coefs[k] = C

    @classmethod
    def from_terms(cls, registry, constant, terms):
        """Build ``constant + sum (L V R + (L V R)^T)`` from (handle, L, R) terms.

        For scalar variables ``L V R`` reads ``v * (L @ R)``.
        """
        out = cls(registry, constant)
        for handle, L, R in terms:
            h = registry._resolve(handle)
            L = np.atleast_2d(np.asarray(L, dtype=float))
            R = np.atleast_2d(np.asarray(R, dtype=float))
            V = registry.expr(h)
            piece = V * (L @ R) if h.structure == "scalar" else L @ V @ R
            out = out + piece + piece.T
        return out

    @property
    def shape(self):
        return self.constant.shape

    def handles(self):
        names = []
        for k in sorted(self.coefs):
            name = self.registry.owner(k).name
            if name not in names:
                names.append(name)
        return names

    def copy(self):
        return AffineMatrixExpression(self.registry, self.constant.copy(),
                                      {k: C.copy() for k, C in self.coefs.items()})

    def _lift(self, other):
        if isinstance(other, AffineMatrixExpression):
            return other
        return AffineMatrixExpression(self.registry, np.broadcast_to(
            np.asarray(other, dtype=float), self.shape).copy())

    def __add__(self, other):
        other = self._lift(other)
        if other.shape != self.shape:
            raise ValueError(f"shape mismatch {self.shape} + {other.shape}")
        coefs = {k: C.copy() for k, C in self.coefs.items()}
        for k, C in other.coefs.items():
            coefs[k] = coefs[k] + C if k in coefs else C.copy()
        return AffineMatrixExpression(self.registry, self.constant + other.constant, coefs)

    __radd__ = __add__

    def __neg__(self):
        return AffineMatrixExpression(self.registry, -self.constant,
                                      {k: -C for k, C in self.coefs.items()})

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, a):
        if isinstance(a, AffineMatrixExpression):
            if a.shape != (1, 1) or a.coefs:
                raise TypeError("products of affine expressions are not affine")
            a = float(a.constant[0, 0])
        a = np.asarray(a, dtype=float)
        if a.ndim == 0:
            return AffineMatrixExpression(self.registry, self.constant * a,
                                          {k: C * a for k, C in self.coefs.items()})
        # scalar-valued expression times a constant matrix
        if self.shape != (1, 1):
            raise ValueError("elementwise products are only defined for 1x1 expressions")
        return AffineMatrixExpression(self.registry, self.constant[0, 0] * a,
                                      {k: C[0, 0] * a for k, C in self.coefs.items()})

    __rmul__ = __mul__

    def __matmul__(self, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return AffineMatrixExpression(self.registry, self.constant @ M,
                                      {k: C @ M for k, C in self.coefs.items()})

    def __rmatmul__(self, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return AffineMatrixExpression(self.registry, M @ self.constant,
                                      {k: M @ C for k, C in self.coefs.items()})

    @property
    def T(self):
        return AffineMatrixExpression(self.registry, self.constant.T,
                                      {k: C.T for k, C in self.coefs.items()})

    def sym(self):
        """``E + E^T``."""
        return self + self.T

    def __getitem__(self, key):
        return AffineMatrixExpression(
            self.registry, np.atleast_2d(self.constant[key]),
            {k: np.atleast_2d(C[key]) for k, C in self.coefs.items()})

    def is_symmetric(self, tol=1e-12):
        if self.shape[0] != self.shape[1]:
            return False
        mats = [self.constant, *self.coefs.values()]
        return all(np.max(np.abs(M - M.T), initial=0.0) <= tol for M in mats)

    def evaluate(self, assignment):
        return evaluate(self, assignment)


def _as_vector(reg, assignment):
    if isinstance(assignment, dict):
        x = np.zeros(reg.n_scalars)
        given = set()
        for key, val in assignment.items():
            h = reg._resolve(key)
            given.add(h.name)
            x += reg.vector({h.name: val})
        return x, given
    x = np.asarray(assignment, dtype=float)
    if x.shape != (reg.n_scalars,):
        raise ValueError(f"assignment vector must have length {reg.n_scalars}")
    return x, {h.name for h in reg.handles()}


def evaluate(expr, assignment):
    """Numeric value of ``expr``; ``assignment`` is a dict or scalar vector."""
    reg = expr.registry
    x, given = _as_vector(reg, assignment)
    missing = [n for n in expr.handles() if n not in given]
    if missing:
        raise KeyError(f"assignment is missing variables: {missing}")
    out = expr.constant.copy()
    for k, C in expr.coefs.items():
        out = out + x[k] * C
    return out


def const(reg, M):
    return AffineMatrixExpression(reg, M)


def bmat(reg, rows):
    """Block matrix of expressions/constants; ``None`` marks a zero block."""
    heights, widths = [], []
    for r, row in enumerate(rows):
        for c, item in enumerate(row):
            if item is None:
                continue
            shape = item.shape if isinstance(item, AffineMatrixExpression) \
                else np.atleast_2d(np.asarray(item)).shape
            if len(heights) <= r:
                heights += [None] * (r + 1 - len(heights))
            if len(widths) <= c:
                widths += [None] * (c + 1 - len(widths))
            for lst, idx, val in ((heights, r, shape[0]), (widths, c, shape[1])):
                if lst[idx] is None:
                    lst[idx] = val
                elif lst[idx] != val:
                    raise ValueError(f"block size mismatch at ({r}, {c})")
    if None in heights or None in widths or len(heights) != len(rows):
        raise ValueError("every block row and column needs at least one sized block")
    ro = np.concatenate([[0], np.cumsum(heights)]).astype(int)
    co = np.concatenate([[0], np.cumsum(widths)]).astype(int)
    out = AffineMatrixExpression(reg, np.zeros((ro[-1], co[-1])))
    for r, row in enumerate(rows):
        for c, item in enumerate(row):
            if item is None:
                continue
            item = item if isinstance(item, AffineMatrixExpression) else const(reg, item)
            out.constant[ro[r]:ro[r + 1], co[c]:co[c + 1]] += item.constant
            for k, C in item.coefs.items():
                if k not in out.coefs:
                    out.coefs[k] = np.zeros(out.shape)
                out.coefs[k][ro[r]:ro[r + 1], co[c]:co[c + 1]] += C
    return out


@dataclass
class Constraint:
    """``expr + sum_l (G_l^T H_l + H_l^T G_l)  (sense)  0`` with strictness margin.

    ``sense`` is ``">>"`` (positive semidefinite) or ``"<<"``.
    """

    expr: AffineMatrixExpression
    sense: str
    margin: float = 0.0
    bilinear: list = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        if self.sense not in (">>", "<<"):
            raise ValueError(f"sense must be '>>' or '<<', got {self.sense!r}")
        if self.margin < 0:
            raise ValueError("strictness margin must be nonnegative")
        if not self.expr.is_symmetric():
            raise ValueError(f"constraint {self.name!r} is not symmetric")

    @property
    def dim(self):
        return self.expr.shape[0]

    def value(self, assignment):
        """Full matrix value, bilinear terms included."""
        F = evaluate(self.expr, assignment)
        for G, H in self.bilinear:
            g, hh = evaluate(G, assignment), evaluate(H, assignment)
            F = F + g.T @ hh + hh.T @ g
        return F

    def slack(self, assignment):
        """Smallest eigenvalue of the oriented constraint minus its margin (>= 0 when satisfied)."""
        F = self.value(assignment)
        F = F if self.sense == ">>" else -F
        return float(np.linalg.eigvalsh(0.5 * (F + F.T))[0]) - self.margin


def strict_margin(dim):
    return STRICT_MARGIN * dim


@dataclass
class MISystem:
    """Matrix-inequality system: minimize ``objective`` subject to constraints.

    ``objective`` is a 1x1 expression or ``None`` for pure feasibility.
    """

    registry: VariableRegistry
    constraints: list = field(default_factory=list)
    objective: AffineMatrixExpression = None

    def add(self, expr, sense, strict=True, bilinear=(), name="", margin=None):
        expr = 0.5 * (expr + expr.T)
        if margin is None:
            margin = strict_margin(expr.shape[0]) if strict else 0.0
        for G, H in bilinear:
            if G.shape != H.shape or G.shape[1] != expr.shape[0]:
                raise ValueError(f"bilinear factor shapes {G.shape}, {H.shape} "
                                 f"do not match constraint of size {expr.shape[0]}")
        c = Constraint(expr, sense, margin, list(bilinear), name)
        self.constraints.append(c)
        return c

    @property
    def has_bilinear(self):
        return any(c.bilinear for c in self.constraints)

    def referenced(self):
        """Scalars with a nonzero coefficient anywhere in the system."""
        used = np.zeros(self.registry.n_scalars, dtype=bool)
        exprs = [] if self.objective is None else [self.objective]
        for c in self.constraints:
            exprs.append(c.expr)
            for G, H in c.bilinear:
                exprs += [G, H]
        for e in exprs:
            for k in e.coefs:
                used[k] = True
        return used

    def screen(self):
        """Drop scalar unknowns whose coefficients vanish everywhere; returns the live mask."""
        self.registry.live = self.referenced()
        return self.registry.live

    def check(self, assignment):
        """Per-constraint slacks (bilinear terms included)."""
        return {c.name or f"c{k}": c.slack(assignment)
                for k, c in enumerate(self.constraints)}

    def feasible(self, assignment, tol=0.0):
        return all(s >= -tol for s in self.check(assignment).values())

    def objective_value(self, assignment):
        if self.objective is None:
            return 0.0
        return float(evaluate(self.objective, assignment)[0, 0])


def to_standard_form(system):
    """Compile an affine MISystem into an :class:`~coopsynth.sdpsolve.SdpProblem`.

    Each constraint becomes one block ``F0 + sum_i x_i F_i >= 0``; ``<<``
    constraints are negated and the strictness margin is folded in as a
    ``-margin * I`` shift. Only live scalars (see :meth:`MISystem.screen`)
    become SDP variables.
    """
    from .sdpsolve import SdpProblem

    if system.has_bilinear:
        raise ValueError("system has bilinear terms; linearize it first")
    reg = system.registry
    live = np.flatnonzero(reg.live & system.referenced())
    pos = {k: i for i, k in enumerate(live)}
    blocks = []
    for c in system.constraints:
        sign = 1.0 if c.sense == ">>" else -1.0
        n = c.dim
        F0 = sign * c.expr.constant - c.margin * np.eye(n)
        Fs = np.zeros((len(live), n, n))
        for k, C in c.expr.coefs.items():
            if k in pos:
                Fs[pos[k]] = sign * C
        blocks.append((F0, Fs))
    cvec = np.zeros(len(live))
    if system.objective is not None:
        for k, C in system.objective.coefs.items():
            if k in pos:
                cvec[pos[k]] = C[0, 0]
    return SdpProblem(blocks=blocks, c=cvec, index=live, n_total=reg.n_scalars,
                      names=[c.name for c in system.constraints])


def substitute(expr, values):
    """Replace the variables named in ``values`` by constants."""
    reg = expr.registry
    fixed = {}
    for key, val in values.items():
        h = reg._resolve(key)
        x = reg.vector({h.name: val})
        for k in h.indices:
            fixed[k] = x[k]
    out = AffineMatrixExpression(reg, expr.constant.copy())
    for k, C in expr.coefs.items():
        if k in fixed:
            out.constant = out.constant + fixed[k] * C
        else:
            out.coefs[k] = C.copy()
    return out


def fix_variables(system, values):
    """Copy of ``system`` with some variables fixed.

    A bilinear pair whose factor becomes constant turns into an affine term
    and is folded into the constraint expression.
    """
    out = MISystem(system.registry)
    for c in system.constraints:
        expr = substitute(c.expr, values)
        pairs = []
        for G, H in c.bilinear:
            G, H = substitute(G, values), substitute(H, values)
            if G.coefs and H.coefs:
                pairs.append((G, H))
            elif H.coefs:
                expr = expr + (H.T @ G.constant).sym()
            else:
                expr = expr + (G.T @ H.constant).sym()
        out.constraints.append(Constraint(expr, c.sense, c.margin, pairs, c.name))
    if system.objective is not None:
        out.objective = substitute(system.objective, values)
    return out

