"""Matrix differential expressions, their formal adjoints, and grid application.

A :class:`DifferentialExpression` is ``L = sum_alpha a_alpha(t; x) d^alpha``
with ``N x N`` complex coefficient fields indexed by multi-indices over the
``m`` spatial coordinates. Coefficients are :class:`CoefficientField`
objects which know how to sample themselves on a grid, differentiate
(exactly for symbolic coefficients, by finite differences otherwise) and
conjugate-transpose.

Coordinate naming: the spatial coordinates are ``x`` when ``m == 1`` and
``x1 .. xm`` otherwise; evolution parameters are ``t`` and ``y``. A grid
may use other axis names, in which case an ``axis_map`` from coordinate
name to grid axis name is passed along.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from itertools import product
from pathlib import Path

import numpy as np
import sympy as sp

from . import expr as _expr
from .numgrid import (
    EVOLUTION,
    Grid,
    GridFunction,
    ShapeError,
    fd_partial,
    pairing,
)

__all__ = [
    "MissingDerivativeError",
    "BoundarySupportWarning",
    "CoefficientField",
    "SymbolicCoefficient",
    "SampledCoefficient",
    "CallableCoefficient",
    "DifferentialExpression",
    "EvolutionOperator",
    "spatial_names",
    "apply_op",
    "formal_adjoint",
    "adjoint_defect",
    "evolution_apply",
    "load_operator",
    "operator_from_dict",
]


class MissingDerivativeError(LookupError):
    """A coefficient derivative was needed but no oracle is available."""


class BoundarySupportWarning(UserWarning):
    """Test data does not vanish near the spatial boundary."""


def spatial_names(m: int) -> tuple[str, ...]:
    return ("x",) if m == 1 else tuple(f"x{i}" for i in range(1, m + 1))


def _resolve(axis_map, name):
    return (axis_map or {}).get(name, name)


# ---------------------------------------------------------------------------
# coefficient fields

class CoefficientField:
    """``N x N`` matrix-valued field over ``(t, y; x)``.

    Subclasses implement :meth:`sample`, :meth:`partial` and :meth:`H`.
    ``numeric`` is true when derivatives were (or will be) obtained from
    finite differences rather than an analytic oracle.
    """

    channels: int
    m: int
    numeric: bool = False

    def sample(self, grid: Grid, axis_map=None, fixed=None) -> np.ndarray:
        """Values on ``grid``, shape ``grid.shape + (N, N)``.

        ``fixed`` supplies constant values for coordinates the grid lacks
        (for example ``{"t": 0.0}`` on a purely spatial grid).
        """
        raise NotImplementedError

    def partial(self, alpha) -> "CoefficientField":
        raise NotImplementedError

    def H(self) -> "CoefficientField":
        """Pointwise conjugate transpose."""
        raise NotImplementedError

    def scaled(self, c) -> "CoefficientField":
        return LinearCombination([(complex(c), self)])

    def __add__(self, other):
        return LinearCombination([(1.0, self), (1.0, other)])

    def is_zero(self) -> bool:
        return False


def _coord_arrays(grid: Grid, names, axis_map, fixed):
    coords = {}
    for n in names:
        gname = _resolve(axis_map, n)
        if grid.has_axis(gname):
            coords[n] = grid.coords(gname)
        elif fixed and n in fixed:
            coords[n] = np.asarray(fixed[n], dtype=float)
    return coords


class SymbolicCoefficient(CoefficientField):
    """Coefficient given by a sympy matrix; derivatives are exact."""

    def __init__(self, matrix, m: int = 1):
        if not isinstance(matrix, sp.MatrixBase):
            # parse strings with the real coordinate symbols, never bare sympify
            rows = np.atleast_2d(np.asarray(matrix, dtype=object)).tolist()
            matrix = sp.Matrix([[_expr.parse(e, m) if isinstance(e, str) else sp.sympify(e) for e in row]
                                for row in rows])
        mat = matrix
        if mat.shape[0] != mat.shape[1]:
            raise ShapeError(f"coefficient must be square, got {mat.shape}")
        self.matrix = sp.ImmutableMatrix(mat)
        self.channels = mat.shape[0]
        self.m = m

    @classmethod
    def scalar(cls, value, channels: int = 1, m: int = 1) -> "SymbolicCoefficient":
        e = _expr.parse(value, m) if isinstance(value, str) else sp.sympify(value)
        return cls(e * sp.eye(channels), m)

    @cached_property
    def _evaluators(self):
        return [[_expr.lambdify(self.matrix[i, j], self.m) for j in range(self.channels)]
                for i in range(self.channels)]

    def sample(self, grid, axis_map=None, fixed=None):
        names = list(_expr.coordinate_symbols(self.m))
        coords = _coord_arrays(grid, names, axis_map, fixed)
        # coords keyed by coordinate names; map onto full grid shape
        out = np.zeros(grid.shape + (self.channels, self.channels), dtype=complex)
        for i in range(self.channels):
            for j in range(self.channels):
                out[..., i, j] = np.broadcast_to(self._evaluators[i][j](coords), grid.shape)
        return out

    def partial(self, alpha):
        syms = _expr.coordinate_symbols(self.m)
        mat = self.matrix
        for name, k in zip(spatial_names(self.m), alpha):
            if k:
                mat = mat.diff(syms[name], k)
        return SymbolicCoefficient(mat, self.m)

    def H(self):
        return SymbolicCoefficient(self.matrix.conjugate().T, self.m)

    def scaled(self, c):
        return SymbolicCoefficient(sp.nsimplify(c) * self.matrix if isinstance(c, int)
                                   else sp.sympify(c) * self.matrix, self.m)

    def __add__(self, other):
        if isinstance(other, SymbolicCoefficient):
            return SymbolicCoefficient(self.matrix + other.matrix, self.m)
        return super().__add__(other)

    @cached_property
    def _zero(self):
        return all(sp.simplify(e) == 0 for e in self.matrix)

    def is_zero(self):
        return self._zero

    def __repr__(self):
        return f"SymbolicCoefficient({self.matrix.tolist()!r})"


class SampledCoefficient(CoefficientField):
    """Coefficient known only through samples on its own grid.

    The grid's axis names must be coordinate names (``t``, ``y``, ``x`` ...).
    When sampled on another grid the matching axes must carry identical
    nodes; missing axes are broadcast. Derivatives use :func:`fd_partial`.
    """

    numeric = True

    def __init__(self, values: GridFunction, m: int = 1, accuracy: int = 2):
        if not values.is_matrix:
            vals = values.values
            if vals.shape[-1] != 1:
                raise ShapeError("vector samples are ambiguous; pass N x N matrices")
            values = GridFunction(values.grid, vals[..., None])
        self.field = values
        self.channels = values.values.shape[-1]
        self.m = m
        self.accuracy = accuracy

    @classmethod
    def scalar(cls, grid: Grid, values, m: int = 1) -> "SampledCoefficient":
        v = np.asarray(values, dtype=complex).reshape(grid.shape)
        return cls(GridFunction(grid, v[..., None, None]), m)

    def sample(self, grid, axis_map=None, fixed=None):
        own = self.field.grid
        vals = self.field.values
        order = []
        for a in own.axes:
            gname = _resolve(axis_map, a.name)
            if not grid.has_axis(gname):
                raise ShapeError(f"sampled coefficient needs axis {gname!r} on the target grid")
            ta = grid.axis(gname)
            if (ta.count, ta.lower, ta.upper) != (a.count, a.lower, a.upper):
                raise ShapeError(f"axis {gname!r} nodes differ from the coefficient's grid")
            order.append(grid.axis_index(gname))
        # move own axes into target positions, insert singleton axes elsewhere
        perm = np.argsort(order)
        vals = np.transpose(vals, tuple(perm) + (own.ndim, own.ndim + 1))
        shape = [1] * grid.ndim
        for k in sorted(order):
            shape[k] = grid.shape[k]
        vals = vals.reshape(tuple(shape) + vals.shape[-2:])
        return np.broadcast_to(vals, grid.shape + vals.shape[-2:])

    def partial(self, alpha):
        f = self.field
        for name, k in zip(spatial_names(self.m), alpha):
            if k:
                f = fd_partial(f, name, k, accuracy=self.accuracy)
        return SampledCoefficient(f, self.m, self.accuracy)

    def H(self):
        return SampledCoefficient(
            GridFunction(self.field.grid, np.swapaxes(self.field.values, -1, -2).conj()),
            self.m, self.accuracy)

    def scaled(self, c):
        return SampledCoefficient(self.field * complex(c), self.m, self.accuracy)

    def __add__(self, other):
        if isinstance(other, SampledCoefficient) and other.field.grid == self.field.grid:
            return SampledCoefficient(self.field + other.field, self.m, self.accuracy)
        return super().__add__(other)

    def is_zero(self):
        return not np.any(self.field.values)


class CallableCoefficient(CoefficientField):
    """Coefficient from a python callable ``func(coords) -> (..., N, N)``.

    ``derivative(alpha)`` may return the exact partial derivative as another
    :class:`CoefficientField` (or callable). Without it, ``partial`` raises
    :class:`MissingDerivativeError` unless ``allow_numeric`` is set, in which
    case derivatives are finite differences taken on whatever grid the
    derivative is later sampled on.
    """

    def __init__(self, func, channels: int, m: int = 1, derivative=None,
                 allow_numeric: bool = False, accuracy: int = 2):
        self.func = func
        self.channels = channels
        self.m = m
        self.derivative = derivative
        self.allow_numeric = allow_numeric
        self.accuracy = accuracy

    def sample(self, grid, axis_map=None, fixed=None):
        names = list(_expr.coordinate_symbols(self.m))
        coords = _coord_arrays(grid, names, axis_map, fixed)
        out = np.asarray(self.func(coords), dtype=complex)
        return np.broadcast_to(out, grid.shape + (self.channels, self.channels))

    def partial(self, alpha):
        if not any(alpha):
            return self
        if self.derivative is not None:
            d = self.derivative(tuple(alpha))
            if isinstance(d, CoefficientField):
                return d
            return CallableCoefficient(d, self.channels, self.m, allow_numeric=self.allow_numeric,
                                       accuracy=self.accuracy)
        if not self.allow_numeric:
            raise MissingDerivativeError(
                f"no derivative oracle for d^{tuple(alpha)}; pass derivative= or allow_numeric=True")
        return _FiniteDifferenced(self, tuple(alpha), self.accuracy)

    def H(self):
        f = self.func
        dv = self.derivative
        return CallableCoefficient(
            lambda c: np.swapaxes(np.asarray(f(c), dtype=complex), -1, -2).conj(),
            self.channels, self.m,
            derivative=(lambda a: _as_field(dv(a), self).H()) if dv else None,
            allow_numeric=self.allow_numeric, accuracy=self.accuracy)


def _as_field(d, like):
    if isinstance(d, CoefficientField):
        return d
    return CallableCoefficient(d, like.channels, like.m, allow_numeric=like.allow_numeric)


class _FiniteDifferenced(CoefficientField):
    """Lazily finite-differenced coefficient (numeric derivative fallback)."""

    numeric = True

    def __init__(self, base, alpha, accuracy=2):
        self.base = base
        self.alpha = alpha
        self.channels = base.channels
        self.m = base.m
        self.accuracy = accuracy

    def sample(self, grid, axis_map=None, fixed=None):
        vals = np.array(self.base.sample(grid, axis_map, fixed))
        for name, k in zip(spatial_names(self.m), self.alpha):
            if k:
                vals = fd_partial(vals, _resolve(axis_map, name), k, self.accuracy, grid=grid)
        return vals

    def partial(self, alpha):
        return _FiniteDifferenced(self.base, tuple(a + b for a, b in zip(self.alpha, alpha)),
                                  self.accuracy)

    def H(self):
        return _FiniteDifferenced(self.base.H(), self.alpha, self.accuracy)


class LinearCombination(CoefficientField):
    def __init__(self, terms):
        flat = []
        for c, f in terms:
            if isinstance(f, LinearCombination):
                flat.extend((c * c2, f2) for c2, f2 in f.terms)
            else:
                flat.append((complex(c), f))
        self.terms = flat
        self.channels = flat[0][1].channels
        self.m = flat[0][1].m
        self.numeric = any(f.numeric for _, f in flat)

    def sample(self, grid, axis_map=None, fixed=None):
        out = np.zeros(grid.shape + (self.channels, self.channels), dtype=complex)
        for c, f in self.terms:
            out += c * f.sample(grid, axis_map, fixed)
        return out

    def partial(self, alpha):
        return LinearCombination([(c, f.partial(alpha)) for c, f in self.terms])

    def H(self):
        return LinearCombination([(np.conj(c), f.H()) for c, f in self.terms])

    def is_zero(self):
        return all(c == 0 or f.is_zero() for c, f in self.terms)


# ---------------------------------------------------------------------------
# differential expressions

def _check_alpha(alpha, m):
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != m or any(a < 0 for a in alpha):
        raise ShapeError(f"multi-index {alpha} invalid for m={m}")
    return alpha


@dataclass(frozen=True)
class DifferentialExpression:
    """``sum_alpha a_alpha d^alpha`` acting on ``C^N``-valued functions of ``x in R^m``.

    ``terms`` maps multi-indices (tuples of length ``m``) to
    :class:`CoefficientField` objects; the mapping is kept in lexicographic
    multi-index order.
    """

    m: int
    channels: int
    terms: tuple

    def __init__(self, m: int, channels: int, terms):
        items = terms.items() if isinstance(terms, dict) else terms
        clean = {}
        for alpha, coeff in items:
            alpha = _check_alpha(alpha, m)
            if not isinstance(coeff, CoefficientField):
                coeff = SymbolicCoefficient.scalar(coeff, channels, m) if np.ndim(coeff) == 0 \
                    or isinstance(coeff, str) else SymbolicCoefficient(coeff, m)
            if coeff.channels != channels:
                raise ShapeError(f"coefficient of {alpha} has {coeff.channels} channels, expected {channels}")
            clean[alpha] = clean[alpha] + coeff if alpha in clean else coeff
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "terms", tuple(sorted(clean.items())))

    @property
    def order(self) -> int:
        return max((sum(a) for a, _ in self.terms), default=0)

    @property
    def numeric(self) -> bool:
        return any(c.numeric for _, c in self.terms)

    def coefficient(self, alpha):
        return dict(self.terms).get(tuple(alpha))

    def __call__(self, f, **kw):
        return apply_op(self, f, **kw)

    def __add__(self, other):
        if (self.m, self.channels) != (other.m, other.channels):
            raise ShapeError("cannot add expressions of different shapes")
        return DifferentialExpression(self.m, self.channels, list(self.terms) + list(other.terms))

    def scaled(self, c):
        return DifferentialExpression(self.m, self.channels,
                                      [(a, f.scaled(c)) for a, f in self.terms])

    def __neg__(self):
        return self.scaled(-1)

    def adjoint(self):
        return formal_adjoint(self)

    @classmethod
    def zero(cls, m=1, channels=1):
        return cls(m, channels, {(0,) * m: SymbolicCoefficient(sp.zeros(channels), m)})


def _derivatives(f_vals, grid, alpha, m, axis_map, accuracy, cache):
    alpha = tuple(alpha)
    if alpha in cache:
        return cache[alpha]
    names = spatial_names(m)
    # peel the last nonzero axis so mixed derivatives reuse lower ones
    k = max(i for i, a in enumerate(alpha) if a)
    lower = list(alpha)
    lower[k] = 0
    base = _derivatives(f_vals, grid, tuple(lower), m, axis_map, accuracy, cache) if any(lower) else f_vals
    out = fd_partial(base, _resolve(axis_map, names[k]), alpha[k], accuracy, grid=grid)
    cache[alpha] = out
    return out


def apply_op(L: DifferentialExpression, f: GridFunction, axis_map=None, fixed=None,
             accuracy: int = 2) -> GridFunction:
    """``sum_alpha a_alpha d^alpha f`` by finite differences, nodewise.

    Evolution axes of ``f.grid`` are carried along: the operator acts on
    every slice at once and coefficients are evaluated at the slice's
    ``t``/``y`` values.
    """
    if f.is_matrix or f.channels != L.channels:
        raise ShapeError(f"operator with N={L.channels} applied to {f.values.shape[f.grid.ndim:]} samples")
    for name in spatial_names(L.m):
        if not f.grid.has_axis(_resolve(axis_map, name)):
            raise ShapeError(f"grid lacks spatial axis {_resolve(axis_map, name)!r}")
    cache: dict = {}
    out = np.zeros(f.values.shape, dtype=complex)
    for alpha, coeff in L.terms:
        if coeff.is_zero():
            continue
        a = coeff.sample(f.grid, axis_map, fixed)
        d = f.values if not any(alpha) else _derivatives(f.values, f.grid, alpha, L.m, axis_map,
                                                          accuracy, cache)
        out += np.einsum("...ij,...j->...i", a, d)
    return GridFunction(f.grid, out)


def formal_adjoint(L: DifferentialExpression) -> DifferentialExpression:
    """``L* = sum_alpha (-1)^|alpha| d^alpha (a_alpha^H .)`` in normal form.

    Expanded by the multi-index Leibniz rule,
    ``L* = sum_beta [sum_{alpha >= beta} (-1)^|alpha| C(alpha, beta)
    d^(alpha - beta) a_alpha^H] d^beta``.
    """
    acc: dict = {}
    for alpha, coeff in L.terms:
        aH = coeff.H()
        sign = -1 if sum(alpha) % 2 else 1
        for beta in product(*(range(a + 1) for a in alpha)):
            binom = math.prod(math.comb(a, b) for a, b in zip(alpha, beta))
            rest = tuple(a - b for a, b in zip(alpha, beta))
            piece = aH.partial(rest) if any(rest) else aH
            piece = piece.scaled(sign * binom)
            acc[beta] = acc[beta] + piece if beta in acc else piece
    return DifferentialExpression(L.m, L.channels, acc)


def _boundary_mass(f: GridFunction, layers: int = 3) -> float:
    vals = np.abs(f.values)
    worst = 0.0
    for name in f.grid.spatial_axes:
        ax = f.grid.axis_index(name)
        v = np.moveaxis(vals, ax, 0)
        worst = max(worst, float(v[:layers].max()), float(v[-layers:].max()))
    return worst


def adjoint_defect(L: DifferentialExpression, phi: GridFunction, psi: GridFunction,
                   axis_map=None, fixed=None, accuracy: int = 2) -> complex:
    """``(phi, L psi) - (L* phi, psi)``; zero up to O(h^2) for decaying data.

    Issues :class:`BoundarySupportWarning` when either function exceeds
    ``1e-12`` on the outermost three spatial node layers.
    """
    for f, label in ((phi, "phi"), (psi, "psi")):
        mass = _boundary_mass(f)
        if mass > 1e-12:
            warnings.warn(f"{label} reaches {mass:.2e} on the boundary layers; "
                          "the defect includes boundary flux", BoundarySupportWarning, stacklevel=2)
    Ls = formal_adjoint(L)
    lhs = pairing(phi, apply_op(L, psi, axis_map, fixed, accuracy))
    rhs = pairing(apply_op(Ls, phi, axis_map, fixed, accuracy), psi)
    return lhs - rhs


# ---------------------------------------------------------------------------
# evolution operators

@dataclass(frozen=True)
class EvolutionOperator:
    """``sign * d/d(axis) - spatial``; e.g. ``d/dt - L`` or ``d/dy - M``."""

    spatial: DifferentialExpression
    axis: str = "t"
    sign: int = 1

    def adjoint(self) -> "EvolutionOperator":
        """Formal adjoint: ``-sign * d/d(axis) - L*``."""
        return EvolutionOperator(formal_adjoint(self.spatial), self.axis, -self.sign)

    def __call__(self, f, **kw):
        return evolution_apply(self, f, **kw)


def evolution_apply(op: EvolutionOperator, psi: GridFunction, axis_map=None,
                    accuracy: int = 2, time_accuracy: int | None = None) -> GridFunction:
    """Nodewise ``sign * d psi/d(axis) - L psi``: the residual of ``psi_axis = L psi``."""
    gname = _resolve(axis_map, op.axis)
    if not psi.grid.has_axis(gname):
        raise ShapeError(f"grid has no evolution axis {gname!r}")
    if psi.grid.axis(gname).role != EVOLUTION:
        raise ShapeError(f"axis {gname!r} is not an evolution axis")
    dt = fd_partial(psi, gname, 1, accuracy=time_accuracy or accuracy)
    return dt * op.sign - apply_op(op.spatial, psi, axis_map, accuracy=accuracy)


# ---------------------------------------------------------------------------
# operator description files

def operator_from_dict(spec: dict) -> DifferentialExpression:
    """Build an expression from ``{"m", "N", "terms": [{"alpha", "coeff"}]}``.

    ``coeff`` is an expression string (times the identity when ``N > 1``)
    or an ``N x N`` nested list of expression strings.
    """
    try:
        m, N = int(spec["m"]), int(spec["N"])
        terms = spec["terms"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"operator description missing field: {exc}") from None
    out = []
    for term in terms:
        alpha = tuple(term["alpha"])
        c = term["coeff"]
        if isinstance(c, list):
            mat = sp.Matrix([[_expr.parse(e, m) for e in row] for row in c])
        else:
            mat = _expr.parse(c, m) * sp.eye(N)
        out.append((alpha, SymbolicCoefficient(mat, m)))
    return DifferentialExpression(m, N, out)


def load_operator(path) -> DifferentialExpression:
    return operator_from_dict(json.loads(Path(path).read_text()))
