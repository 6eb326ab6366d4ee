"""Bilinear concomitants, the m-form ``Z^(m)[phi, psi]``, and chain integrals.

Orientation conventions
-----------------------
Forms live on the ambient grid, whose axes are ordered ``(t[, y], x1..xm)``.
Components are keyed by tuples of axis names in grid order, so
``("t", "x")`` is ``dt`` paired with nothing else for ``m = 1`` -- i.e. the
key lists the differentials of the basis form ``dt ^ dx_hat_i``.

For an evolution operator ``E = sigma d/dt - L`` the assembled form is::

    Z^(m) = -sigma * sum_i Z_i  dt ^ dx_hat_i  -  conj(phi)^T psi  dx1 ^ .. ^ dxm

with ``sum_i (-1)^(i+1) d_i Z_i = conj(phi)^T L psi - conj(L* phi)^T psi``.
With this choice ``dZ^(m) = [<phi, (L - d_t) psi> - <(L* + d_t) phi, psi>] dt ^ dx``,
which vanishes when ``psi_t = L psi`` and ``phi_t = -L* phi``.

Chains
------
A k-cell of the grid is ``(base, axes)``: the unit cube spanned from node
multi-index ``base`` along the (sorted) axis positions ``axes``. Chains are
integer combinations of cells; the cubical boundary operator is exact, so
Stokes additivity holds cell by cell.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations, product
from pathlib import Path

import numpy as np

from .diffop import (
    DifferentialExpression,
    EvolutionOperator,
    _resolve,
    apply_op,
    evolution_apply,
    formal_adjoint,
    spatial_names,
)
from .numgrid import Grid, GridFunction, ShapeError, fd_partial, inner_density, trim

__all__ = [
    "HomologyError",
    "PreconditionError",
    "OutOfDomainError",
    "MForm",
    "Chain",
    "Cycle",
    "SurfaceChain",
    "concomitant_flux",
    "concomitant_axis",
    "lagrangian_residual",
    "assemble_Zm",
    "assemble_extended_Zm",
    "dform",
    "closedness_residual",
    "surface_integral",
    "path_independence_gap",
    "staircase_path",
    "box_chain",
    "boundary",
]


class HomologyError(ValueError):
    """Chains do not share the required boundary."""


class PreconditionError(ValueError):
    """Inputs violate an operation's precondition (message quotes the residual)."""


class OutOfDomainError(ValueError):
    """Chain leaves the grid."""


# ---------------------------------------------------------------------------
# concomitants

def _adjoint_apply(coeff_vals, phi_vals):
    # (a^H phi)_i = sum_j conj(a_ji) phi_j
    return np.einsum("...ji,...j->...i", coeff_vals.conj(), phi_vals)


def _dot(b, g):
    return np.einsum("...i,...i->...", b.conj(), g)


def concomitant_flux(L: DifferentialExpression, phi: GridFunction, psi: GridFunction, i: int,
                     axis_map=None, fixed=None, accuracy: int = 2) -> np.ndarray:
    """Divergence flux ``F_i`` with ``sum_i d_i F_i = phi^H L psi - (L* phi)^H psi``.

    ``i`` is 1-based. Each term ``a d^alpha`` is integrated by parts one axis
    at a time in ascending order: derivatives on axes before ``i`` have
    already been moved onto ``b = a^H phi``, derivatives after ``i`` still
    act on ``psi``.
    """
    if phi.grid != psi.grid:
        raise ShapeError("phi and psi must share a grid")
    grid = phi.grid
    names = [_resolve(axis_map, n) for n in spatial_names(L.m)]
    if not 1 <= i <= L.m:
        raise ShapeError(f"axis index {i} outside 1..{L.m}")
    ax = names[i - 1]
    out = np.zeros(grid.shape, dtype=complex)

    def d(vals, name, k):
        return vals if k == 0 else fd_partial(vals, name, k, accuracy, grid=grid)

    for alpha, coeff in L.terms:
        p = alpha[i - 1]
        if p == 0 or coeff.is_zero():
            continue
        b = _adjoint_apply(coeff.sample(grid, axis_map, fixed), phi.values)
        sign = 1
        for k in range(i - 1):
            b = d(b, names[k], alpha[k])
            sign *= (-1) ** alpha[k]
        b = sign * b
        g = psi.values
        for k in range(i, L.m):
            g = d(g, names[k], alpha[k])
        for j in range(p):
            out += (-1) ** j * _dot(d(b, ax, j), d(g, ax, p - 1 - j))
    return out


def concomitant_axis(L, phi, psi, i: int, **kw) -> GridFunction:
    """Bilinear concomitant ``Z_i[phi, psi]`` (1-based ``i``).

    Normalised so that ``sum_i (-1)^(i+1) d_i Z_i = phi^H L psi - (L* phi)^H psi``.
    For ``L = d/dx`` this is ``conj(phi) psi``; for ``L = d^2/dx^2`` it is
    ``conj(phi) psi' - conj(phi') psi``.
    """
    F = concomitant_flux(L, phi, psi, i, **kw)
    return GridFunction(phi.grid, ((-1) ** (i + 1) * F)[..., None])


def lagrangian_residual(op, phi: GridFunction, psi: GridFunction, axis_map=None,
                        accuracy: int = 2) -> GridFunction:
    """Pointwise defect of the generalized Lagrangian identity.

    For ``op`` a :class:`DifferentialExpression` ``L``::

        phi^H L psi - (L* phi)^H psi - sum_i (-1)^(i+1) d_i Z_i

    For ``op = sigma d/dt - L`` the time term enters as well::

        <phi, (L - sigma d_t) psi> - <(L* + sigma d_t) phi, psi>
            - [sum_i (-1)^(i+1) d_i Z_i - sigma d_t (phi^H psi)]

    All derivatives are finite differences, so the result is O(h^2) on
    interior nodes.
    """
    if isinstance(op, EvolutionOperator):
        L, tname, sigma = op.spatial, _resolve(axis_map, op.axis), op.sign
    else:
        L, tname, sigma = op, None, 0
    grid = phi.grid
    Lpsi = apply_op(L, psi, axis_map, accuracy=accuracy).values
    Lsphi = apply_op(formal_adjoint(L), phi, axis_map, accuracy=accuracy).values
    lhs = _dot(phi.values, Lpsi) - _dot(Lsphi, psi.values)
    rhs = np.zeros(grid.shape, dtype=complex)
    for i, name in enumerate(spatial_names(L.m), start=1):
        F = concomitant_flux(L, phi, psi, i, axis_map, accuracy=accuracy)
        rhs += fd_partial(F, _resolve(axis_map, name), 1, accuracy, grid=grid)
    if tname is not None:
        dpsi = fd_partial(psi.values, tname, 1, accuracy, grid=grid)
        dphi = fd_partial(phi.values, tname, 1, accuracy, grid=grid)
        lhs = lhs - sigma * (_dot(phi.values, dpsi) + _dot(dphi, psi.values))
        rhs = rhs - sigma * fd_partial(_dot(phi.values, psi.values), tname, 1, accuracy, grid=grid)
    return GridFunction(grid, (lhs - rhs)[..., None])


# ---------------------------------------------------------------------------
# forms

@dataclass(frozen=True)
class MForm:
    """Differential form of a fixed degree on a grid.

    ``components`` maps sorted axis-name tuples to complex arrays of the
    grid shape; absent keys are zero components.
    """

    grid: Grid
    degree: int
    components: dict = field(repr=False)
    convention: str = "dx-term: -conj(phi)^T psi"

    def __post_init__(self):
        order = {n: k for k, n in enumerate(self.grid.names)}
        clean = {}
        for key, vals in self.components.items():
            key = tuple(sorted(key, key=order.__getitem__))
            if len(key) != self.degree or len(set(key)) != len(key):
                raise ShapeError(f"component {key} does not match degree {self.degree}")
            vals = np.asarray(vals.values[..., 0] if isinstance(vals, GridFunction) else vals,
                              dtype=complex)
            if vals.shape != self.grid.shape:
                raise ShapeError(f"component {key} has shape {vals.shape}, grid is {self.grid.shape}")
            clean[key] = clean[key] + vals if key in clean else vals
        for key in combinations(self.grid.names, self.degree):
            clean.setdefault(key, np.zeros(self.grid.shape, dtype=complex))
        object.__setattr__(self, "components", clean)

    def basis(self):
        return list(combinations(self.grid.names, self.degree))

    def component(self, key) -> np.ndarray:
        order = {n: k for k, n in enumerate(self.grid.names)}
        key = tuple(sorted(key, key=order.__getitem__))
        return self.components.get(key, np.zeros(self.grid.shape, dtype=complex))

    def sup(self, interior: int = 0) -> float:
        return max((float(np.max(np.abs(trim(v, self.grid.ndim, interior)), initial=0.0))
                    for v in self.components.values()), default=0.0)

    def __add__(self, other):
        if other.grid != self.grid or other.degree != self.degree:
            raise ShapeError("forms differ in grid or degree")
        comps = dict(self.components)
        for k, v in other.components.items():
            comps[k] = comps[k] + v if k in comps else v
        return MForm(self.grid, self.degree, comps, self.convention)

    def scaled(self, c):
        return MForm(self.grid, self.degree, {k: c * v for k, v in self.components.items()},
                     self.convention)


def _spatial_keys(grid, L, axis_map):
    return [_resolve(axis_map, n) for n in spatial_names(L.m)]


def _evolution_part(op: EvolutionOperator, phi, psi, axis_map, accuracy):
    L = op.spatial
    tname = _resolve(axis_map, op.axis)
    xs = _spatial_keys(phi.grid, L, axis_map)
    comps = {}
    for i in range(1, L.m + 1):
        Zi = (-1) ** (i + 1) * concomitant_flux(L, phi, psi, i, axis_map, accuracy=accuracy)
        key = (tname,) + tuple(x for k, x in enumerate(xs, start=1) if k != i)
        comps[key] = -op.sign * Zi
    return comps, xs


def assemble_Zm(op: EvolutionOperator, phi: GridFunction, psi: GridFunction, axis_map=None,
                accuracy: int = 2) -> MForm:
    """The closed m-form ``Z^(m)[phi, psi]`` on the ``(t; x)`` grid (see module notes)."""
    if phi.grid != psi.grid:
        raise ShapeError("phi and psi must share a grid")
    if not phi.grid.has_axis(_resolve(axis_map, op.axis)):
        raise ShapeError(f"grid lacks evolution axis {op.axis!r}")
    comps, xs = _evolution_part(op, phi, psi, axis_map, accuracy)
    comps[tuple(xs)] = -inner_density(phi, psi)
    return MForm(phi.grid, op.spatial.m, comps)


def assemble_extended_Zm(op_t: EvolutionOperator, op_y: EvolutionOperator, phi: GridFunction,
                         psi: GridFunction, axis_map=None, accuracy: int = 2) -> MForm:
    """Two-parameter m-form: ``dt``- and ``dy``-concomitant blocks plus the ``dx`` term.

    The ``dx`` term uses ``-conj(phi)^T psi`` as in the one-parameter form;
    the unconjugated, positive variant is not used (closedness decides).
    """
    for op in (op_t, op_y):
        if not phi.grid.has_axis(_resolve(axis_map, op.axis)):
            raise ShapeError(f"grid lacks evolution axis {op.axis!r}")
    if op_t.spatial.m != op_y.spatial.m:
        raise ShapeError("operators act on different spatial dimensions")
    comps, xs = _evolution_part(op_t, phi, psi, axis_map, accuracy)
    more, _ = _evolution_part(op_y, phi, psi, axis_map, accuracy)
    comps.update(more)
    comps[tuple(xs)] = -inner_density(phi, psi)
    return MForm(phi.grid, op_t.spatial.m, comps)


def dform(Z: MForm, accuracy: int = 2) -> MForm:
    """Exterior derivative by finite differences."""
    grid = Z.grid
    comps = {}
    for C in combinations(grid.names, Z.degree + 1):
        acc = np.zeros(grid.shape, dtype=complex)
        touched = False
        for pos, a in enumerate(C):
            B = C[:pos] + C[pos + 1:]
            if B in Z.components:
                acc += (-1) ** pos * fd_partial(Z.components[B], a, 1, accuracy, grid=grid)
                touched = True
        if touched:
            comps[C] = acc
    return MForm(grid, Z.degree + 1, comps, Z.convention)


def _solution_residual(op, f, axis_map, accuracy):
    r = evolution_apply(op, f, axis_map, accuracy=accuracy)
    scale = max(f.sup(), 1e-300)
    return r.sup(interior=2) / scale


def default_solution_tol(grid: Grid, constant: float = 50.0) -> float:
    """Grid tolerance for 'solves (2.5)': ``constant * max_h^2``."""
    return constant * max(a.spacing for a in grid.axes) ** 2


def closedness_residual(op: EvolutionOperator, phi: GridFunction, psi: GridFunction,
                        axis_map=None, accuracy: int = 2, interior: int = 2,
                        solution_tol: float | None = None, require_solutions: bool = True) -> float:
    """Interior sup-norm of ``dZ^(m)[phi, psi]``.

    With ``require_solutions`` the inputs must solve ``psi_t = L psi`` and
    ``phi_t = -L* phi`` to within ten times ``solution_tol`` (relative
    sup-norm); otherwise :class:`PreconditionError` is raised.
    """
    if require_solutions:
        tol = solution_tol if solution_tol is not None else default_solution_tol(phi.grid)
        for f, o, label in ((psi, op, "psi"), (phi, op.adjoint(), "phi")):
            r = _solution_residual(o, f, axis_map, accuracy)
            if r > 10 * tol:
                raise PreconditionError(
                    f"{label} is not an evolution solution: relative residual {r:.3e} > 10 * {tol:.3e}")
    Z = assemble_Zm(op, phi, psi, axis_map, accuracy)
    return dform(Z, accuracy).sup(interior)


# ---------------------------------------------------------------------------
# chains

@dataclass(frozen=True)
class Chain:
    """Integer combination of k-cells ``(base, axes)`` on a grid.

    ``axes`` are axis positions (ints, ascending). 0-cells have ``axes == ()``.
    """

    grid: Grid
    degree: int
    cells: dict = field(repr=False)

    def __post_init__(self):
        clean = Counter()
        for (base, axes), c in dict(self.cells).items():
            base = tuple(int(b) for b in base)
            axes = tuple(sorted(int(a) for a in axes))
            if len(axes) != self.degree:
                raise ShapeError(f"cell {base, axes} is not a {self.degree}-cell")
            clean[(base, axes)] += int(c)
        object.__setattr__(self, "cells", {k: v for k, v in clean.items() if v})
        self._check_domain()

    def _check_domain(self):
        shape = self.grid.shape
        for base, axes in self.cells:
            if len(base) != len(shape):
                raise OutOfDomainError(f"cell base {base} has wrong rank for grid {shape}")
            for k, b in enumerate(base):
                top = b + (1 if k in axes else 0)
                if b < 0 or top >= shape[k]:
                    raise OutOfDomainError(f"cell {base, axes} leaves the grid {shape}")

    def __add__(self, other):
        self._compatible(other)
        c = Counter(self.cells)
        c.update(other.cells)
        return Chain(self.grid, self.degree, dict(c))

    def __neg__(self):
        return Chain(self.grid, self.degree, {k: -v for k, v in self.cells.items()})

    def __sub__(self, other):
        return self + (-other)

    def __eq__(self, other):
        return (isinstance(other, Chain) and self.grid == other.grid
                and self.degree == other.degree and self.cells == other.cells)

    def __hash__(self):
        return hash((self.degree, tuple(sorted(self.cells.items()))))

    def _compatible(self, other):
        if self.grid != other.grid or self.degree != other.degree:
            raise ShapeError("chains differ in grid or degree")

    def to_json(self) -> list:
        """``[{"cell": [corner node multi-indices], "sign": c}, ...]``."""
        out = []
        for (base, axes), c in sorted(self.cells.items()):
            corners = []
            for bits in product((0, 1), repeat=len(axes)):
                node = list(base)
                for a, bit in zip(axes, bits):
                    node[a] += bit
                corners.append(node)
            out.append({"cell": corners, "sign": c})
        return out

    @classmethod
    def from_json(cls, grid: Grid, items, degree: int | None = None) -> "Chain":
        cells = Counter()
        deg = degree
        for item in items:
            corners = np.asarray(item["cell"], dtype=int).reshape(-1, grid.ndim)
            base = corners.min(axis=0)
            axes = tuple(k for k in range(grid.ndim) if corners[:, k].max() > base[k])
            if np.any(corners.max(axis=0) - base > 1) or len(corners) != 2 ** len(axes):
                raise ShapeError(f"{item['cell']} is not a unit grid cell")
            if deg is None:
                deg = len(axes)
            cells[(tuple(base), axes)] += int(item.get("sign", 1))
        return cls(grid, deg if deg is not None else 0, dict(cells))


@dataclass(frozen=True, eq=False)
class Cycle(Chain):
    """Closed chain (empty boundary) with a marker node, e.g. the point ``(x, t)``."""

    marker: tuple | None = None

    def __post_init__(self):
        super().__post_init__()
        if self.degree > 0 and boundary(self).cells:
            raise HomologyError("cycle has a non-empty boundary")

    @classmethod
    def point(cls, grid: Grid, node, sign: int = 1) -> "Cycle":
        node = tuple(int(n) for n in node)
        return cls(grid, 0, {(node, ()): sign}, marker=node)


def boundary(chain: Chain) -> Chain:
    """Cubical boundary; ``boundary(boundary(c))`` is the zero chain."""
    if chain.degree == 0:
        raise ShapeError("0-chains have no boundary")
    out = Counter()
    for (base, axes), c in chain.cells.items():
        for j, a in enumerate(axes):
            rest = axes[:j] + axes[j + 1:]
            up = list(base)
            up[a] += 1
            s = (-1) ** j
            out[(tuple(up), rest)] += s * c
            out[(base, rest)] -= s * c
    return Chain(chain.grid, chain.degree - 1, dict(out))


@dataclass(frozen=True)
class SurfaceChain:
    """m-chain ``S`` with ``boundary(S) == plus_cycle - minus_cycle`` (checked)."""

    chain: Chain
    plus_cycle: Chain
    minus_cycle: Chain

    def __post_init__(self):
        if boundary(self.chain) != self.plus_cycle - self.minus_cycle:
            raise HomologyError("boundary of the surface differs from plus_cycle - minus_cycle")
        for cyc in (self.plus_cycle, self.minus_cycle):
            if cyc.degree > 0 and boundary(cyc).cells:
                raise HomologyError("boundary cycles must be closed")

    @property
    def grid(self):
        return self.chain.grid

    @property
    def degree(self):
        return self.chain.degree

    def reversed(self) -> "SurfaceChain":
        return SurfaceChain(-self.chain, self.minus_cycle, self.plus_cycle)

    def __add__(self, other: "SurfaceChain") -> "SurfaceChain":
        """Concatenation: ``self`` from A to B followed by ``other`` from B to C."""
        if self.plus_cycle != other.minus_cycle:
            raise HomologyError("chains do not connect")
        return SurfaceChain(self.chain + other.chain, other.plus_cycle, self.minus_cycle)

    def to_json(self) -> dict:
        return {"cells": self.chain.to_json(), "plus_cycle": self.plus_cycle.to_json(),
                "minus_cycle": self.minus_cycle.to_json()}

    @classmethod
    def from_json(cls, grid: Grid, data) -> "SurfaceChain":
        if isinstance(data, (str, Path)):
            data = json.loads(Path(data).read_text())
        chain = Chain.from_json(grid, data["cells"])
        plus = Chain.from_json(grid, data["plus_cycle"], chain.degree - 1)
        minus = Chain.from_json(grid, data["minus_cycle"], chain.degree - 1)
        return cls(chain, plus, minus)

    @classmethod
    def spanning(cls, chain: Chain, minus_cycle: Chain) -> "SurfaceChain":
        """Surface whose plus-cycle is whatever closes ``boundary(chain) + minus_cycle``."""
        return cls(chain, boundary(chain) + minus_cycle, minus_cycle)


def staircase_path(grid: Grid, start, end, order=None) -> SurfaceChain:
    """Grid path from node ``start`` to node ``end``, one axis at a time.

    ``order`` lists axis positions in the order they are traversed
    (default: grid order). Returned as a 1-dimensional :class:`SurfaceChain`
    with ``plus_cycle = [end]`` and ``minus_cycle = [start]``.
    """
    start, end = tuple(int(s) for s in start), tuple(int(e) for e in end)
    order = list(range(grid.ndim)) if order is None else list(order)
    cells = Counter()
    cur = list(start)
    for a in order:
        step = 1 if end[a] >= cur[a] else -1
        while cur[a] != end[a]:
            if step > 0:
                cells[(tuple(cur), (a,))] += 1
            else:
                lo = list(cur)
                lo[a] -= 1
                cells[(tuple(lo), (a,))] -= 1
            cur[a] += step
    if tuple(cur) != end:
        raise ShapeError("traversal order does not cover every axis")
    return SurfaceChain(Chain(grid, 1, dict(cells)), Cycle.point(grid, end), Cycle.point(grid, start))


def box_chain(grid: Grid, lower, upper, axes) -> Chain:
    """All unit cells of the node box ``lower..upper`` spanning ``axes`` (positions).

    Along axes not in ``axes`` the box must be flat (``lower == upper``).
    The chain carries the canonical orientation of each cell.
    """
    axes = tuple(sorted(axes))
    ranges = []
    for k in range(grid.ndim):
        if k in axes:
            if upper[k] <= lower[k]:
                raise ShapeError(f"box is degenerate along axis {k}")
            ranges.append(range(lower[k], upper[k]))
        else:
            if upper[k] != lower[k]:
                raise ShapeError(f"box is not flat along axis {k}")
            ranges.append((lower[k],))
    return Chain(grid, len(axes), {(base, axes): 1 for base in product(*ranges)})


def surface_integral(Z: MForm, S) -> complex:
    """Oriented sum of cell trapezoid integrals of ``Z`` over the chain ``S``."""
    chain = S.chain if isinstance(S, SurfaceChain) else S
    if chain.grid != Z.grid:
        raise OutOfDomainError("chain and form live on different grids")
    if chain.degree != Z.degree:
        raise ShapeError(f"cannot integrate a {Z.degree}-form over a {chain.degree}-chain")
    grid = Z.grid
    groups: dict = {}
    for (base, axes), c in chain.cells.items():
        groups.setdefault(axes, []).append((base, c))
    total = 0.0 + 0.0j
    for axes, items in groups.items():
        key = tuple(grid.names[a] for a in axes)
        if key not in Z.components:
            continue
        comp = Z.components[key]
        bases = np.array([b for b, _ in items], dtype=int)
        coef = np.array([c for _, c in items], dtype=float)
        acc = np.zeros(len(items), dtype=complex)
        for bits in product((0, 1), repeat=len(axes)):
            idx = bases.copy()
            for a, bit in zip(axes, bits):
                idx[:, a] += bit
            acc += comp[tuple(idx.T)]
        vol = float(np.prod([grid.axes[a].spacing for a in axes])) if axes else 1.0
        total += vol * np.dot(coef, acc) / 2 ** len(axes)
    return complex(total)


def path_independence_gap(Z: MForm, S1: SurfaceChain, S2: SurfaceChain) -> float:
    """``|int_S1 Z - int_S2 Z|`` for chains with identical boundary cycles."""
    if S1.plus_cycle != S2.plus_cycle or S1.minus_cycle != S2.minus_cycle:
        raise HomologyError("surfaces do not span the same pair of cycles")
    return abs(surface_integral(Z, S1) - surface_integral(Z, S2))
