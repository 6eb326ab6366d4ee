"""Uniform tensor grids, finite differences, quadrature and dense solves.

Every other module builds on the handful of primitives here:

* :class:`Grid` / :func:`make_uniform_grid` -- uniform tensor-product grids
  whose axes carry a role (``"evolution"`` for ``t``/``y``, ``"space"`` for
  ``x``, ``x1``, ...).
* :class:`GridFunction` -- complex ``C^N`` (or ``N x N``) samples on a grid.
* :func:`fd_partial` -- finite differences, second order by default, with
  one-sided closures at the boundary.
* :func:`quad`, :func:`pairing`, :func:`cumtrapz` -- trapezoidal quadrature.
* :func:`solve_dense` -- LU with partial pivoting and an explicit pivot test.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg

__all__ = [
    "Axis",
    "Grid",
    "GridFunction",
    "GridError",
    "ShapeError",
    "UnsupportedOrderError",
    "InvalidRegionError",
    "SingularMatrixError",
    "make_uniform_grid",
    "fd_weights",
    "fd_partial",
    "quad",
    "cumtrapz",
    "pairing",
    "solve_dense",
    "read_csv",
    "write_csv",
]

EVOLUTION = "evolution"
SPACE = "space"
_ROLES = (EVOLUTION, SPACE)


class GridError(ValueError):
    """Invalid grid specification."""


class ShapeError(ValueError):
    """Operands live on incompatible grids or have mismatched shapes."""


class UnsupportedOrderError(ValueError):
    """Requested derivative order/accuracy not available on this grid."""


class InvalidRegionError(ValueError):
    """Empty or misaligned integration region."""


class SingularMatrixError(np.linalg.LinAlgError):
    """Matrix is singular to the solver tolerance.

    Attributes
    ----------
    pivot : float
        Magnitude of the failing pivot.
    """

    def __init__(self, message, pivot=0.0):
        super().__init__(message)
        self.pivot = float(pivot)


@dataclass(frozen=True)
class Axis:
    name: str
    lower: float
    upper: float
    count: int
    role: str = SPACE

    @property
    def spacing(self) -> float:
        return (self.upper - self.lower) / (self.count - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.count)

    def index_of(self, value: float) -> int:
        """Index of the node at ``value``; raises if ``value`` is off-grid."""
        pos = (value - self.lower) / self.spacing
        idx = int(round(pos))
        if abs(pos - idx) > 1e-8 or not 0 <= idx < self.count:
            raise InvalidRegionError(f"{value!r} is not a node of axis {self.name!r}")
        return idx


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid.

    Axes are stored in the order given; evolution axes conventionally come
    first (``t``, then ``y``), followed by the spatial axes.
    """

    axes: tuple[Axis, ...]

    def __post_init__(self):
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise GridError(f"duplicate axis names in {names}")
        for a in self.axes:
            if a.role not in _ROLES:
                raise GridError(f"axis {a.name!r}: unknown role {a.role!r}")
            if a.count < 3:
                raise GridError(f"axis {a.name!r}: need at least 3 points, got {a.count}")
            if not (math.isfinite(a.lower) and math.isfinite(a.upper)) or not a.lower < a.upper:
                raise GridError(f"axis {a.name!r}: need lower < upper, got [{a.lower}, {a.upper}]")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.count for a in self.axes)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def spacing(self) -> dict[str, float]:
        return {a.name: a.spacing for a in self.axes}

    @property
    def spatial_axes(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.axes if a.role == SPACE)

    @property
    def evolution_axes(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.axes if a.role == EVOLUTION)

    def axis(self, name: str) -> Axis:
        for a in self.axes:
            if a.name == name:
                return a
        raise ShapeError(f"grid has no axis {name!r} (axes: {self.names})")

    def axis_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ShapeError(f"grid has no axis {name!r} (axes: {self.names})") from None

    def has_axis(self, name: str) -> bool:
        return name in self.names

    def coords(self, name: str) -> np.ndarray:
        """Coordinate of axis ``name`` broadcastable against the grid shape."""
        i = self.axis_index(name)
        shape = [1] * self.ndim
        shape[i] = self.axes[i].count
        return self.axes[i].nodes.reshape(shape)

    def mesh(self) -> dict[str, np.ndarray]:
        return {a.name: self.coords(a.name) for a in self.axes}

    def subgrid(self, names) -> "Grid":
        return Grid(tuple(self.axis(n) for n in names))

    def replace_axis(self, name: str, axis: Axis) -> "Grid":
        return Grid(tuple(axis if a.name == name else a for a in self.axes))

    def refined(self, factor: int = 2) -> "Grid":
        """Grid with every spacing divided by ``factor`` (nodes nested)."""
        return Grid(tuple(Axis(a.name, a.lower, a.upper, (a.count - 1) * factor + 1, a.role)
                          for a in self.axes))

    def describe(self) -> dict:
        return {a.name: {"lower": a.lower, "upper": a.upper, "count": a.count,
                         "spacing": a.spacing, "role": a.role} for a in self.axes}


def make_uniform_grid(axes) -> Grid:
    """Build a :class:`Grid` from ``(name, lower, upper, count[, role])`` tuples.

    The role defaults to ``"evolution"`` for axes named ``t`` or ``y`` and to
    ``"space"`` otherwise.

    >>> make_uniform_grid([("x", 0.0, 1.0, 5)]).spacing
    {'x': 0.25}
    """
    built = []
    for spec in axes:
        if isinstance(spec, Axis):
            built.append(spec)
            continue
        name, lower, upper, count, *rest = spec
        role = rest[0] if rest else (EVOLUTION if name in ("t", "y") else SPACE)
        built.append(Axis(str(name), float(lower), float(upper), int(count), role))
    return Grid(tuple(built))


@dataclass(frozen=True)
class GridFunction:
    """Complex samples on a grid.

    ``values`` has shape ``grid.shape + (N,)`` for vector-valued functions or
    ``grid.shape + (N, N)`` for matrix-valued ones (coefficient snapshots,
    kernels). Non-finite samples are rejected.
    """

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.shape[: self.grid.ndim] != self.grid.shape or vals.ndim not in (
            self.grid.ndim + 1, self.grid.ndim + 2
        ):
            raise ShapeError(
                f"values of shape {vals.shape} do not fit grid {self.grid.shape} + (N,) or (N, N)"
            )
        vals = vals.astype(complex, copy=True)
        if not np.all(np.isfinite(vals)):
            raise ValueError("GridFunction values must be finite (NaN/Inf rejected)")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_callable(cls, grid: Grid, func, channels: int | None = None) -> "GridFunction":
        """Sample ``func(**coords)`` on ``grid``.

        ``func`` receives one broadcastable array per axis name and must return
        either an array of the grid shape (scalar channel) or one with a
        trailing channel axis.
        """
        out = np.asarray(func(**grid.mesh()), dtype=complex)
        if out.ndim <= grid.ndim:
            out = np.broadcast_to(out, grid.shape)[..., None]
        else:
            out = np.broadcast_to(out, grid.shape + out.shape[grid.ndim:])
        if channels is not None and out.shape[grid.ndim] != channels:
            raise ShapeError(f"expected {channels} channels, got {out.shape[grid.ndim]}")
        return cls(grid, out)

    @property
    def channels(self) -> int:
        return self.values.shape[self.grid.ndim]

    @property
    def is_matrix(self) -> bool:
        return self.values.ndim == self.grid.ndim + 2

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)

    def __add__(self, other):
        _check_same(self, other)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other):
        _check_same(self, other)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        return GridFunction(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def conj(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.conj())

    def sup(self, interior: int = 0) -> float:
        """Max-abs value, optionally ignoring ``interior`` boundary layers."""
        return float(np.max(np.abs(trim(self.values, self.grid.ndim, interior)), initial=0.0))


def _check_same(f, g):
    if f.grid != g.grid or f.values.shape != g.values.shape:
        raise ShapeError("grid functions live on different grids or have different shapes")


def trim(values: np.ndarray, ndim: int, layers: int) -> np.ndarray:
    """Drop ``layers`` nodes at both ends of the first ``ndim`` axes.

    Raises :class:`ShapeError` if no node survives, so interior norms are
    never taken over an empty set.
    """
    if layers <= 0:
        return values
    if min(values.shape[:ndim]) <= 2 * layers:
        raise ShapeError(f"grid {values.shape[:ndim]} has no nodes {layers} cells away from every face")
    sl = tuple(slice(layers, -layers) for _ in range(ndim))
    return values[sl]


# ---------------------------------------------------------------------------
# finite differences

@lru_cache(maxsize=None)
def fd_weights(order: int, offsets: tuple[int, ...]) -> np.ndarray:
    """Weights ``w`` with ``sum(w_j f(x + o_j h)) ~ h**order f^(order)(x)``.

    Solves the Taylor-moment (Vandermonde) system on the integer offsets.
    """
    offs = np.asarray(offsets, dtype=float)
    n = len(offs)
    if order >= n:
        raise UnsupportedOrderError(f"{n} points cannot resolve derivative order {order}")
    A = np.vander(offs, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = math.factorial(order)
    w = np.linalg.solve(A, rhs)
    w.setflags(write=False)
    return w


MAX_ORDER = 6


def _stencils(order: int, accuracy: int, n: int):
    """Interior offsets plus per-boundary-node (index, offsets) lists."""
    if accuracy == 1:
        fwd = tuple(range(order + 1))
        width = order + 1
        if n < width + 1:
            raise UnsupportedOrderError(f"axis with {n} points too short for order {order}")
        # forward differences everywhere except the last `order` nodes
        left = []
        right = [(i, tuple(o - (order - (n - 1 - i)) for o in fwd)) for i in range(n - order, n)]
        return fwd, 0, n - order, left, right
    if accuracy not in (2, 4):
        raise UnsupportedOrderError(f"accuracy {accuracy} not supported (use 1, 2 or 4)")
    r = (order + 1) // 2 + accuracy // 2 - 1
    central = tuple(range(-r, r + 1))
    nb = order + accuracy
    if n < max(nb, 2 * r + 1):
        raise UnsupportedOrderError(
            f"axis with {n} points too short for order {order} at accuracy {accuracy}"
        )
    left = [(i, tuple(range(-i, nb - i))) for i in range(r)]
    right = [(i, tuple(range(n - nb - i, n - i))) for i in range(n - r, n)]
    return central, r, n - r, left, right


def fd_partial(f, axis: str, order: int = 1, accuracy: int = 2, grid: Grid | None = None):
    """Finite-difference partial derivative along ``axis``.

    Parameters
    ----------
    f : GridFunction or ndarray
        Samples; a bare array needs ``grid`` and must have the grid axes first.
    axis : str
        Axis name.
    order : int
        Derivative order, ``1 <= order <= 6``.
    accuracy : int
        2 (default): central differences in the interior and one-sided
        ``order + 2`` point closures at the ends, both second order.
        4: the same layout at fourth order.
        1: plain first-order forward differences (diagnostics only).

    Returns
    -------
    GridFunction or ndarray, matching the input type.
    """
    if isinstance(f, GridFunction):
        grid, vals = f.grid, f.values
    else:
        if grid is None:
            raise ShapeError("fd_partial on a bare array needs grid=")
        vals = np.asarray(f)
    if not 1 <= order <= MAX_ORDER:
        raise UnsupportedOrderError(f"derivative order {order} not supported (1..{MAX_ORDER})")
    ax = grid.axis_index(axis)
    n = grid.axes[ax].count
    h = grid.axes[ax].spacing
    central, lo, hi, left, right = _stencils(order, accuracy, n)

    v = np.moveaxis(vals, ax, 0)
    out = np.zeros(v.shape, dtype=np.result_type(v.dtype, float))
    w = fd_weights(order, central)
    for wj, oj in zip(w, central):
        if wj != 0.0:
            out[lo:hi] += wj * v[lo + oj: hi + oj]
    for i, offs in left + right:
        wb = fd_weights(order, offs)
        idx = [i + o for o in offs]
        out[i] = np.tensordot(wb, v[idx], axes=(0, 0))
    out /= h ** order
    out = np.moveaxis(out, 0, ax)
    if isinstance(f, GridFunction):
        return GridFunction(grid, out)
    return out


def stencil_abs_sum(order: int, accuracy: int = 2) -> float:
    """Sum of |weights| of the interior stencil (spectral-radius bound / h^order)."""
    central, *_ = _stencils(order, accuracy, 64)
    return float(np.abs(fd_weights(order, central)).sum())


def stencil_reach(order: int, accuracy: int = 2) -> int:
    """Number of nodes a derivative stencil reaches away from its centre."""
    if accuracy == 1:
        return order
    return (order + 1) // 2 + accuracy // 2 - 1


# ---------------------------------------------------------------------------
# quadrature

def _trap_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return w


def _region_slices(grid: Grid, region):
    if region is None:
        return [slice(None)] * grid.ndim
    sl = []
    for a in grid.axes:
        if a.name not in region:
            sl.append(slice(None))
            continue
        lo, hi = region[a.name]
        i0, i1 = a.index_of(lo), a.index_of(hi)
        if i1 <= i0:
            raise InvalidRegionError(f"empty sub-box along {a.name!r}: [{lo}, {hi}]")
        sl.append(slice(i0, i1 + 1))
    return sl


def quad(f, region: dict | None = None, grid: Grid | None = None):
    """Tensor-product trapezoidal integral over a node-aligned sub-box.

    ``region`` maps axis names to ``(lower, upper)`` node coordinates; axes
    not mentioned are integrated over their full range. Trailing channel
    axes are kept, so a scalar (1-channel) function yields a length-1 array
    unless ``f`` is a bare array of the grid shape.
    """
    if isinstance(f, GridFunction):
        grid, vals = f.grid, f.values
    else:
        vals = np.asarray(f)
    sl = _region_slices(grid, region)
    vals = vals[tuple(sl)]
    for k in range(grid.ndim):
        a = grid.axes[k]
        n = vals.shape[0]
        vals = np.tensordot(_trap_weights(n, a.spacing), vals, axes=(0, 0))
    if isinstance(f, GridFunction) and vals.shape == (1,):
        return complex(vals[0])
    return vals if np.ndim(vals) else complex(vals)


def cumtrapz(values: np.ndarray, h: float, axis: int = 0, start: int = 0, direction: int = 1):
    """Cumulative trapezoid along ``axis`` anchored at index ``start``.

    Returns ``I[i] = int_{x_start}^{x_i}`` (signed), so ``I[start] = 0`` and
    entries before ``start`` hold the negatively oriented integrals.
    """
    v = np.moveaxis(np.asarray(values), axis, 0)
    inc = 0.5 * h * (v[1:] + v[:-1])
    out = np.zeros(v.shape, dtype=np.result_type(v.dtype, float))
    out[1:] = np.cumsum(inc, axis=0)
    out = out - out[start]
    return np.moveaxis(out, 0, axis)


def pairing(phi: GridFunction, psi: GridFunction) -> complex:
    """Semilinear form: trapezoid integral of ``conj(phi)^T psi`` over the grid."""
    if phi.grid != psi.grid or phi.values.shape != psi.values.shape:
        raise ShapeError("pairing needs functions on the same grid with equal channels")
    dens = np.einsum("...i,...i->...", phi.values.conj(), psi.values)
    return complex(quad(dens, grid=phi.grid))


def inner_density(phi: GridFunction, psi: GridFunction) -> np.ndarray:
    """Pointwise ``conj(phi)^T psi``."""
    return np.einsum("...i,...i->...", phi.values.conj(), psi.values)


def norm(f: GridFunction) -> float:
    """L2 norm induced by :func:`pairing`."""
    return math.sqrt(max(pairing(f, f).real, 0.0))


# ---------------------------------------------------------------------------
# dense linear algebra

def solve_dense(A, b, pivot_tol: float = 1e-12) -> np.ndarray:
    """Solve ``A x = b`` by LU with partial pivoting.

    Raises :class:`SingularMatrixError` when a pivot falls below
    ``pivot_tol * ||A||``.
    """
    A = np.asarray(A, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"solve_dense needs a square matrix, got shape {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise ShapeError(f"right-hand side of length {b.shape[0]} for a {A.shape} matrix")
    scale = np.linalg.norm(A, 2) if A.size else 0.0
    lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    pivots = np.abs(np.diag(lu))
    worst = float(pivots.min()) if pivots.size else 0.0
    if scale == 0.0 or worst < pivot_tol * scale:
        raise SingularMatrixError(
            f"matrix singular to tolerance: pivot {worst:.3e} < {pivot_tol:.0e} * ||A|| ({scale:.3e})",
            pivot=worst,
        )
    return scipy.linalg.lu_solve((lu, piv), b)


# ---------------------------------------------------------------------------
# CSV interchange

def write_csv(f: GridFunction, path) -> None:
    """Write ``f`` as CSV: axis columns, then ``re_k, im_k`` per channel."""
    if f.is_matrix:
        raise ShapeError("CSV export is for vector-valued grid functions")
    N = f.channels
    header = list(f.grid.names) + [c for k in range(N) for c in (f"re_{k}", f"im_{k}")]
    coords = np.stack(np.meshgrid(*[a.nodes for a in f.grid.axes], indexing="ij"), axis=-1)
    coords = coords.reshape(-1, f.grid.ndim)
    vals = f.values.reshape(-1, N)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for c, v in zip(coords, vals):
        w.writerow([repr(float(x)) for x in c] + [repr(float(z)) for k in v for z in (k.real, k.imag)])
    Path(path).write_text(buf.getvalue())


def read_csv(path, roles: dict[str, str] | None = None) -> GridFunction:
    """Inverse of :func:`write_csv`; the grid is reconstructed from the columns."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    ncoord = next(i for i, h in enumerate(header) if h.startswith("re_"))
    names = header[:ncoord]
    axes = []
    for k, name in enumerate(names):
        vals = np.unique(body[:, k])
        role = (roles or {}).get(name)
        spec = (name, vals[0], vals[-1], len(vals)) + ((role,) if role else ())
        axes.append(spec)
    grid = make_uniform_grid(axes)
    if body.shape[0] != int(np.prod(grid.shape)):
        raise ShapeError(f"{path}: {body.shape[0]} rows for a grid of shape {grid.shape}")
    data = body[:, ncoord:]
    N = data.shape[1] // 2
    vals = (data[:, 0::2] + 1j * data[:, 1::2]).reshape(grid.shape + (N,))
    return GridFunction(grid, vals)
