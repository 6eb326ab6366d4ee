"""Spectral families, cycle matrices and Delsarte transmutation operators.

A finite spectral family ``{(lambda_k, psi_k, phi_k, w_k)}`` with
``L psi_k = lambda_k psi_k`` and ``L* phi_k = conj(lambda_k) phi_k`` defines,
for every point ``x``, the cycle matrix::

    Omega(x) = I + s * int_{x0}^{x} W Phi^H(y) Psi(y) dy        (K x K)

(``W = diag(w)``, ``s`` the measure sign, ``Omega(x0) = I``). From it:

* transformed family ``Psi~ = Psi Omega^-1``, ``Phi~ = Phi W Omega^-H W^-1``;
* Volterra kernel ``K(x, y) = -s Psi~(x) W Phi^H(y)``, stored separably;
* ``Omega f = f + int_{x0}^{x} K(x, y) f(y) dy``.

Applying the same construction to the transformed family with the opposite
measure sign produces the inverse operator. For ``m > 1`` the path from
``x0`` to ``x`` is replaced by the coordinate rectangle spanned by the two
points (a staircase surface in the grid).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import expr as _expr
from .concomitant import concomitant_flux
from .diffop import (
    DifferentialExpression,
    EvolutionOperator,
    SampledCoefficient,
    SymbolicCoefficient,
    apply_op,
    formal_adjoint,
    spatial_names,
)
from .numgrid import (
    EVOLUTION,
    Axis,
    Grid,
    GridFunction,
    ShapeError,
    SingularMatrixError,
    cumtrapz,
    fd_partial,
    inner_density,
    norm,
    pairing,
    read_csv,
    stencil_abs_sum,
    stencil_reach,
    trim,
)

__all__ = [
    "StaleFamilyError",
    "SingularCycleMatrixError",
    "StabilityError",
    "InsufficientSupportError",
    "InvalidSeparationError",
    "SpectralDatum",
    "SpectralFamily",
    "CycleMatrix",
    "TransmutationKernel",
    "DelsarteOperator",
    "PotentialPair",
    "DressedEvolution",
    "load_family",
    "gaussian_family",
    "cosh_family",
    "exponential_family",
    "schrodinger",
    "separable_solutions",
    "propagate",
    "cycle_matrix",
    "cycle_matrix_field",
    "homotopy_check",
    "transformed_family",
    "build_kernel",
    "build_delsarte",
    "apply_delsarte",
    "apply_inverse",
    "transformed_potential_schrodinger",
    "transformed_schrodinger",
    "test_battery",
    "intertwining_residual",
    "kernel_pde_residual",
    "bump",
    "locality_check",
    "dress_extension",
    "dress_separable",
    "prop31_residual",
    "restrict_operator",
]

#: RK4 stability limit on the negative real axis (|z| for which |R(z)| <= 1).
RK4_LIMIT = 2.78


class StaleFamilyError(ValueError):
    """A family entry no longer solves its eigen-equation to tolerance."""


class SingularCycleMatrixError(SingularMatrixError):
    """The cycle matrix is not invertible at some point of the path."""


class StabilityError(ValueError):
    """Requested time step exceeds the explicit stability bound."""


class InsufficientSupportError(ValueError):
    """Too few nodes to apply the derivative stencils."""


class InvalidSeparationError(ValueError):
    """Test-function supports are closer than the stencil width."""


# ---------------------------------------------------------------------------
# spectral data

@dataclass(frozen=True)
class SpectralDatum:
    """One atom of the discrete spectral measure."""

    eigenvalue: complex
    psi: GridFunction
    phi: GridFunction
    weight: float = 1.0
    label: str = ""

    def __post_init__(self):
        if self.psi.grid != self.phi.grid or self.psi.values.shape != self.phi.values.shape:
            raise ShapeError("psi and phi must share grid and channel count")
        if not (np.isfinite(self.weight) and self.weight > 0):
            raise ValueError(f"weight must be positive and finite, got {self.weight}")
        object.__setattr__(self, "eigenvalue", complex(self.eigenvalue))


@dataclass(frozen=True)
class SpectralFamily:
    """Finite spectral family on a purely spatial grid, with base point ``x0``.

    ``x0`` maps spatial axis names to node coordinates. ``measure_sign`` is
    ``+1`` for seed families and ``-1`` for transformed (tilde) families.
    """

    grid: Grid
    entries: tuple = ()
    x0: dict = field(default_factory=dict)
    t0: float = 0.0
    tolerance: float = 1e-6
    measure_sign: int = 1
    channels: int = 1
    cycle: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.grid.evolution_axes:
            raise ShapeError("spectral families live on purely spatial grids")
        x0 = self.x0
        if not isinstance(x0, dict):
            x0 = np.atleast_1d(np.asarray(x0, dtype=float))
            x0 = dict(zip(self.grid.spatial_axes, x0.tolist()))
        if set(x0) != set(self.grid.spatial_axes):
            raise ShapeError(f"x0 must give every spatial axis {self.grid.spatial_axes}, got {sorted(x0)}")
        for name, v in x0.items():
            self.grid.axis(name).index_of(v)
        object.__setattr__(self, "x0", {k: float(v) for k, v in x0.items()})
        if self.measure_sign not in (1, -1):
            raise ValueError("measure_sign must be +1 or -1")
        for e in self.entries:
            if e.psi.grid != self.grid:
                raise ShapeError("every entry must live on the family grid")
            if e.psi.channels != self.channels:
                raise ShapeError(f"entry has {e.psi.channels} channels, family has {self.channels}")

    def __len__(self):
        return len(self.entries)

    @property
    def m(self) -> int:
        return len(self.grid.spatial_axes)

    @property
    def x0_index(self) -> tuple[int, ...]:
        return tuple(self.grid.axis(n).index_of(self.x0[n]) for n in self.grid.names)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([e.eigenvalue for e in self.entries], dtype=complex)

    @property
    def weights(self) -> np.ndarray:
        return np.array([e.weight for e in self.entries], dtype=float)

    @property
    def Psi(self) -> np.ndarray:
        """Stacked eigenfunctions, shape ``grid.shape + (N, K)``."""
        if not self.entries:
            return np.zeros(self.grid.shape + (self.channels, 0), dtype=complex)
        return np.stack([e.psi.values for e in self.entries], axis=-1)

    @property
    def Phi(self) -> np.ndarray:
        if not self.entries:
            return np.zeros(self.grid.shape + (self.channels, 0), dtype=complex)
        return np.stack([e.phi.values for e in self.entries], axis=-1)

    def eigen_residuals(self, L: DifferentialExpression, accuracy: int = 4, interior: int = 3):
        """Relative residuals ``|L psi - lambda psi| / |psi|`` and the adjoint analogue."""
        Ls = formal_adjoint(L)
        out = []
        for e in self.entries:
            rp = apply_op(L, e.psi, accuracy=accuracy) - e.psi * e.eigenvalue
            rf = apply_op(Ls, e.phi, accuracy=accuracy) - e.phi * e.eigenvalue.conjugate()
            out.append((_rel(rp, e.psi, interior), _rel(rf, e.phi, interior)))
        return out

    def validate(self, L: DifferentialExpression, accuracy: int = 4) -> None:
        """Raise :class:`StaleFamilyError` if any entry breaches the tolerance."""
        for k, (rp, rf) in enumerate(self.eigen_residuals(L, accuracy)):
            if max(rp, rf) > self.tolerance:
                raise StaleFamilyError(
                    f"entry {k} (lambda={self.entries[k].eigenvalue}): eigen-residual "
                    f"psi {rp:.3e}, phi {rf:.3e} exceeds tolerance {self.tolerance:.1e}")

    def scaled_weights(self, factor: float) -> "SpectralFamily":
        return replace(self, entries=tuple(replace(e, weight=e.weight * factor) for e in self.entries))


def _rel(r: GridFunction, f: GridFunction, interior: int) -> float:
    num = np.linalg.norm(trim(r.values, r.grid.ndim, interior))
    den = np.linalg.norm(trim(f.values, f.grid.ndim, interior))
    return float(num / den) if den > 0 else float(num)


def _function_from_spec(spec, grid: Grid, m: int, base: Path | None):
    if isinstance(spec, dict) and "csv" in spec:
        path = Path(spec["csv"])
        if base is not None and not path.is_absolute():
            path = base / path
        f = read_csv(path)
        if f.grid.shape != grid.shape:
            raise ShapeError(f"{path}: grid {f.grid.shape} does not match {grid.shape}")
        return GridFunction(grid, f.values)
    exprs = spec if isinstance(spec, list) else [spec]
    cols = []
    for e in exprs:
        fn = _expr.lambdify(_expr.parse(e, m), m)
        coords = {("x" if m == 1 else n): grid.coords(n) for n in grid.spatial_axes}
        cols.append(np.broadcast_to(fn(coords), grid.shape))
    return GridFunction(grid, np.stack(cols, axis=-1))


def load_family(source, grid: Grid, tolerance: float = 1e-6) -> SpectralFamily:
    """Read ``{"x0", "entries": [{"lambda", "weight", "psi", "phi"}]}``.

    ``lambda`` is ``[re, im]`` or a number; ``psi``/``phi`` are expression
    strings (a list of strings for several channels) or ``{"csv": path}``.
    """
    base = None
    if isinstance(source, (str, Path)):
        base = Path(source).parent
        source = json.loads(Path(source).read_text())
    m = len(grid.spatial_axes)
    try:
        entries = []
        for item in source["entries"]:
            lam = item["lambda"]
            lam = complex(*lam) if isinstance(lam, (list, tuple)) else complex(lam)
            psi = _function_from_spec(item["psi"], grid, m, base)
            phi = _function_from_spec(item.get("phi", item["psi"]), grid, m, base)
            entries.append(SpectralDatum(lam, psi, phi, float(item.get("weight", 1.0)),
                                         str(item.get("label", ""))))
        x0 = source["x0"]
    except KeyError as exc:
        raise ValueError(f"spectral family description lacks field {exc}") from None
    channels = entries[0].psi.channels if entries else int(source.get("N", 1))
    return SpectralFamily(grid, tuple(entries), x0, float(source.get("t0", 0.0)),
                          float(source.get("tolerance", tolerance)), channels=channels)


def schrodinger(potential="0", m: int = 1) -> DifferentialExpression:
    """``-Laplacian + u`` for a scalar channel; ``potential`` is a string,
    number, :class:`GridFunction` or :class:`CoefficientField`."""
    terms = {}
    for k in range(m):
        alpha = [0] * m
        alpha[k] = 2
        terms[tuple(alpha)] = -1
    if isinstance(potential, GridFunction):
        potential = SampledCoefficient(potential, m)
    terms[(0,) * m] = potential
    return DifferentialExpression(m, 1, terms)


def gaussian_family(grid: Grid, weight: float = 1.0, x0: float | None = None):
    """Harmonic-oscillator ground state: ``L = -d^2 + x^2``, ``lambda = 1``.

    Returns ``(L, family)`` with ``psi = phi = exp(-x^2/2)``; ``x0`` defaults
    to the left end of the grid.
    """
    L = schrodinger("x**2")
    x = grid.coords("x")
    g = GridFunction(grid, np.exp(-x ** 2 / 2)[..., None])
    x0 = grid.axis("x").lower if x0 is None else x0
    return L, SpectralFamily(grid, (SpectralDatum(1.0, g, g, weight, "gaussian"),), {"x": x0})


def cosh_family(grid: Grid, kappas=(1.0,), centres=(0.0,), x0: float | None = None):
    """Zero-potential seeds ``cosh(kappa (x - x0))`` with ``lambda = -kappa^2``.

    The weight ``8 kappa exp(-2 kappa (c - x0))`` places the dressed
    one-soliton well ``-2 kappa^2 sech^2(kappa (x - c))`` at ``c``; anchoring
    the cosh at ``x0`` keeps the seed flat at the base point.
    """
    L = schrodinger("0")
    x0 = grid.axis("x").lower if x0 is None else x0
    x = grid.coords("x")
    entries = []
    for k, c in zip(kappas, centres):
        psi = GridFunction(grid, np.cosh(k * (x - x0))[..., None])
        w = 8 * k * np.exp(-2 * k * (c - x0))
        entries.append(SpectralDatum(-k * k, psi, psi, w, f"cosh kappa={k}"))
    return L, SpectralFamily(grid, tuple(entries), {"x": x0})


def exponential_family(grid: Grid, kappas=(1.0,), centres=(0.0,), x0: float | None = None):
    """Zero-potential seeds ``exp(kappa (x - c))`` with weight ``2 kappa``.

    With ``x0`` far to the left each entry dresses to a soliton centred at
    ``c``: ``tau = 1 + exp(2 kappa (x - c))`` up to ``exp(-2 kappa (c - x0))``.
    """
    L = schrodinger("0")
    x0 = grid.axis("x").lower if x0 is None else x0
    x = grid.coords("x")
    entries = []
    for k, c in zip(kappas, centres):
        psi = GridFunction(grid, np.exp(k * (x - c))[..., None])
        entries.append(SpectralDatum(-k * k, psi, psi, 2 * k, f"exp kappa={k}"))
    return L, SpectralFamily(grid, tuple(entries), {"x": x0})


# ---------------------------------------------------------------------------
# time extension

def _tx_grid(t_axis: Axis, grid: Grid) -> Grid:
    t_axis = Axis(t_axis.name, t_axis.lower, t_axis.upper, t_axis.count, EVOLUTION)
    return Grid((t_axis,) + grid.axes)


def separable_solutions(L: DifferentialExpression, family: SpectralFamily, t_axis: Axis,
                        validate: bool = True):
    """``psi = e^{lambda t} psi_lambda`` and ``phi = e^{-conj(lambda) t} phi_lambda``.

    Returns two lists of :class:`GridFunction` on the ``(t; x)`` grid.
    """
    if validate:
        family.validate(L)
    g = _tx_grid(t_axis, family.grid)
    t = t_axis.nodes - family.t0
    tshape = (t_axis.count,) + (1,) * (family.grid.ndim + 1)
    psis, phis = [], []
    for e in family.entries:
        lam = e.eigenvalue
        psis.append(GridFunction(g, np.exp(lam * t).reshape(tshape) * e.psi.values[None]))
        phis.append(GridFunction(g, np.exp(-np.conj(lam) * t).reshape(tshape) * e.phi.values[None]))
    return psis, phis


def _spectral_radius(L: DifferentialExpression, grid: Grid, accuracy: int, fixed) -> float:
    """Bound on the spectral radius of the discretised ``L``."""
    rho = 0.0
    names = spatial_names(L.m)
    for alpha, coeff in L.terms:
        if coeff.is_zero():
            continue
        amax = float(np.max(np.abs(coeff.sample(grid, None, fixed)), initial=0.0)) * L.channels
        factor = 1.0
        for name, k in zip(names, alpha):
            if k:
                factor *= stencil_abs_sum(k, accuracy) / grid.axis(name).spacing ** k
        rho += amax * factor
    return rho


def propagate(L: DifferentialExpression, psi0: GridFunction, t_axis: Axis, adjoint: bool = False,
              substeps: int = 1, accuracy: int = 2, boundary=None) -> GridFunction:
    """Classical RK4 for ``psi_t = L psi`` (or ``phi_t = -L* phi`` with ``adjoint``).

    The method of lines uses the same stencils as :func:`apply_op`, so the
    one-sided boundary closures act as the (only) boundary treatment.

    Stability: the step ``dt = t_axis.spacing / substeps`` must satisfy
    ``dt * rho <= 2.78`` where ``rho = sum_alpha max|a_alpha| S_alpha / h^|alpha|``
    bounds the spectral radius (``S_alpha`` the stencil's absolute weight
    sum). For ``L = -d^2`` at accuracy 2 this is ``dt <= 0.69 h^2``; for a
    third-order operator ``dt <= c h^3`` with ``c = 2.78 / (max|a| S_3)``.
    Flows that are ill-posed forward in time (backward diffusion) amplify
    round-off by up to ``|R(2.78)| ~ 14`` per step even under this bound, so
    keep their horizons short.

    ``boundary(t)`` optionally returns values (shape of ``psi0.values``)
    whose outermost spatial nodes are imposed as Dirichlet data in every
    stage; without it the one-sided closures leave parabolic problems
    under-determined over long horizons.
    """
    grid = psi0.grid
    if grid.evolution_axes:
        raise ShapeError("initial data must live on a purely spatial grid")
    op = formal_adjoint(L).scaled(-1) if adjoint else L
    dt = t_axis.spacing / substeps
    rho = max(_spectral_radius(op, grid, accuracy, {"t": t}) for t in (t_axis.lower, t_axis.upper))
    if dt * rho > RK4_LIMIT:
        raise StabilityError(
            f"time step {dt:.3e} exceeds the RK4 bound {RK4_LIMIT / rho:.3e} "
            f"(spectral radius {rho:.3e}); use at least {int(np.ceil(dt * rho / RK4_LIMIT)) * substeps} substeps")

    edge = np.zeros(grid.shape, dtype=bool)
    for k in range(grid.ndim):
        sl = [slice(None)] * grid.ndim
        sl[k] = [0, -1]
        edge[tuple(sl)] = True

    def clamp(t, v):
        if boundary is None:
            return v
        v = v.copy()
        v[edge] = np.asarray(boundary(t), dtype=complex).reshape(v.shape)[edge]
        return v

    def rhs(t, v):
        return apply_op(op, GridFunction(grid, clamp(t, v)), fixed={"t": t}, accuracy=accuracy).values

    out = np.empty((t_axis.count,) + psi0.values.shape, dtype=complex)
    v = clamp(t_axis.lower, psi0.values.copy())
    out[0] = v
    t = t_axis.lower
    for n in range(1, t_axis.count):
        for _ in range(substeps):
            k1 = rhs(t, v)
            k2 = rhs(t + dt / 2, v + dt / 2 * k1)
            k3 = rhs(t + dt / 2, v + dt / 2 * k2)
            k4 = rhs(t + dt, v + dt * k3)
            v = clamp(t + dt, v + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
            t += dt
        if not np.all(np.isfinite(v)):
            raise StabilityError(f"solution overflowed at t = {t:.6g}")
        out[n] = v
    return GridFunction(_tx_grid(t_axis, grid), out)


# ---------------------------------------------------------------------------
# cycle matrices

@dataclass(frozen=True)
class CycleMatrix:
    """``K x K`` cycle matrix attached to the point ``point``."""

    matrix: np.ndarray
    point: dict


def _point_label(grid: Grid, idx) -> str:
    return ", ".join(f"{a.name}={a.nodes[i]:.6g}" for a, i in zip(grid.axes, idx))


def cycle_matrix_field(family: SpectralFamily) -> np.ndarray:
    """``Omega(x)`` at every node, shape ``grid.shape + (K, K)``.

    A transformed family carries its cycle matrix explicitly (see
    :func:`transformed_family`); otherwise the matrix is integrated.
    """
    if family.cycle is not None:
        return family.cycle
    grid = family.grid
    K = len(family)
    dens = np.einsum("...nk,...nl->...kl", family.Phi.conj(), family.Psi)
    dens = dens * (family.measure_sign * family.weights)[:, None]
    start = family.x0_index
    for k, a in enumerate(grid.axes):
        dens = cumtrapz(dens, a.spacing, axis=k, start=start[k])
    return dens + np.eye(K)


def _cancellation_scale(family: SpectralFamily):
    """Magnitude against which singularity of ``Omega`` is judged, per node.

    An integrated cycle matrix ``I + int W Phi^H Psi`` can only lose rank by
    cancellation, so its smallest singular value is compared with
    ``1 + int |W Phi^H Psi|``. A stored cycle matrix has no such
    cancellation and is judged relative to its own largest singular value.
    """
    if family.cycle is not None or not family.entries:
        return 0.0
    grid = family.grid
    dens = np.einsum("...nk,...nl->...kl", family.Phi.conj(), family.Psi)
    mag = np.linalg.norm(dens, ord=2, axis=(-2, -1)) * np.abs(family.weights)
    start = family.x0_index
    for k, a in enumerate(grid.axes):
        mag = cumtrapz(mag, a.spacing, axis=k, start=start[k])
    return 1.0 + np.abs(mag)


def _singular_nodes(Om: np.ndarray, scale, rtol: float = 1e-12):
    s = np.linalg.svd(Om, compute_uv=False)
    return s, s[..., -1] < rtol * np.maximum(s[..., 0], scale)


def _checked_inverse(Om: np.ndarray, grid: Grid, scale=0.0, rtol: float = 1e-12) -> np.ndarray:
    if Om.shape[-1] == 0:
        return Om.copy()
    s, bad = _singular_nodes(Om, scale, rtol)
    if np.any(bad):
        idx = tuple(int(i[0]) for i in np.nonzero(bad))
        raise SingularCycleMatrixError(
            f"cycle matrix singular at {_point_label(grid, idx)}: "
            f"smallest singular value {s[idx][-1]:.3e}", pivot=float(s[idx][-1]))
    return np.linalg.inv(Om)


def cycle_matrix(family: SpectralFamily, x) -> CycleMatrix:
    """Cycle matrix at the node ``x`` (a number for ``m = 1`` or a name->value dict)."""
    grid = family.grid
    if not isinstance(x, dict):
        x = dict(zip(grid.spatial_axes, np.atleast_1d(np.asarray(x, dtype=float)).tolist()))
    idx = tuple(grid.axis(n).index_of(x[n]) for n in grid.names)
    Om = cycle_matrix_field(family)[idx]
    if Om.size:
        scale = _cancellation_scale(family)
        s, bad = _singular_nodes(Om, np.asarray(scale)[idx] if np.ndim(scale) else scale)
        if bad:
            raise SingularCycleMatrixError(
                f"cycle matrix singular at {_point_label(grid, idx)}: smallest singular value {s[-1]:.3e}",
                pivot=float(s[-1]))
    return CycleMatrix(Om, dict(x))


@dataclass(frozen=True)
class HomotopyReport:
    distances: np.ndarray
    gaps: np.ndarray
    constant: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.gaps <= self.constant * self.distances * (1 + 1e-12) + 1e-15))


def homotopy_check(family: SpectralFamily, n_points: int = 20, seed: int = 0) -> HomotopyReport:
    """Lipschitz bound ``|Omega(x) - Omega(x0)| <= C |x - x0|`` at sampled nodes (m = 1).

    ``C`` is the sup of the integrand's spectral norm along the grid.
    """
    if family.m != 1:
        raise ShapeError("homotopy check is implemented for one spatial dimension")
    grid = family.grid
    Om = cycle_matrix_field(family)
    dens = np.einsum("...nk,...nl->...kl", family.Phi.conj(), family.Psi) * family.weights[:, None]
    C = float(np.max(np.linalg.norm(dens, ord=2, axis=(-2, -1)), initial=0.0)) if len(family) else 0.0
    rng = np.random.default_rng(seed)
    i0 = family.x0_index[0]
    n = grid.shape[0]
    idx = np.sort(rng.choice([i for i in range(n) if i != i0], size=min(n_points, n - 1), replace=False))
    h = grid.axes[0].spacing
    dist = np.abs(idx - i0) * h
    gaps = np.array([np.linalg.norm(Om[i] - Om[i0], 2) if len(family) else 0.0 for i in idx])
    return HomotopyReport(dist, gaps, C)


# ---------------------------------------------------------------------------
# dressing

def transformed_family(family: SpectralFamily, requadrature: bool = False) -> SpectralFamily:
    """``Psi~ = Psi Omega^-1`` and ``Phi~ = Phi W Omega^-H W^-1`` at every node.

    The result carries the opposite measure sign. Its cycle matrix
    ``I - int W Phi~^H Psi~`` equals ``Omega^-1`` identically (both solve the
    same ODE with value ``I`` at ``x0``), and is stored in that form: for
    exponentially growing seeds the integral is ``1 - (1 - 1/tau)`` and loses
    every digit once ``1/tau`` drops below machine precision. Pass
    ``requadrature=True`` to integrate it instead.
    """
    if not family.entries:
        return replace(family, measure_sign=-family.measure_sign)
    grid = family.grid
    Oinv = _checked_inverse(cycle_matrix_field(family), grid, _cancellation_scale(family))
    W = family.weights
    Psi_t = np.einsum("...nk,...kl->...nl", family.Psi, Oinv)
    Phi_t = np.einsum("...nk,...lk->...nl", family.Phi * W, Oinv.conj()) / W
    entries = tuple(replace(e, psi=GridFunction(grid, Psi_t[..., k]), phi=GridFunction(grid, Phi_t[..., k]),
                            label=(e.label + "~") if e.label else "")
                    for k, e in enumerate(family.entries))
    return replace(family, entries=entries, measure_sign=-family.measure_sign,
                   cycle=None if requadrature else Oinv)


@dataclass(frozen=True)
class TransmutationKernel:
    """Separable Volterra kernel ``K(x, y) = A(x) B(y)``.

    ``A`` has shape ``grid.shape + (N, K)`` and ``B`` ``grid.shape + (K, N)``.
    """

    grid: Grid
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    x0_index: tuple

    @property
    def rank(self) -> int:
        return self.A.shape[-1]

    def at(self, ix, iy) -> np.ndarray:
        """``K(x, y)`` for node indices ``ix``, ``iy`` (tuples for m > 1)."""
        ix, iy = np.atleast_1d(ix), np.atleast_1d(iy)
        return self.A[tuple(ix)] @ self.B[tuple(iy)]

    def diagonal(self) -> np.ndarray:
        """``K(x, x)``, shape ``grid.shape + (N, N)``."""
        return np.einsum("...nk,...kp->...np", self.A, self.B)

    def window(self, lower: float, upper: float) -> GridFunction:
        """Samples ``K(x, y)`` on the square ``[lower, upper]^2`` (m = 1).

        The result lives on a 2-axis grid ``("x", "s")`` where ``s`` carries
        the second argument.
        """
        if self.grid.ndim != 1:
            raise ShapeError("kernel windows are implemented for one spatial dimension")
        ax = self.grid.axes[0]
        i0, i1 = ax.index_of(lower), ax.index_of(upper)
        sub = Axis("x", ax.nodes[i0], ax.nodes[i1], i1 - i0 + 1)
        g2 = Grid((sub, Axis("s", sub.lower, sub.upper, sub.count)))
        vals = np.einsum("xnk,skp->xsnp", self.A[i0:i1 + 1], self.B[i0:i1 + 1])
        return GridFunction(g2, vals)

    def to_csv(self, path, lower: float | None = None, upper: float | None = None, stride: int = 1):
        """Write ``x, y, re K_ij, im K_ij`` for Volterra pairs (y between x0 and x)."""
        if self.grid.ndim != 1:
            raise ShapeError("kernel export is implemented for one spatial dimension")
        ax = self.grid.axes[0]
        lo = ax.index_of(ax.lower if lower is None else lower)
        hi = ax.index_of(ax.upper if upper is None else upper)
        nodes = ax.nodes
        i0 = self.x0_index[0]
        N = self.A.shape[-2]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y"] + [f"{p}_K{i}{j}" for i in range(N) for j in range(N) for p in ("re", "im")])
        for ix in range(lo, hi + 1, stride):
            a, b = sorted((i0, ix))
            for iy in range(max(a, lo), min(b, hi) + 1, stride):
                k = self.A[ix] @ self.B[iy]
                w.writerow([repr(float(nodes[ix])), repr(float(nodes[iy]))]
                           + [repr(float(z)) for v in k.ravel() for z in (v.real, v.imag)])
        Path(path).write_text(buf.getvalue())


def build_kernel(family: SpectralFamily) -> TransmutationKernel:
    """``K(x, y) = -s Psi~(x) Omega(x0)^-1 W Phi^H(y)`` with ``Omega(x0) = I``."""
    tilde = transformed_family(family, requadrature=True) if family.cycle is None \
        else transformed_family(family)
    A = -family.measure_sign * tilde.Psi
    B = np.swapaxes(family.Phi.conj(), -1, -2) * family.weights[:, None]
    return TransmutationKernel(family.grid, A, B, family.x0_index)


@dataclass(frozen=True)
class DelsarteOperator:
    """``f -> f + int_{x0}^{x} K(x, y) f(y) dy`` (rectangle from ``x0`` when m > 1).

    An operator built from a transformed family (``direction == "inverse"``)
    also keeps the forward kernel it undoes, in ``forward``, so that the
    inverse can be evaluated consistently with the forward quadrature.
    """

    kernel: TransmutationKernel
    direction: str = "forward"
    forward: TransmutationKernel | None = field(default=None, repr=False)

    @property
    def grid(self) -> Grid:
        return self.kernel.grid

    def __call__(self, f: GridFunction) -> GridFunction:
        if self.direction == "inverse":
            return apply_inverse(self, f)
        return apply_delsarte(self, f)


def build_delsarte(family: SpectralFamily) -> DelsarteOperator:
    """Delsarte operator of ``family``; for a tilde family this is the inverse map."""
    kern = build_kernel(family)
    if family.measure_sign > 0:
        return DelsarteOperator(kern, "forward")
    forward = None
    if family.cycle is not None and len(family):
        # seed data recovered from the tilde family: Psi~ and W Phi^H = Omega W Phi~^H
        Om = np.linalg.inv(family.cycle)
        W = family.weights
        A = family.measure_sign * family.Psi
        B = np.einsum("...kl,...ln->...kn", Om, np.swapaxes(family.Phi.conj(), -1, -2) * W[:, None])
        forward = TransmutationKernel(family.grid, A, B, family.x0_index)
    return DelsarteOperator(kern, "inverse", forward)


def apply_delsarte(Om: DelsarteOperator, f: GridFunction) -> GridFunction:
    """Trapezoidal Volterra action of ``Om`` on ``f``."""
    return _volterra_apply(Om.kernel, f)


def _volterra_apply(k: TransmutationKernel, f: GridFunction) -> GridFunction:
    if f.grid != k.grid:
        raise ShapeError("function and kernel live on different grids")
    if f.is_matrix or f.channels != k.A.shape[-2]:
        raise ShapeError(f"kernel acts on {k.A.shape[-2]} channels, got {f.values.shape[f.grid.ndim:]}")
    if k.rank == 0:
        return f
    g = np.einsum("...kn,...n->...k", k.B, f.values)
    for ax, a in enumerate(k.grid.axes):
        g = cumtrapz(g, a.spacing, axis=ax, start=k.x0_index[ax])
    return GridFunction(f.grid, f.values + np.einsum("...nk,...k->...n", k.A, g))


def _volterra_solve(k: TransmutationKernel, g: GridFunction) -> GridFunction:
    """Solve ``f + int_{x0}^{x} A(x) B(y) f(y) dy = g`` with the trapezoid rule (m = 1).

    Marches away from ``x0`` in both directions; the running moment
    ``s = int B f`` obeys ``(I + h/2 B_i A_i) s_i = s_prev + h/2 (B_prev f_prev + B_i g_i)``
    (with ``h`` signed by the marching direction).
    """
    if g.grid != k.grid:
        raise ShapeError("function and kernel live on different grids")
    A, B, gv = k.A, k.B, g.values
    n = gv.shape[0]
    Kr = k.rank
    f = gv.copy()
    i0 = k.x0_index[0]
    h0 = k.grid.axes[0].spacing
    eye = np.eye(Kr)
    for step, stop in ((1, n), (-1, -1)):
        h = step * h0
        s = np.zeros(Kr, dtype=complex)
        prev = B[i0] @ f[i0]
        for i in range(i0 + step, stop, step):
            M = eye + (h / 2) * (B[i] @ A[i])
            s = np.linalg.solve(M, s + (h / 2) * (prev + B[i] @ gv[i]))
            f[i] = gv[i] - A[i] @ s
            prev = B[i] @ f[i]
    return GridFunction(g.grid, f)


def apply_inverse(tilde_op, f: GridFunction, method: str = "volterra") -> GridFunction:
    """Inverse transmutation built from the transformed family.

    ``tilde_op`` is the :class:`DelsarteOperator` of
    ``transformed_family(family)`` (or that family itself). Two evaluations
    of the same continuum operator ``f + Psi(x) int Phi~^H W f``:

    ``"quadrature"``
        trapezoid applied to the tilde kernel directly;
    ``"volterra"``
        the equivalent second-kind Volterra equation for the forward kernel,
        marched with the trapezoid rule. This is the exact inverse of
        :func:`apply_delsarte` up to round-off, which matters when the
        inverse kernel grows like ``exp(kappa (x - y))`` across the box and
        would amplify the O(h^2) mismatch between two independent
        quadratures. Requires m = 1; falls back to quadrature otherwise.
    """
    if isinstance(tilde_op, SpectralFamily):
        tilde_op = build_delsarte(tilde_op)
    if method not in ("volterra", "quadrature"):
        raise ValueError(f"unknown inverse method {method!r}")
    if method == "volterra" and tilde_op.forward is not None and tilde_op.grid.ndim == 1:
        return _volterra_solve(tilde_op.forward, f)
    return _volterra_apply(tilde_op.kernel, f)


# ---------------------------------------------------------------------------
# transformed Schroedinger potential

@dataclass(frozen=True)
class PotentialPair:
    """Dressed potential by the trace formula and by the eigen-ratio route."""

    grid: Grid
    kernel_route: np.ndarray = field(repr=False)
    ratio_route: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)

    @property
    def masked_nodes(self) -> int:
        return int(np.count_nonzero(self.mask))

    def discrepancy(self, interior: int = 2) -> float:
        """Max ``|u_K - u_psi|`` over unmasked interior nodes."""
        d = np.abs(self.kernel_route - self.ratio_route)
        d = np.where(self.mask, 0.0, d)
        return float(np.max(trim(d, self.grid.ndim, interior), initial=0.0))


def _potential_values(u, grid: Grid) -> np.ndarray:
    if u is None:
        return np.zeros(grid.shape, dtype=complex)
    if isinstance(u, GridFunction):
        return u.values.reshape(grid.shape)
    if isinstance(u, (str, int, float, complex)):
        fn = _expr.lambdify(_expr.parse(u, 1), 1)
        return np.broadcast_to(fn({"x": grid.coords("x")}), grid.shape).astype(complex)
    if hasattr(u, "sample"):
        return u.sample(grid)[..., 0, 0]
    return np.asarray(u, dtype=complex).reshape(grid.shape)


def _zero_mask(psi: np.ndarray, radius: int, rel: float = 1e-10) -> np.ndarray:
    a = np.abs(psi)
    near = a <= rel * a.max(initial=0.0)
    if np.all(np.abs(psi.imag) <= 1e-12 * a.max(initial=1.0)):
        flip = np.signbit(psi.real[1:]) != np.signbit(psi.real[:-1])
        near[1:] |= flip
        near[:-1] |= flip
    out = near.copy()
    for s in range(1, radius + 1):
        out[s:] |= near[:-s]
        out[:-s] |= near[s:]
    return out


def transformed_potential_schrodinger(family: SpectralFamily, u=None, entry: int = 0,
                                      exclusion: int = 3, accuracy: int = 2) -> PotentialPair:
    """Dressed potential of ``L = -d^2 + u`` (scalar, m = 1) by two routes.

    * trace route ``u~ = u + 2 d/dx K(x, x)``. With the kernel normalised as
      ``K = -Psi~ W Phi^H`` this is ``u - 2 (log det Omega)''``;
    * eigen-ratio route ``u~ = lambda + psi~'' / psi~`` using the chosen
      transformed eigenfunction; nodes within ``exclusion`` cells of a zero of
      ``psi~`` are masked (and set to NaN in ``ratio_route``).
    """
    grid = family.grid
    if family.m != 1 or family.channels != 1:
        raise ShapeError("the Schroedinger potential routes need m = 1 and one channel")
    u0 = _potential_values(u, grid)
    if not family.entries:
        return PotentialPair(grid, u0.copy(), u0.copy(), np.zeros(grid.shape, bool))
    kern = build_kernel(family)
    kd = kern.diagonal()[..., 0, 0]
    uK = u0 + 2 * fd_partial(kd, "x", 1, accuracy, grid=grid)
    psi_t = kern.A[..., 0, entry] * (-family.measure_sign)
    mask = _zero_mask(psi_t, exclusion)
    lam = family.entries[entry].eigenvalue
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = lam + fd_partial(psi_t, "x", 2, accuracy, grid=grid) / psi_t
    ratio = np.where(mask, np.nan, ratio)
    return PotentialPair(grid, uK, ratio, mask)


def transformed_schrodinger(family: SpectralFamily, u=None, accuracy: int = 2) -> DifferentialExpression:
    """``L~ = -d^2 + u~`` with ``u~`` from the trace route."""
    pair = transformed_potential_schrodinger(family, u, accuracy=accuracy)
    return schrodinger(GridFunction(family.grid, pair.kernel_route[..., None]))


# ---------------------------------------------------------------------------
# verification batteries

def test_battery(grid: Grid, count: int = 8, seed: int = 0, channels: int = 1) -> list[GridFunction]:
    """Gaussians and modulated Gaussians centred in the middle of the box (m = 1)."""
    ax = grid.axes[0]
    span = ax.upper - ax.lower
    mid = 0.5 * (ax.lower + ax.upper)
    rng = np.random.default_rng(seed)
    x = grid.coords(ax.name)
    out = []
    for k in range(count):
        c = mid + rng.uniform(-0.15, 0.15) * span
        s = span / 40 * rng.uniform(0.6, 1.5)
        freq = 0.0 if k % 2 == 0 else rng.uniform(0.5, 3.0) / s
        vals = np.stack([np.exp(-((x - c) / s) ** 2 / 2) * np.exp(1j * freq * (x - c)) *
                         (1 + 0.5 * j) for j in range(channels)], axis=-1)
        out.append(GridFunction(grid, vals))
    return out


def _as_action(T):
    if isinstance(T, DifferentialExpression):
        return lambda f: apply_op(T, f)
    if isinstance(T, DelsarteOperator):
        return lambda f: apply_delsarte(T, f)
    return T


def intertwining_residual(L, Lt, Om, battery) -> float:
    """``max_f |Om(L f) - L~(Om f)| / |f|`` over the battery (grid L2 norms)."""
    L, Lt, Om = _as_action(L), _as_action(Lt), _as_action(Om)
    worst = 0.0
    for f in battery:
        r = Om(L(f)) - Lt(Om(f))
        worst = max(worst, norm(r) / norm(f))
    return worst


def restrict_operator(L: DifferentialExpression, grid: Grid) -> DifferentialExpression:
    """Re-sample tabulated coefficients of ``L`` onto a node-aligned sub-box ``grid``."""
    terms = []
    for alpha, c in L.terms:
        if isinstance(c, SampledCoefficient):
            own = c.field.grid
            sl = []
            for a in own.axes:
                if grid.has_axis(a.name):
                    ta = grid.axis(a.name)
                    i0 = a.index_of(ta.lower)
                    sl.append(slice(i0, i0 + ta.count))
                else:
                    sl.append(slice(None))
            sub = Grid(tuple(grid.axis(a.name) if grid.has_axis(a.name) else a for a in own.axes))
            c = SampledCoefficient(GridFunction(sub, c.field.values[tuple(sl)]), c.m, c.accuracy)
        terms.append((alpha, c))
    return DifferentialExpression(L.m, L.channels, terms)


def kernel_pde_residual(Lt: DifferentialExpression, L: DifferentialExpression, K,
                        window: tuple[float, float] | None = None, accuracy: int = 2,
                        interior: int | None = None, volterra: bool = True) -> float:
    """Sup over the window of ``conj(L~)_x conj(K) - (L*_y conj(K)^T)^T``.

    ``K`` is a :class:`TransmutationKernel` (sampled on ``window``) or matrix
    samples on a ``("x", "s")`` grid. With ``volterra`` only pairs with ``s``
    between ``x0`` and ``x`` count; ``x0`` is taken to lie left of the window.
    """
    if isinstance(K, TransmutationKernel):
        ax = K.grid.axes[0]
        lo, hi = window if window is not None else (ax.lower, ax.upper)
        K = K.window(lo, hi)
    g2 = K.grid
    r = stencil_reach(max(Lt.order, L.order, 1), accuracy)
    interior = r if interior is None else interior
    if min(g2.shape) < 2 * interior + 3:
        raise InsufficientSupportError(
            f"kernel window has {min(g2.shape)} nodes per axis; need {2 * interior + 3}")
    Ltx = restrict_operator(Lt, g2)
    Ls = restrict_operator(formal_adjoint(L), g2.subgrid(["s"]).replace_axis(
        "s", Axis("x", g2.axis("s").lower, g2.axis("s").upper, g2.axis("s").count)))
    vals = K.values
    N = vals.shape[-1]
    lhs = np.empty_like(vals)
    rhs_t = np.empty_like(vals)
    KbT = np.swapaxes(vals.conj(), -1, -2)
    for j in range(N):
        # conj(L~) conj(K) = conj(L~ K): stencil weights are real
        lhs[..., :, j] = apply_op(Ltx, GridFunction(g2, vals[..., :, j]), accuracy=accuracy).values.conj()
        rhs_t[..., :, j] = apply_op(Ls, GridFunction(g2, KbT[..., :, j]), axis_map={"x": "s"},
                                    accuracy=accuracy).values
    res = np.linalg.norm(lhs - np.swapaxes(rhs_t, -1, -2), axis=(-2, -1))
    if volterra:
        x, s = g2.coords("x"), g2.coords("s")
        res = np.where(s <= x + 1e-12, res, 0.0)
    return float(np.max(trim(res, 2, interior), initial=0.0))


def bump(grid: Grid, centre: float, radius: float, channels: int = 1) -> GridFunction:
    """C-infinity bump ``exp(1 - 1/(1 - r^2))`` (peak 1) supported on ``|x - centre| < radius``."""
    x = grid.coords(grid.axes[0].name)
    r2 = ((x - centre) / radius) ** 2
    with np.errstate(divide="ignore", over="ignore"):
        v = np.where(r2 < 1, np.exp(1 - 1 / np.where(r2 < 1, 1 - r2, 1.0)), 0.0)
    return GridFunction(grid, np.repeat(v[..., None], channels, axis=-1))


def locality_check(T, grid: Grid, separation: float, centre: float = 0.0, radius: float = 1.0,
                   min_cells: int = 4, channels: int = 1) -> float:
    """``max |pairing(h, T f)|`` over bump pairs whose supports are ``separation`` apart.

    The battery has the test bump ``h`` on either side of ``f`` and three
    radii; a purely differential ``T`` gives exactly zero once the gap
    exceeds its stencil reach.
    """
    hx = grid.axes[0].spacing
    if separation < min_cells * hx:
        raise InvalidSeparationError(
            f"separation {separation:.3g} is below {min_cells} cells ({min_cells * hx:.3g})")
    act = _as_action(T)
    worst = 0.0
    for rad in (radius, 0.75 * radius, 0.5 * radius):
        off = rad + separation / 2
        for sgn in (1, -1):
            f = bump(grid, centre - sgn * off, rad, channels)
            h = bump(grid, centre + sgn * off, rad, channels)
            worst = max(worst, abs(pairing(h, act(f))))
    return worst


# ---------------------------------------------------------------------------
# time-extended dressing (Proposition-3.1 setting)

@dataclass(frozen=True)
class DressedEvolution:
    """Seed and transformed families over ``(t; x)`` with the dressed potential."""

    grid: Grid
    psi: list
    phi: list
    psi_tilde: list
    phi_tilde: list
    omega: np.ndarray = field(repr=False)
    potential: np.ndarray = field(repr=False)

    def operator(self, flip: bool = False, seed_potential=None) -> DifferentialExpression:
        """``L~ = -d^2 + u~(t, x)``; ``flip`` reverses the dressing correction."""
        u = self.potential
        if flip:
            base = np.zeros_like(u) if seed_potential is None else seed_potential
            u = 2 * base - u
        return schrodinger(GridFunction(self.grid, u[..., None, None]))


def dress_extension(ops, psis, phis, weights, base_index, u=None, measure_sign: int = 1,
                    accuracy: int = 2) -> DressedEvolution:
    """Dress evolution-extended spectral data over ``(evolution axes...; x)`` (m = 1).

    ``ops`` holds one :class:`EvolutionOperator` per evolution axis of the
    grid. The cycle matrix at a node integrates the closed 1-form of each
    pair ``(phi_a, psi_b)`` along the staircase from ``base_index`` that
    moves the evolution axes in grid order and ``x`` last; the
    ``d(axis)`` component of the form is ``-sign * Z_1`` of that axis's
    operator and the ``dx`` component is ``-conj(phi)^T psi``.
    The dressed potential ``u~ = u + 2 d/dx K(x, x)`` assumes ``L = -d^2 + u``.
    """
    if not psis:
        raise ShapeError("empty spectral data")
    g = psis[0].grid
    xname = g.spatial_axes[-1]
    if len(g.spatial_axes) != 1:
        raise ShapeError("extended dressing is implemented for one spatial dimension")
    by_axis = {o.axis: o for o in ops}
    evo = [n for n in g.names if n != xname]
    if set(evo) != set(by_axis):
        raise ShapeError(f"need one operator per evolution axis {evo}, got {sorted(by_axis)}")
    K = len(psis)
    W = np.asarray(weights, dtype=float)
    base = tuple(base_index)
    ix = g.axis_index(xname)
    Om = np.zeros(g.shape + (K, K), dtype=complex)
    for a in range(K):
        for b in range(K):
            total = np.zeros(g.shape, dtype=complex)
            for name in evo + [xname]:
                k = g.axis_index(name)
                if name == xname:
                    comp = -inner_density(phis[a], psis[b])
                else:
                    op = by_axis[name]
                    comp = -op.sign * concomitant_flux(op.spatial, phis[a], psis[b], 1, accuracy=accuracy)
                sl = tuple(slice(base[j], base[j] + 1) if j > k else slice(None) for j in range(g.ndim))
                leg = cumtrapz(comp[sl], g.axes[k].spacing, axis=k, start=base[k])
                total = total + leg
            Om[..., a, b] = -measure_sign * W[a] * total
    Om += np.eye(K)
    Oinv = _checked_inverse(Om, g, 1.0)
    Psi = np.stack([p.values for p in psis], axis=-1)
    Phi = np.stack([p.values for p in phis], axis=-1)
    Psi_t = np.einsum("...nk,...kl->...nl", Psi, Oinv)
    Phi_t = np.einsum("...nk,...lk->...nl", Phi * W, Oinv.conj()) / W
    kd = -measure_sign * np.einsum("...nk,...pk->...np", Psi_t, Phi.conj() * W)[..., 0, 0]
    u0 = 0.0 if u is None else np.asarray(u, dtype=complex)
    ut = u0 + 2 * fd_partial(kd, xname, 1, accuracy, grid=g)
    return DressedEvolution(g, list(psis), list(phis),
                            [GridFunction(g, Psi_t[..., k]) for k in range(K)],
                            [GridFunction(g, Phi_t[..., k]) for k in range(K)], Om,
                            np.broadcast_to(ut, g.shape).copy())


def dress_separable(L: DifferentialExpression, family: SpectralFamily, t_axis: Axis,
                    u=None, accuracy: int = 2, validate: bool = True) -> DressedEvolution:
    """Dress the separable extension of ``family`` over ``(t; x)`` (m = 1).

    Cross entries with different eigenvalues pick up their ``t``-dependence
    from the ``dt`` leg of the staircase ``(t0, x0) -> (t, x0) -> (t, x)``.
    The potential ``u~ = u + 2 d/dx K(t; x, x)`` assumes ``L = -d^2 + u``.
    """
    if family.m != 1:
        raise ShapeError("time-extended dressing is implemented for one spatial dimension")
    psis, phis = separable_solutions(L, family, t_axis, validate)
    it0 = int(np.argmin(np.abs(t_axis.nodes - family.t0)))
    u0 = None if u is None else _potential_values(u, family.grid)[None, :]
    return dress_extension([EvolutionOperator(L, t_axis.name, 1)], psis, phis, family.weights,
                           (it0, family.x0_index[0]), u0, family.measure_sign, accuracy)


def prop31_residual(Lt: DifferentialExpression, psi_tilde, phi_tilde, t_name: str = "t",
                    accuracy: int = 2, time_accuracy: int = 4, interior: int = 3) -> float:
    """Max relative residual of ``psi~_t = L~ psi~`` and ``phi~_t = -L~* phi~``.

    Time derivatives use ``time_accuracy`` (4 by default) so the budget is
    ``C (h^2 + dt^4)``.
    """
    op = EvolutionOperator(Lt, t_name, 1)
    adj = op.adjoint()
    worst = 0.0
    for f in psi_tilde:
        r = _evolution_residual(op, f, accuracy, time_accuracy)
        worst = max(worst, _rel(r, f, interior))
    for f in phi_tilde:
        r = _evolution_residual(adj, f, accuracy, time_accuracy)
        worst = max(worst, _rel(r, f, interior))
    return worst


def _evolution_residual(op: EvolutionOperator, f: GridFunction, accuracy, time_accuracy):
    dt = fd_partial(f, op.axis, 1, accuracy=time_accuracy)
    return dt * op.sign - apply_op(op.spatial, f, accuracy=accuracy)
