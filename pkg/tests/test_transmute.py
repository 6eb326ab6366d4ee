import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delsarte import transmute as tm
from delsarte.diffop import DifferentialExpression, EvolutionOperator, apply_op, evolution_apply
from delsarte.numgrid import Axis, GridFunction, make_uniform_grid, norm, trim


def line(lo, hi, n):
    return make_uniform_grid([("x", lo, hi, n)])


def fn(grid, values):
    return GridFunction(grid, np.asarray(values, dtype=complex)[..., None])


G256 = line(-20, 20, 10241)
G64 = line(-20, 20, 2561)


@pytest.fixture(scope="module")
def gaussian():
    L, fam = tm.gaussian_family(G256)
    return L, fam, tm.build_delsarte(fam), tm.transformed_schrodinger(fam, "x**2")


@pytest.fixture(scope="module")
def cosh():
    L, fam = tm.cosh_family(G256)
    return L, fam, tm.build_delsarte(fam), tm.transformed_schrodinger(fam, "0")


def empty_family(grid):
    return tm.SpectralFamily(grid, (), {"x": grid.axis("x").lower})


# ---------------------------------------------------------------- families

def test_family_validation_catches_stale_entries():
    L, fam = tm.gaussian_family(G64)
    fam.validate(L)
    with pytest.raises(tm.StaleFamilyError):
        fam.validate(tm.schrodinger("x**2 + 1"))


def test_load_family(tmp_path):
    spec = {"x0": -20.0, "entries": [{"lambda": [-1, 0], "weight": 0.5, "psi": "cosh(x + 20)"}]}
    p = tmp_path / "fam.json"
    p.write_text(json.dumps(spec))
    fam = tm.load_family(p, G64)
    x = G64.coords("x")
    assert len(fam) == 1 and fam.weights[0] == 0.5 and fam.eigenvalues[0] == -1
    assert np.allclose(fam.entries[0].psi.values[:, 0], np.cosh(x + 20))
    fam.validate(tm.schrodinger("0"))


def test_load_family_missing_field():
    with pytest.raises(ValueError):
        tm.load_family({"entries": []}, G64)


def test_nonpositive_weight_rejected():
    f = fn(G64, np.ones(G64.shape))
    with pytest.raises(ValueError):
        tm.SpectralDatum(1.0, f, f, 0.0)


# ---------------------------------------------------------------- time extension

def test_zero_eigenvalue_is_time_constant():
    g = line(-1, 1, 41)
    f = fn(g, g.coords("x"))
    fam = tm.SpectralFamily(g, (tm.SpectralDatum(0.0, f, f),), {"x": -1.0})
    psis, phis = tm.separable_solutions(DifferentialExpression(1, 1, {(2,): 1}), fam,
                                        Axis("t", 0, 1, 5, "evolution"))
    assert np.array_equal(psis[0].values[3], f.values)


def test_separable_extension_solves_evolution():
    g = line(-4, 4, 401)
    L = tm.schrodinger("0")
    psi = fn(g, np.cosh(g.coords("x")))
    fam = tm.SpectralFamily(g, (tm.SpectralDatum(-1.0, psi, psi),), {"x": -4.0})
    psis, phis = tm.separable_solutions(L, fam, Axis("t", 0, 0.5, 51, "evolution"))
    op = EvolutionOperator(L, "t", 1)
    r = evolution_apply(op, psis[0])
    h = 8 / 400
    assert np.max(np.abs(trim(r.values, 2, 1))) / np.max(np.abs(psis[0].values)) <= 5 * (h ** 2 + 0.01 ** 2)
    ra = evolution_apply(op.adjoint(), phis[0])
    assert np.max(np.abs(trim(ra.values, 2, 1))) / np.max(np.abs(phis[0].values)) <= 5 * (h ** 2 + 0.01 ** 2)


HEAT = DifferentialExpression(1, 1, {(2,): 1})


def test_propagate_frozen_flow():
    g = line(-1, 1, 21)
    f = fn(g, np.exp(g.coords("x")))
    out = tm.propagate(DifferentialExpression.zero(), f, Axis("t", 0, 1, 11, "evolution"))
    assert np.array_equal(out.values[-1], f.values)


def test_propagate_matches_separable_solution():
    errs = []
    for n, nt in ((41, 81), (81, 321)):
        g = line(-1, 1, n)
        x = g.coords("x")
        t_axis = Axis("t", 0, 0.2, nt, "evolution")
        # forward heat flow: cosh(x) is an eigenfunction of d^2 with eigenvalue 1
        exact = lambda t: np.exp(t) * np.cosh(x)  # noqa: E731
        out = tm.propagate(HEAT, fn(g, np.cosh(x)), t_axis, substeps=4,
                           boundary=lambda t: exact(t)[:, None])
        errs.append(np.max(np.abs(out.values[-1, :, 0] - exact(0.2))))
    assert errs[1] <= errs[0] / 3.5


def test_propagate_is_linear():
    g = line(-1, 1, 41)
    x = g.coords("x")
    ta = Axis("t", 0, 0.05, 21, "evolution")
    L = HEAT
    a, b = fn(g, np.cos(x)), fn(g, np.exp(-x ** 2))
    lhs = tm.propagate(L, a * 2 + b, ta, substeps=2).values
    rhs = 2 * tm.propagate(L, a, ta, substeps=2).values + tm.propagate(L, b, ta, substeps=2).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * np.max(np.abs(lhs))


def test_propagate_refuses_unstable_step():
    g = line(-1, 1, 201)
    with pytest.raises(tm.StabilityError):
        tm.propagate(tm.schrodinger("0"), fn(g, np.cos(g.coords("x"))), Axis("t", 0, 1, 3, "evolution"))


# ---------------------------------------------------------------- cycle matrices

def test_identity_at_base_point():
    _, fam = tm.gaussian_family(G64)
    assert np.array_equal(tm.cycle_matrix(fam, -20.0).matrix, np.eye(1))


def test_gaussian_cycle_matrix():
    _, fam = tm.gaussian_family(line(-10, 10, 2001))
    assert abs(tm.cycle_matrix(fam, 0.0).matrix[0, 0] - (1 + np.sqrt(np.pi) / 2)) <= 1e-4


def test_homotopy_lipschitz_bound():
    _, fam = tm.cosh_family(G64)
    report = tm.homotopy_check(fam, n_points=20)
    assert len(report.distances) == 20 and report.passed


def test_singular_cycle_matrix_names_point():
    g = line(-2, 2, 41)
    f = fn(g, np.ones(41))
    # negative measure sign makes Omega = 1 - (x + 2) vanish at x = -1
    fam = tm.SpectralFamily(g, (tm.SpectralDatum(0.0, f, f),), {"x": -2.0}, measure_sign=-1)
    with pytest.raises(tm.SingularCycleMatrixError, match="x=-1"):
        tm.transformed_family(fam)


# ---------------------------------------------------------------- transformed families and kernels

def test_empty_family_is_identity():
    fam = empty_family(G64)
    f = tm.test_battery(G64)[0]
    assert tm.build_kernel(fam).rank == 0
    assert np.array_equal(tm.apply_delsarte(tm.build_delsarte(fam), f).values, f.values)
    assert np.array_equal(tm.apply_inverse(tm.build_delsarte(tm.transformed_family(fam)), f).values, f.values)
    pp = tm.transformed_potential_schrodinger(fam, "x**2")
    assert np.array_equal(pp.kernel_route, G64.coords("x") ** 2)


def test_uncoupled_family_is_unchanged():
    g = line(-2, 2, 41)
    x = g.coords("x")
    psi = fn(g, np.where(x > 0, np.sin(np.pi * x) ** 4, 0))
    phi = fn(g, np.where(x < 0, np.sin(np.pi * x) ** 4, 0))
    fam = tm.SpectralFamily(g, (tm.SpectralDatum(1.0, psi, phi),), {"x": -2.0})
    assert np.allclose(tm.transformed_family(fam).entries[0].psi.values, psi.values, atol=0)


def test_transformed_family_linear_in_psi():
    _, fam = tm.gaussian_family(G64)
    Oinv = np.linalg.inv(tm.cycle_matrix_field(fam))
    tilde = tm.transformed_family(fam).Psi
    assert np.allclose(tilde, np.einsum("...nk,...kl->...nl", fam.Psi, Oinv), atol=1e-12)


def test_rank_one_kernel_formula():
    _, fam = tm.gaussian_family(G64)
    K = tm.build_kernel(fam)
    psi_t = tm.transformed_family(fam).Psi[:, 0, 0]
    phi = fam.Phi[:, 0, 0]
    i, j = 1500, 900
    assert K.at(i, j)[0, 0] == pytest.approx(-psi_t[i] * np.conj(phi[j]), abs=1e-15)


def test_volterra_support_before_base_point():
    g = line(-5, 5, 201)
    x = g.coords("x")
    _, fam = tm.gaussian_family(g, x0=0.0)
    f = fn(g, np.where(x < -1, np.exp(-(x + 3) ** 2), 0))
    out = tm.apply_delsarte(tm.build_delsarte(fam), f)
    right = x >= 0
    assert np.array_equal(out.values[right], f.values[right])


def test_rank_one_action_matches_direct_quadrature():
    g = line(-10, 10, 801)
    x = g.coords("x")
    _, fam = tm.gaussian_family(g)
    f = tm.test_battery(g, seed=3)[1]
    out = tm.apply_delsarte(tm.build_delsarte(fam), f).values[:, 0]
    psi_t = tm.transformed_family(fam).Psi[:, 0, 0]
    dens = np.conj(fam.Phi[:, 0, 0]) * f.values[:, 0]
    h = g.spacing["x"]
    direct = np.array([np.sum(dens[:i + 1]) - 0.5 * (dens[0] + dens[i]) for i in range(len(x))]) * h
    assert np.max(np.abs(out - (f.values[:, 0] - psi_t * direct))) <= 1e-10


@settings(max_examples=10, deadline=None)
@given(st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False))
def test_composition_is_linear(a):
    _, fam = tm.gaussian_family(G64)
    Om = tm.build_delsarte(fam)
    Oi = tm.build_delsarte(tm.transformed_family(fam))
    f, g = tm.test_battery(G64, count=2)
    both = lambda h: tm.apply_inverse(Oi, tm.apply_delsarte(Om, h))  # noqa: E731
    lhs = both(f * a + g).values
    rhs = a * both(f).values + both(g).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * (1 + np.max(np.abs(lhs)))


@pytest.mark.parametrize("family", ["gaussian", "cosh"])
def test_round_trip(family, request):
    _, fam, Om, _ = request.getfixturevalue(family)
    Oi = tm.build_delsarte(tm.transformed_family(fam))
    for f in tm.test_battery(fam.grid):
        assert norm(tm.apply_inverse(Oi, tm.apply_delsarte(Om, f)) - f) <= 1e-6 * norm(f)


def test_quadrature_inverse_is_second_order():
    errs = []
    for g in (line(-10, 10, 641), line(-10, 10, 1281)):
        _, fam = tm.gaussian_family(g)
        Om, Oi = tm.build_delsarte(fam), tm.build_delsarte(tm.transformed_family(fam))
        f = tm.test_battery(g)[0]
        back = tm.apply_inverse(Oi, tm.apply_delsarte(Om, f), method="quadrature")
        errs.append(norm(back - f) / norm(f))
    assert 3.5 <= errs[0] / errs[1] <= 4.5


# ---------------------------------------------------------------- transformed potential

def test_one_soliton_from_cosh_seed(cosh):
    _, fam, _, _ = cosh
    x = fam.grid.coords("x")
    pp = tm.transformed_potential_schrodinger(fam, "0")
    # the cosh weight puts the well at 0; fit a shift anyway
    shifts = np.linspace(-0.01, 0.01, 201)
    errs = [np.max(np.abs(pp.kernel_route - (-2 / np.cosh(x - s) ** 2))) for s in shifts]
    assert min(errs) <= 1e-4
    assert abs(shifts[int(np.argmin(errs))]) <= 1e-3


def test_two_routes_agree_at_second_order():
    out = []
    for g in (G64, line(-20, 20, 5121)):
        _, fam = tm.cosh_family(g)
        out.append(tm.transformed_potential_schrodinger(fam, "0").discrepancy())
    assert 3.5 <= out[0] / out[1] <= 4.5


def test_ratio_route_masks_zeros():
    g = line(-5, 5, 201)
    x = g.coords("x")
    psi = fn(g, np.sin(x))  # eigenfunction of -d^2 with eigenvalue 1, zeros at k*pi
    fam = tm.SpectralFamily(g, (tm.SpectralDatum(1.0, psi, psi, 1e-3),), {"x": -5.0})
    pp = tm.transformed_potential_schrodinger(fam, "0")
    assert pp.masked_nodes >= 3 * 7
    assert np.all(np.isnan(pp.ratio_route[pp.mask]))


# ---------------------------------------------------------------- intertwining and kernel equation

def test_identity_intertwining():
    fam = empty_family(G64)
    L = tm.schrodinger("x**2")
    assert tm.intertwining_residual(L, L, tm.build_delsarte(fam), tm.test_battery(G64)) <= 1e-12


@pytest.mark.parametrize("family", ["gaussian", "cosh"])
def test_intertwining(family, request):
    L, fam, Om, Lt = request.getfixturevalue(family)
    assert tm.intertwining_residual(L, Lt, Om, tm.test_battery(fam.grid)) <= 1e-4


def test_intertwining_wrong_sign_control(gaussian):
    L, fam, Om, Lt = gaussian
    x = fam.grid.coords("x")
    bat = tm.test_battery(fam.grid)
    uK = tm.transformed_potential_schrodinger(fam, "x**2").kernel_route
    wrong = tm.schrodinger(GridFunction(fam.grid, (2 * x ** 2 - uK)[..., None]))
    good = tm.intertwining_residual(L, Lt, Om, bat)
    assert tm.intertwining_residual(L, wrong, Om, bat) >= 10 * good


def test_intertwining_converges():
    out = []
    for g in (line(-20, 20, 1281), G64):
        L, fam = tm.gaussian_family(g)
        Lt = tm.transformed_schrodinger(fam, "x**2")
        out.append(tm.intertwining_residual(L, Lt, tm.build_delsarte(fam), tm.test_battery(g)))
    assert np.log2(out[0] / out[1]) >= 1.7


def test_zero_kernel_pde():
    g2 = make_uniform_grid([("x", -1, 1, 21), ("s", -1, 1, 21)])
    L = tm.schrodinger("x**2")
    K = GridFunction(g2, np.zeros(g2.shape + (1, 1)))
    assert tm.kernel_pde_residual(L, L, K) == 0


def test_kernel_pde_and_perturbation(gaussian):
    L, fam, _, Lt = gaussian
    K = tm.build_kernel(fam)
    base = tm.kernel_pde_residual(Lt, L, K, window=(-3, 3))
    assert base <= 10 * fam.grid.spacing["x"] ** 2
    w = K.window(-3, 3)
    bent = GridFunction(w.grid, w.values * (1 + 0.01 * w.grid.coords("x"))[..., None, None])
    assert tm.kernel_pde_residual(Lt, L, bent) >= 10 * base


def test_kernel_pde_needs_support():
    g2 = make_uniform_grid([("x", 0, 1, 4), ("s", 0, 1, 4)])
    L = tm.schrodinger("0")
    with pytest.raises(tm.InsufficientSupportError):
        tm.kernel_pde_residual(L, L, GridFunction(g2, np.zeros((4, 4, 1, 1))))


# ---------------------------------------------------------------- locality

def test_differential_operator_is_local():
    L = tm.schrodinger("x**2")
    assert tm.locality_check(L, G64, 0.2) <= 1e-10


def test_locality_separation_precondition():
    with pytest.raises(tm.InvalidSeparationError):
        tm.locality_check(tm.schrodinger("0"), G64, G64.spacing["x"])


def test_dressed_operator_local_but_omega_is_not(cosh):
    L, fam, Om, Lt = cosh
    sep = 10 * fam.grid.spacing["x"]
    assert tm.locality_check(Lt, fam.grid, sep) <= 1e-8
    assert tm.locality_check(Om, fam.grid, sep) >= 1e-2
    # the conjugate Om L Om^-1, evaluated by composition, is numerically local too
    Oi = tm.build_delsarte(tm.transformed_family(fam))
    composed = lambda f: tm.apply_delsarte(Om, apply_op(L, tm.apply_inverse(Oi, f)))  # noqa: E731
    assert tm.locality_check(composed, fam.grid, 1.0) <= 1e-3


def test_vanishing_weights_recover_seed():
    L, fam = tm.gaussian_family(G64)
    bat = tm.test_battery(G64, count=2)
    out = []
    for eps in (1e-2, 1e-4):
        Lt = tm.transformed_schrodinger(fam.scaled_weights(eps), "x**2")
        out.append(max(norm(apply_op(Lt, f) - apply_op(L, f)) / norm(f) for f in bat))
    assert out[1] <= out[0] / 50


# ---------------------------------------------------------------- transformed evolution

def test_prop31_and_flipped_control():
    g = line(-10, 10, 2561)
    L, fam = tm.cosh_family(g, (1.0, 1.5), (-2.0, 2.0))
    ta = Axis("t", 0, 0.5, 9, "evolution")
    d = tm.dress_separable(L, fam, ta, u="0")
    p = tm.prop31_residual(d.operator(), d.psi_tilde, d.phi_tilde)
    assert p <= 50 * (g.spacing["x"] ** 2 + ta.spacing ** 4)
    flip = tm.prop31_residual(d.operator(flip=True), d.psi_tilde, d.phi_tilde)
    assert flip >= 10 * p


def test_prop31_identity_dressing_equals_seed_residual():
    g = line(-4, 4, 401)
    x = g.coords("x")
    L = tm.schrodinger("0")
    psi = fn(g, np.cosh(x))
    ta = Axis("t", 0, 0.5, 9, "evolution")
    fam = tm.SpectralFamily(g, (tm.SpectralDatum(-1.0, psi, psi, 1e-300),), {"x": -4.0})
    d = tm.dress_separable(L, fam, ta, u="0")
    psis, phis = tm.separable_solutions(L, fam, ta)
    seed = tm.prop31_residual(L, psis, phis)
    assert tm.prop31_residual(d.operator(), d.psi_tilde, d.phi_tilde) == pytest.approx(seed, rel=1e-9)
