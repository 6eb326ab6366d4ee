import json

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from delsarte import laxpair as lp
from delsarte import transmute as tm
from delsarte.concomitant import PreconditionError
from delsarte.diffop import DifferentialExpression
from delsarte.numgrid import GridFunction, InvalidRegionError, ShapeError, make_uniform_grid


def line(lo, hi, n):
    return make_uniform_grid([("x", lo, hi, n)])


def tyx(nx, nt, ny, box=(-12.0, 12.0)):
    return make_uniform_grid([("t", 0.0, 0.5, nt), ("y", -0.5, 0.5, ny), ("x", box[0], box[1], nx)])


def tx(nt, nx, t=(0.0, 0.5), box=(-15.0, 15.0)):
    return make_uniform_grid([("t", t[0], t[1], nt), ("x", box[0], box[1], nx)])


@pytest.fixture(scope="module")
def joint_coarse():
    g = tyx(385, 9, 17)
    return g, lp.zs_battery(g)


@pytest.fixture(scope="module")
def joint_fine():
    g = tyx(769, 17, 33)
    return g, lp.zs_battery(g)


# ---------------------------------------------------------------- pairs

def test_pair_axes_must_differ():
    L = DifferentialExpression(1, 1, {(2,): -1})
    with pytest.raises(ShapeError):
        lp.LaxPair(L, L, "t", "t")


def test_pair_spaces_must_match():
    with pytest.raises(ShapeError):
        lp.LaxPair(DifferentialExpression(1, 1, {(2,): -1}), DifferentialExpression(1, 2, {(1,): 1}))


def test_kdv_pair_coefficients():
    pair = lp.kdv_pair("x**2")
    g = line(-1, 1, 5)
    x = g.coords("x")
    assert np.allclose(pair.M.coefficient((1,)).sample(g)[..., 0, 0], 6 * x ** 2)
    assert np.allclose(pair.M.coefficient((0,)).sample(g)[..., 0, 0], 6 * x)
    assert np.allclose(pair.M.coefficient((3,)).sample(g)[..., 0, 0], -4)


def test_operator_commutes_with_itself(joint_coarse):
    g, bat = joint_coarse
    L = DifferentialExpression(1, 1, {(2,): -1, (0,): "-2*sech(x)**2"})
    assert lp.zs_residual(lp.LaxPair(L, L), bat) <= 1e-8


def test_constant_coefficient_pair_commutes(joint_coarse):
    g, bat = joint_coarse
    L = DifferentialExpression(1, 1, {(2,): -1, (0,): 0.3})
    M = DifferentialExpression(1, 1, {(3,): -4, (1,): 2.0, (0,): -1.5})
    assert lp.zs_residual(lp.LaxPair(L, M), bat) <= 1e-8


@pytest.mark.parametrize("u", ["0", "1.5"])
def test_constant_potential_solves_kdv(joint_coarse, u):
    assert lp.zs_residual(lp.kdv_pair(u), joint_coarse[1]) <= 1e-8


def test_battery_is_deterministic_and_interior():
    g = tyx(97, 9, 9)
    a, b = lp.zs_battery(g, seed=3), lp.zs_battery(g, seed=3)
    assert all(np.array_equal(p.values, q.values) for p, q in zip(a, b))
    for f in a:
        v = np.abs(f.values[..., 0])
        assert np.max(v[:, :, [0, -1]]) <= 1e-6 * np.max(v)


def test_seed_pair_converges_at_second_order(joint_coarse, joint_fine):
    u = "-2*sech(x - 4*y)**2"
    coarse = lp.zs_residual(lp.kdv_pair(u), joint_coarse[1])
    fine = lp.zs_residual(lp.kdv_pair(u), joint_fine[1])
    h2 = (24 / 768) ** 2
    assert 3.5 <= coarse / fine <= 4.5
    assert fine <= 1000 * h2


def test_non_solution_potential_is_detected(joint_fine):
    seed = lp.zs_residual(lp.kdv_pair("-2*sech(x - 4*y)**2"), joint_fine[1])
    # the same profile frozen in y does not solve KdV
    frozen = lp.zs_residual(lp.kdv_pair("-2*sech(x)**2"), joint_fine[1])
    assert frozen >= 10 * seed


def test_sampled_potential_matches_expression(joint_coarse):
    g, bat = joint_coarse
    u = GridFunction.from_callable(g, lambda t, y, x: -2 / np.cosh(x - 4 * y) ** 2 + 0 * t)
    a = lp.zs_residual(lp.kdv_pair(u), bat)
    b = lp.zs_residual(lp.kdv_pair("-2*sech(x - 4*y)**2"), bat)
    assert a == pytest.approx(b, rel=0.5)


# ---------------------------------------------------------------- dressing a pair

def test_empty_family_equals_seed(joint_coarse):
    g, bat = joint_coarse
    pair = lp.kdv_pair("-2*sech(x - 4*y)**2")
    empty = lp.JointFamily(g, base_index=(0, 0, 0))
    assert lp.transformed_zs_residual(pair, empty, bat) == lp.zs_residual(pair, bat)


def test_joint_family_solves_both_equations(joint_coarse):
    g, _ = joint_coarse
    fam = lp.kdv_joint_family(g, [1.0], [0.0])
    pair = lp.kdv_pair("0")
    psi = fam.psis[0].values[..., 0]
    T, Y, X = (g.mesh()[n] for n in ("t", "y", "x"))
    assert np.allclose(psi, np.exp(-T + (X - 4 * Y)))
    assert pair.first.sign == 1 and pair.second.axis == "y"


def test_dressed_zero_pair_within_seed_budget(joint_coarse, joint_fine):
    out = []
    for g, bat in (joint_coarse, joint_fine):
        seed = lp.zs_residual(lp.kdv_pair("-2*sech(x - 4*y)**2"), bat)
        dressed, pair = lp.transformed_zs_residual(lp.kdv_pair("0"), lp.kdv_joint_family(g, [1.0], [0.0]),
                                                   bat, return_pair=True)
        assert dressed <= 2 * seed
        out.append(dressed)
    assert 3.5 <= out[0] / out[1] <= 4.5


def test_dressed_potential_is_the_soliton(joint_coarse):
    g, bat = joint_coarse
    _, pair = lp.transformed_zs_residual(lp.kdv_pair("0"), lp.kdv_joint_family(g, [1.0], [0.0]),
                                         bat, return_pair=True)
    u = pair.potential.values[..., 0].real
    Y, X = g.mesh()["y"], g.mesh()["x"]
    inner = (slice(None), slice(None), slice(8, -8))
    assert np.max(np.abs(u - lp.one_soliton(X, Y))[inner]) <= 1e-2


def test_y_equation_failure_is_caught_by_the_residual(joint_fine):
    g, bat = joint_fine
    good = lp.transformed_zs_residual(lp.kdv_pair("0"), lp.kdv_joint_family(g, [1.0], [0.0]), bat)
    static = lp.kdv_joint_family(g, [1.0], [0.0], y_velocity=0.0)
    assert lp.transformed_zs_residual(lp.kdv_pair("0"), static, bat) >= 10 * good


def test_family_outside_joint_subspace_is_rejected(joint_coarse):
    g, bat = joint_coarse
    X = g.mesh()["x"]
    f = GridFunction(g, np.broadcast_to(np.exp(X), g.shape)[..., None])
    fam = lp.JointFamily(g, (f,), (f,), (2.0,), (0, 8, 0))
    with pytest.raises(PreconditionError):
        lp.transformed_zs_residual(lp.kdv_pair("0"), fam, bat)


def test_dressing_needs_kdv_pair(joint_coarse):
    g, bat = joint_coarse
    L = DifferentialExpression(1, 1, {(2,): -1})
    with pytest.raises(ShapeError):
        lp.transformed_zs_residual(lp.LaxPair(L, L), lp.kdv_joint_family(g, [1.0], [0.0]), bat)


# ---------------------------------------------------------------- Baecklund identity

@pytest.fixture(scope="module")
def exp_dressing():
    g = line(-20, 20, 5121)
    L, fam = tm.exponential_family(g, (1.0,), (0.0,))
    Om = tm.build_delsarte(fam)
    return g, L, Om, tm.transformed_schrodinger(fam, "0"), tm.test_battery(g)


def test_backlund_identity_dressing():
    g = line(-5, 5, 201)
    L = tm.schrodinger("x**2")
    same = lambda f: f  # noqa: E731
    assert lp.backlund_residual(L, same, L, tm.test_battery(g), Om_inv=same) <= 1e-12


def test_backlund_matches_intertwining(exp_dressing):
    g, L, Om, Lt, bat = exp_dressing
    inter = tm.intertwining_residual(L, Lt, Om, bat)
    back = lp.backlund_residual(L, Om, Lt, lp.transported_battery(Om, bat))
    assert 0.5 <= back / inter <= 2
    assert back <= 10 * g.spacing["x"] ** 2


def test_backlund_detects_undressed_operator(exp_dressing):
    g, L, Om, Lt, bat = exp_dressing
    moved = lp.transported_battery(Om, bat)
    good = lp.backlund_residual(L, Om, Lt, moved)
    assert lp.backlund_residual(L, Om, L, moved) >= 10 * good


def test_backlund_normalisation_options(exp_dressing):
    g, L, Om, Lt, bat = exp_dressing
    moved = lp.transported_battery(Om, bat)[:2]
    assert lp.backlund_residual(L, Om, Lt, moved, normalize="input") > 0
    with pytest.raises(ValueError):
        lp.backlund_residual(L, Om, Lt, moved, normalize="max")


def test_backlund_needs_an_inverse():
    g = line(-1, 1, 21)
    L = tm.schrodinger("0")
    with pytest.raises(ShapeError):
        lp.backlund_residual(L, lambda f: f, L, tm.test_battery(g, count=1))


# ---------------------------------------------------------------- KdV residual

def test_kdv_residual_of_zero():
    g = tx(11, 101)
    assert lp.kdv_residual(GridFunction(g, np.zeros(g.shape + (1,)))) == 0


def test_kdv_residual_of_constant():
    g = tx(11, 101)
    assert lp.kdv_residual(GridFunction(g, np.full(g.shape + (1,), 2.5))) == 0


def test_kdv_residual_needs_time_axis():
    with pytest.raises(ShapeError):
        lp.kdv_residual(GridFunction(line(0, 1, 11), np.zeros((11, 1))))


def test_one_soliton_solves_kdv_symbolically():
    x, t = sp.Symbol("x", real=True), sp.Symbol("t", real=True)
    u = lp.one_soliton_expr(1.3, 0.4)
    pde = sp.diff(u, t) - 6 * u * sp.diff(u, x) + sp.diff(u, x, 3)
    f = sp.lambdify((x, t), pde, "numpy")
    X, T = np.meshgrid(np.linspace(-5, 5, 41), np.linspace(0, 1, 5))
    assert np.max(np.abs(f(X, T))) <= 1e-6


def test_sampled_soliton_residual_is_second_order():
    res = []
    for k in (1, 2):
        g = tx(40 * k + 1, 480 * k + 1, t=(0.0, 0.25))
        u = GridFunction.from_callable(g, lambda t, x: lp.one_soliton(x, t))
        res.append(lp.kdv_residual(u))
    assert 3.5 <= res[0] / res[1] <= 4.5


# ---------------------------------------------------------------- soliton generator

def test_no_solitons_gives_zero():
    sol = lp.kdv_soliton([], [], tx(9, 101))
    assert not np.any(sol.values) and sol.residual() == 0


@pytest.mark.parametrize("t", [0.0, 0.5])
def test_one_soliton_profile(t):
    g = line(-15, 15, 30 * 128 + 1)
    u = lp.soliton_slice([1.0], [-1.0], t, g)
    fit = lp.fit_soliton(g.coords("x"), u, 1.0, -1.0 + 4 * t)
    x = g.coords("x")
    assert np.max(np.abs(u - lp.one_soliton(x, t, 1.0, -1.0))) <= 1e-4
    assert fit.error <= 1e-4 and fit.centre == pytest.approx(-1.0 + 4 * t, abs=1e-4)


def test_one_soliton_mass_and_residual():
    # the quadrature bias of the mass is about (4/3) kappa^3 h^2
    g = tx(21, 30 * 256 + 1)
    sol = lp.kdv_soliton([1.0], [-1.0], g)
    m = sol.mass()
    assert np.max(np.abs(m + 4)) <= 1e-4 and np.ptp(m) <= 1e-4
    h2 = g.spacing["x"] ** 2 + g.spacing["t"] ** 2
    assert sol.residual() <= 400 * h2


def test_two_soliton_mass():
    g = line(-25, 25, 50 * 512 + 1)
    u = lp.soliton_slice([1.0, 1.5], [-3.0, 3.0], 0.0, g)
    x = g.coords("x")
    w = np.full_like(x, g.spacing["x"])
    w[[0, -1]] /= 2
    assert abs(u @ w + 4 * 2.5) <= 1e-4


@pytest.mark.parametrize("t", [-10.0, 10.0])
def test_two_soliton_asymptotic_factorisation(t):
    kappas, phases = (1.0, 1.5), (0.0, 0.0)
    fits = lp.asymptotic_fits(kappas, phases, t)
    assert all(f.error <= 1e-2 for f in fits)
    assert [f.kappa for f in fits] == pytest.approx(list(kappas), abs=1e-2)


def test_two_soliton_phase_shift_between_asymptotes():
    kappas, phases = (1.0, 1.5), (0.0, 0.0)
    before = lp.asymptotic_fits(kappas, phases, -10.0)
    after = lp.asymptotic_fits(kappas, phases, 10.0)
    slow, fast = lp.two_soliton_phase_shifts(kappas)
    moved = [a.centre - b.centre - 4 * k ** 2 * 20 for a, b, k in zip(after, before, kappas)]
    assert moved == pytest.approx([slow, fast], abs=1e-2)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.01, 3.0))
def test_phase_shifts_balance(k1, gap):
    slow, fast = lp.two_soliton_phase_shifts((k1, k1 + gap))
    assert slow < 0 < fast
    assert abs(k1 * slow + (k1 + gap) * fast) <= 1e-9 * (1 + abs(k1 * slow))


def test_galilean_shift():
    g = line(-15, 15, 30 * 32 + 1)
    h = g.spacing["x"]
    a = 16 * h
    base = lp.soliton_slice([1.0, 1.5], [-2.0, 1.0], 0.1, g)
    moved = lp.soliton_slice([1.0, 1.5], [-2.0 + a, 1.0 + a], 0.1, g)
    assert np.max(np.abs(moved[16:] - base[:-16])) <= 1e-8


def test_negative_sign_makes_dressing_singular():
    g = line(-15, 15, 1201)
    with pytest.raises(lp.SingularDressingError) as err:
        lp.soliton_slice([1.0], [0.0], 0.0, g, signs=(-1,))
    assert err.value.step == 0


def test_singular_second_step_is_named():
    g = line(-15, 15, 1201)
    with pytest.raises(lp.SingularDressingError) as err:
        lp.soliton_slice([1.0, 1.5], [-2.0, 2.0], 0.0, g, signs=(1, -1))
    assert err.value.step == 1


@pytest.mark.parametrize("kappas, phases", [((1.0, 1.0), (0.0, 1.0)), ((-1.0,), (0.0,)), ((1.0,), ())])
def test_invalid_parameters(kappas, phases):
    with pytest.raises(ValueError):
        lp.kdv_soliton(kappas, phases, tx(5, 101))


def test_soliton_too_close_to_edge():
    with pytest.raises(InvalidRegionError):
        lp.soliton_slice([1.0], [9.0], 0.0, line(-10, 10, 201))


def test_unsupported_convention():
    with pytest.raises(ValueError):
        lp.kdv_soliton([1.0], [0.0], tx(5, 101), convention="u_t + 6 u u_x + u_xxx = 0")


def test_fit_recovers_exact_profile():
    x = np.linspace(-10, 10, 2001)
    fit = lp.fit_soliton(x, lp.one_soliton(x, 0.0, 1.3, 0.7), 1.2, 0.5)
    assert fit.kappa == pytest.approx(1.3, abs=1e-8) and fit.centre == pytest.approx(0.7, abs=1e-8)
    assert fit.error <= 1e-10


# ---------------------------------------------------------------- export

def test_soliton_export(tmp_path):
    g = tx(9, 30 * 16 + 1)
    sol = lp.kdv_soliton([1.0], [0.0], g)
    sol.to_csv(tmp_path / "u.csv")
    sol.write_summary(tmp_path / "u.json")
    rows = np.loadtxt(tmp_path / "u.csv", delimiter=",", skiprows=1)
    assert (tmp_path / "u.csv").read_text().splitlines()[0] == "t,x,u"
    assert rows.shape == (9 * 481, 3)
    assert np.array_equal(rows[:, 2], sol.values.ravel())
    summary = json.loads((tmp_path / "u.json").read_text())
    assert set(summary) >= {"kappas", "phases", "residual", "mass"}
    assert summary["kappas"] == [1.0] and summary["mass"] == pytest.approx(-4, abs=1e-2)
