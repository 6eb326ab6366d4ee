import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delsarte import concomitant as cc
from delsarte.diffop import DifferentialExpression, EvolutionOperator
from delsarte.numgrid import GridFunction, make_uniform_grid, trim
from delsarte.scenarios import Settings, separable_m1, separable_m2, surfaces_m1, surfaces_tube


def fn(grid, values):
    return GridFunction(grid, np.asarray(values)[..., None])


def gaussians(grid):
    x = grid.coords("x")
    phi = fn(grid, np.exp(-(x - 0.3) ** 2) * (1 + 0.5j * np.sin(x)))
    psi = fn(grid, np.exp(-(x + 0.2) ** 2 / 2) * np.cos(2 * x))
    return phi, psi


LINE = make_uniform_grid([("x", -6, 6, 1201)])
TX = make_uniform_grid([("t", 0, 1, 11), ("x", 0, 1, 21)])


# ---------------------------------------------------------------- concomitants

def test_first_order_concomitant():
    phi, psi = gaussians(LINE)
    Z = cc.concomitant_axis(DifferentialExpression(1, 1, {(1,): 1}), phi, psi, 1)
    assert np.allclose(Z.values, phi.values.conj() * psi.values, atol=1e-14)


def test_second_order_concomitant():
    phi, psi = gaussians(LINE)
    x = LINE.coords("x")
    Z = cc.concomitant_axis(DifferentialExpression(1, 1, {(2,): 1}), phi, psi, 1).values[:, 0]
    # analytic derivatives of the Gaussians above
    p = np.exp(-(x - 0.3) ** 2) * (1 + 0.5j * np.sin(x))
    dp = -2 * (x - 0.3) * p + np.exp(-(x - 0.3) ** 2) * 0.5j * np.cos(x)
    q = np.exp(-(x + 0.2) ** 2 / 2) * np.cos(2 * x)
    dq = -(x + 0.2) * q - 2 * np.exp(-(x + 0.2) ** 2 / 2) * np.sin(2 * x)
    expected = p.conj() * dq - dp.conj() * q
    assert np.max(np.abs(Z - expected)[2:-2]) <= 10 * LINE.spacing["x"] ** 2


def test_order_zero_concomitant_vanishes():
    phi, psi = gaussians(LINE)
    Z = cc.concomitant_axis(DifferentialExpression(1, 1, {(0,): "x"}), phi, psi, 1)
    assert not np.any(Z.values)


@pytest.mark.parametrize("terms,channels", [
    ({(1,): 1}, 1),
    ({(2,): 1}, 1),
    ({(2,): -1, (0,): "sech(x)**2"}, 1),
    ({(3,): "1 + 0.1*x", (1,): "sin(x)"}, 1),
    ({(1,): [["1", "sin(x)"], ["0", "2 + cos(x)"]], (0,): [["x", "1"], ["0", "cos(x)"]]}, 2),
])
def test_lagrangian_identity_second_order(terms, channels):
    L = DifferentialExpression(1, channels, terms)
    sups = []
    for n in (301, 601):
        g = make_uniform_grid([("x", -6, 6, n)])
        x = g.coords("x")
        base = np.exp(-x ** 2 / 2)[:, None] * np.ones(channels)
        phi = GridFunction(g, base * np.exp(1j * x)[:, None])
        psi = GridFunction(g, base * (1 + x)[:, None])
        r = cc.lagrangian_residual(L, phi, psi)
        sups.append(np.max(np.abs(trim(r.values, 1, 3))))
    assert np.log2(sups[0] / sups[1]) > 1.7


def test_lagrangian_identity_two_dimensions():
    L = DifferentialExpression(2, 1, {(1, 1): "1 + x1*x2", (2, 0): -1, (0, 2): -1, (0, 1): "sin(x1)"})
    sups = []
    for n in (81, 161):
        g = make_uniform_grid([("x1", -4, 4, n), ("x2", -4, 4, n)])
        X1, X2 = g.coords("x1"), g.coords("x2")
        phi = fn(g, np.exp(-(X1 ** 2 + X2 ** 2) / 2) * np.exp(1j * X1))
        psi = fn(g, np.exp(-((X1 - 0.3) ** 2 + X2 ** 2)))
        sups.append(np.max(np.abs(trim(cc.lagrangian_residual(L, phi, psi).values, 2, 3))))
    assert np.log2(sups[0] / sups[1]) > 1.7


# ---------------------------------------------------------------- m-forms

def test_first_order_form_components():
    g = make_uniform_grid([("t", 0, 1, 5), ("x", -3, 3, 61)])
    t, x = g.coords("t"), g.coords("x")
    phi = fn(g, np.exp(-(x + t) ** 2))
    psi = fn(g, np.exp(-(x - t) ** 2) + 0j)
    Z = cc.assemble_Zm(EvolutionOperator(DifferentialExpression(1, 1, {(1,): 1}), "t", 1), phi, psi)
    dens = (phi.values.conj() * psi.values)[..., 0]
    assert np.allclose(Z.component(("t",)), -dens)
    assert np.allclose(Z.component(("x",)), -dens)
    assert "conj" in Z.convention


def test_zero_phi_gives_zero_form():
    g = make_uniform_grid([("t", 0, 1, 5), ("x", -3, 3, 61)])
    op = EvolutionOperator(DifferentialExpression(1, 1, {(2,): -1}), "t", 1)
    psi = fn(g, np.cos(g.coords("x")) + 0 * g.coords("t"))
    assert cc.assemble_Zm(op, fn(g, np.zeros(g.shape)), psi).sup() == 0
    assert cc.closedness_residual(op, fn(g, np.zeros(g.shape)), psi, require_solutions=False) == 0


@settings(max_examples=15, deadline=None)
@given(st.complex_numbers(max_magnitude=4, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=4, allow_nan=False, allow_infinity=False))
def test_form_is_sesquilinear(a, b):
    op, phi, psi = separable_m1(Settings(level=-3))
    Z = cc.assemble_Zm(op, phi, psi)
    Zab = cc.assemble_Zm(op, phi * a, psi * b)
    for key in Z.basis():
        ref = np.conj(a) * b * Z.component(key)
        assert np.max(np.abs(Zab.component(key) - ref)) <= 1e-12 * (1 + np.max(np.abs(ref)))


def test_d_of_constant_form():
    Z = cc.MForm(TX, 1, {("t",): np.full(TX.shape, 2.0), ("x",): np.full(TX.shape, -1.5j)})
    assert cc.dform(Z).sup(interior=1) == 0


def test_d_of_x_dx():
    Z = cc.MForm(TX, 1, {("x",): TX.coords("x") + 0 * TX.coords("t")})
    assert cc.dform(Z).sup() <= 1e-12


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_d_squared_vanishes(seed):
    rng = np.random.default_rng(seed)
    g = make_uniform_grid([("t", 0, 1, 41), ("x1", 0, 1, 41), ("x2", 0, 1, 41)])
    T, X1, X2 = g.coords("t"), g.coords("x1"), g.coords("x2")
    c = rng.normal(size=(3, 3))
    comps = {
        ("t",): np.sin(c[0, 0] * T + c[0, 1] * X1 * X2 + c[0, 2]),
        ("x1",): np.exp(c[1, 0] * T * X2) * np.cos(c[1, 1] * X1),
        ("x2",): X1 ** 2 * T + c[2, 0] * np.sin(X2 + c[2, 1] * T),
    }
    ddZ = cc.dform(cc.dform(cc.MForm(g, 1, comps)))
    assert ddZ.sup(interior=2) <= 0.05


def test_closedness_m1_second_order():
    vals = [cc.closedness_residual(*separable_m1(Settings(level=lv))) for lv in (-1, 0)]
    assert np.log2(vals[0] / vals[1]) > 1.7


def test_closedness_m2_small():
    op, phi, psi = separable_m2(Settings(level=-1))
    h = max(phi.grid.spacing.values())
    assert cc.closedness_residual(op, phi, psi) <= 10 * h ** 2


def test_closedness_control_and_precondition():
    op, phi, psi = separable_m1(Settings(level=-1))
    good = cc.closedness_residual(op, phi, psi)
    x = psi.grid.coords("x")
    bad_psi = GridFunction(psi.grid, psi.values + 0.1 * np.sin(x)[..., None])
    bad = cc.closedness_residual(op, phi, bad_psi, require_solutions=False)
    assert bad >= 10 * good
    # a static sin(5x) violates psi_t = -psi_xx by 25 sin(5x), far beyond the grid tolerance
    far = GridFunction(psi.grid, psi.values + np.broadcast_to(np.sin(5 * x), psi.grid.shape)[..., None])
    with pytest.raises(cc.PreconditionError):
        cc.closedness_residual(op, phi, far)


def test_extended_form_reduces_for_zero_M():
    g = make_uniform_grid([("t", 0, 0.5, 9), ("y", 0, 0.5, 9), ("x", -1, 2, 61)])
    t, x = g.coords("t"), g.coords("x")
    L = DifferentialExpression(1, 1, {(2,): -1})
    psi = fn(g, np.broadcast_to(np.exp(t) * np.cos(x), g.shape))
    phi = fn(g, np.broadcast_to(np.exp(-t) * np.cos(x), g.shape) + 0j)
    op_t = EvolutionOperator(L, "t", 1)
    op_y = EvolutionOperator(DifferentialExpression.zero(), "y", 1)
    E = cc.assemble_extended_Zm(op_t, op_y, phi, psi)
    Z = cc.assemble_Zm(op_t, phi, psi)
    for key in Z.basis():
        if "y" not in key:
            assert np.array_equal(E.component(key), Z.component(key))
    assert not np.any(E.component(("y",)))
    assert cc.dform(E).sup(interior=2) <= 10 * g.spacing["x"] ** 2


# ---------------------------------------------------------------- chains

def test_integral_of_zero_form():
    S = cc.staircase_path(TX, (0, 0), (10, 20))
    assert cc.surface_integral(cc.MForm(TX, 1, {}), S) == 0


def test_length_of_segment():
    Z = cc.MForm(TX, 1, {("x",): np.ones(TX.shape)})
    S = cc.staircase_path(TX, (3, 4), (3, 17))
    assert cc.surface_integral(Z, S) == pytest.approx(13 * 0.05, abs=1e-15)


def test_reversal_negates():
    op, phi, psi = separable_m1(Settings(level=-2))
    Z = cc.assemble_Zm(op, phi, psi)
    S = cc.staircase_path(phi.grid, (0, 5), (4, 60))
    assert abs(cc.surface_integral(Z, S) + cc.surface_integral(Z, S.reversed())) <= 1e-12


def test_concatenation_is_additive():
    op, phi, psi = separable_m1(Settings(level=-2))
    Z = cc.assemble_Zm(op, phi, psi)
    g = phi.grid
    a = cc.staircase_path(g, (0, 5), (2, 40))
    b = cc.staircase_path(g, (2, 40), (4, 12), order=(1, 0))
    total = cc.surface_integral(Z, a + b)
    assert abs(total - cc.surface_integral(Z, a) - cc.surface_integral(Z, b)) <= 1e-13


def test_fundamental_theorem_on_chains():
    # for Z = dF the chain integral is F(end) - F(start) up to trapezoid error on each edge
    g = make_uniform_grid([("t", 0, 1, 21), ("x", 0, 1, 21)])
    t, x = g.coords("t"), g.coords("x")
    # F = t*x: dF = x dt + t dx; trapezoid is exact for these linear edges
    Z = cc.MForm(g, 1, {("t",): x + 0 * t, ("x",): t + 0 * x})
    S = cc.staircase_path(g, (2, 3), (17, 11), order=(1, 0))
    assert cc.surface_integral(Z, S) == pytest.approx(0.85 * 0.55 - 0.1 * 0.15, abs=1e-14)


def test_same_surface_has_zero_gap():
    op, phi, psi = separable_m1(Settings(level=-2))
    Z = cc.assemble_Zm(op, phi, psi)
    S = cc.staircase_path(phi.grid, (0, 5), (4, 60))
    assert cc.path_independence_gap(Z, S, S) == 0


def test_gap_requires_matching_boundaries():
    op, phi, psi = separable_m1(Settings(level=-2))
    Z = cc.assemble_Zm(op, phi, psi)
    with pytest.raises(cc.HomologyError):
        cc.path_independence_gap(Z, cc.staircase_path(phi.grid, (0, 5), (4, 60)),
                                 cc.staircase_path(phi.grid, (0, 6), (4, 60)))


def test_chain_outside_grid():
    with pytest.raises(cc.OutOfDomainError):
        cc.Chain(TX, 1, {((10, 20), (0,)): 1})


def test_surface_boundary_checked():
    chain = cc.box_chain(TX, (0, 0), (2, 2), (0, 1))
    with pytest.raises(cc.HomologyError):
        cc.SurfaceChain(chain, cc.boundary(chain), cc.boundary(chain))


def test_boundary_of_boundary():
    g = make_uniform_grid([("t", 0, 1, 5), ("x1", 0, 1, 5), ("x2", 0, 1, 5)])
    solid = cc.box_chain(g, (0, 1, 0), (3, 4, 2), (0, 1, 2))
    assert not cc.boundary(cc.boundary(solid)).cells


def test_surface_json_round_trip(tmp_path):
    S = cc.staircase_path(TX, (1, 2), (7, 13))
    back = cc.SurfaceChain.from_json(TX, S.to_json())
    assert back == S


def test_stokes_m1_surfaces():
    op, phi, psi = separable_m1(Settings())
    Z = cc.assemble_Zm(op, phi, psi)
    nt, nx = phi.grid.shape
    S = surfaces_m1(phi.grid, (0, nx // 6), (nt - 1, 5 * nx // 6))
    h = max(phi.grid.spacing.values())
    assert len({frozenset(s.chain.cells.items()) for s in S}) == 3
    assert max(cc.path_independence_gap(Z, a, b) for a in S for b in S) <= 2 * h ** 2


def test_stokes_m2_surfaces():
    op, phi, psi = separable_m2(Settings(level=-1))
    Z = cc.assemble_Zm(op, phi, psi)
    nt, n1, n2 = phi.grid.shape
    S = surfaces_tube(phi.grid, 0, nt - 1, (n1 // 4, n2 // 4), (3 * n1 // 4, 3 * n2 // 4))
    h = max(phi.grid.spacing.values())
    assert max(cc.path_independence_gap(Z, a, b) for a in S for b in S) <= 2 * h ** 2
