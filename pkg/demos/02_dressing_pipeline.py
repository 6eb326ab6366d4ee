"""
Dressing a Schroedinger operator
================================

A rank-1 spectral family defines a Volterra operator Omega that
intertwines L = -d^2 + u with a new operator L~ = -d^2 + u~. Here the seed
is the zero potential and the family is a single cosh profile, which
dresses u = 0 into a one-soliton well. The script checks the intertwining
identity, the round trip through the inverse, and the locality of L~ as
against the nonlocal Omega.
"""

import numpy as np

from delsarte import transmute as tm
from delsarte.numgrid import make_uniform_grid, norm

g = make_uniform_grid([("x", -20.0, 20.0, 40 * 256 + 1)])
x = g.coords("x")
L, fam = tm.cosh_family(g)

# the dressed potential, by two independent routes
pp = tm.transformed_potential_schrodinger(fam, "0")
print("max |u~ + 2 sech^2 x| (kernel route):", np.max(np.abs(pp.kernel_route.real + 2 / np.cosh(x) ** 2)))

Om = tm.build_delsarte(fam)
Lt = tm.transformed_schrodinger(fam, "0")
battery = tm.test_battery(g)
print("intertwining residual  |Om L f - L~ Om f| / |f| :", tm.intertwining_residual(L, Lt, Om, battery))

inverse = tm.build_delsarte(tm.transformed_family(fam))
trip = max(norm(tm.apply_inverse(inverse, tm.apply_delsarte(Om, f)) - f) / norm(f) for f in battery)
print("round trip  |Om^-1 Om f - f| / |f| :", trip)

# L~ is a differential operator: separated supports do not interact; Omega does
sep = 10 * g.spacing["x"]
print("locality: L~", tm.locality_check(Lt, g, sep), "  Omega", tm.locality_check(Om, g, sep))

# the kernel K(x, y) of Omega solves a Goursat-type PDE
K = tm.build_kernel(fam)
print("kernel PDE residual on [-3, 3]^2:", tm.kernel_pde_residual(Lt, L, K, window=(-3, 3)))
