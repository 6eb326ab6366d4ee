"""
Formal adjoints, concomitants and closed forms
==============================================

Integration by parts for a differential expression leaves boundary terms,
the bilinear concomitant. This script builds a Schroedinger operator,
checks that its adjoint defect vanishes on compactly supported data,
measures the pointwise Lagrangian identity on a refinement ladder, and
checks that the 1-form assembled from a pair of evolution solutions is
closed.
"""

import numpy as np

from delsarte import concomitant as cc
from delsarte.diffop import DifferentialExpression, EvolutionOperator, adjoint_defect, formal_adjoint
from delsarte.numgrid import GridFunction, make_uniform_grid, trim

# L = -d^2 + sech(x)^2 + 0.3 x d : not self-adjoint, because of the drift term
L = DifferentialExpression(1, 1, {(2,): -1, (1,): "0.3*x", (0,): "sech(x)**2"})
A = formal_adjoint(L)
print("adjoint terms:", sorted(alpha for alpha, _ in A.terms))

# pointwise identity  phi^H L psi - (L* phi)^H psi = d/dx Z  on three grids
for n in (1025, 2049, 4097):
    g = make_uniform_grid([("x", -8.0, 8.0, n)])
    x = g.coords("x")
    phi = GridFunction(g, (np.exp(-(x - 0.5) ** 2) * np.exp(2j * x))[:, None])
    psi = GridFunction(g, np.exp(-(x + 0.3) ** 2 / 2)[:, None])
    r = cc.lagrangian_residual(L, phi, psi)
    print(f"h = {g.spacing['x']:.5f}   sup residual {np.max(np.abs(trim(r.values, 1, 3))):.3e}"
          f"   adjoint defect {abs(adjoint_defect(L, phi, psi)):.3e}")

# closedness: psi_t = -psi_xx and phi_t = phi_xx (the adjoint flow) make Z closed
g = make_uniform_grid([("t", 0.0, 0.5, 17), ("x", -1.0, 2.0, 385)])
t, x = g.coords("t"), g.coords("x")
psi = GridFunction(g, (np.exp(t) * np.cos(x))[..., None])
phi = GridFunction(g, (np.exp(-0.49 * t) * np.cos(0.7 * x))[..., None])
op = EvolutionOperator(DifferentialExpression(1, 1, {(2,): -1}), "t", 1)
print("sup |dZ| on solutions:", cc.closedness_residual(op, phi, psi))

# Stokes: two staircase paths with the same end points give the same integral
Z = cc.assemble_Zm(op, phi, psi)
a = cc.staircase_path(g, (0, 50), (16, 300), order=(0, 1))
b = cc.staircase_path(g, (0, 50), (16, 300), order=(1, 0))
print("path independence gap:", cc.path_independence_gap(Z, a, b))
