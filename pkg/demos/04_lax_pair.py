"""
Lax pairs and the Zakharov-Shabat condition
===========================================

The operators d/dt - L and d/dy - M with L = -d^2 + u and
M = -4 d^3 + 6 u d + 3 u_x commute exactly when u solves KdV in y. The
commutator is evaluated by nested finite differences on a battery of test
functions. Dressing the zero-potential pair with a joint exponential
family produces the soliton pair; a family that ignores the y-equation
does not.
"""

from delsarte import laxpair as lp
from delsarte import transmute as tm
from delsarte.numgrid import make_uniform_grid

g = make_uniform_grid([("t", 0.0, 0.5, 17), ("y", -0.5, 0.5, 33), ("x", -12.0, 12.0, 769)])
battery = lp.zs_battery(g)

print("commutator, soliton potential :", lp.zs_residual(lp.kdv_pair("-2*sech(x - 4*y)**2"), battery))
print("commutator, frozen potential  :", lp.zs_residual(lp.kdv_pair("-2*sech(x)**2"), battery))

zero = lp.kdv_pair("0")
good = lp.kdv_joint_family(g, [1.0], [0.0])
static = lp.kdv_joint_family(g, [1.0], [0.0], y_velocity=0.0)
print("dressed pair, joint family    :", lp.transformed_zs_residual(zero, good, battery))
print("dressed pair, t-only family   :", lp.transformed_zs_residual(zero, static, battery))

# the Darboux-Baecklund form of the dressing, on the transported battery
gx = make_uniform_grid([("x", -20.0, 20.0, 5121)])
L, fam = tm.exponential_family(gx, (1.0,), (0.0,))
Om = tm.build_delsarte(fam)
Lt = tm.transformed_schrodinger(fam, "0")
f = tm.test_battery(gx)
print("intertwining residual         :", tm.intertwining_residual(L, Lt, Om, f))
print("Baecklund residual            :", lp.backlund_residual(L, Om, Lt, lp.transported_battery(Om, f)))
