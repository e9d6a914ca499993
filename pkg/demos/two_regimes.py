"""Where does the maximum's tail switch from exponential to jump-driven?

Runs in a few seconds.  Prints theta and the boundary x(a) for a Pareto
and a Weibull walk, then the two-term approximation along a grid of x
with the dominant term labelled.
"""
import numpy as np

from asymtail.asymptotics import approx_max_tail, transition_point
from asymtail.solvers import BoundaryError, solve_boundary, solve_theta
from asymtail.tail_models import builtin_models, drifted

models = builtin_models()

for name in ("Pareto", "Weibull"):
    inc = drifted(models[name], 0.01)
    th = solve_theta(inc)
    print(f"\n{name}, a = 0.01")
    print(f"  theta = {th.theta:.6g}   (2a/sigma^2 = {th.asymptotic_ref:.6g})")
    try:
        b = solve_boundary(inc)
        print(f"  x(a) = {b.x_a:.6g}   mono_ratio = {b.mono_ratio:.4g}")
        top = 4 * b.x_a
    except BoundaryError as exc:
        print(f"  no boundary: {exc}")
        top = 20 / th.theta

    print(f"  {'x':>10} {'exp term':>11} {'tail term':>11} {'total':>11}  regime")
    for x in np.geomspace(0.05 * top, top, 8):
        e = approx_max_tail(inc, x)
        print(f"  {x:10.4g} {e.exp_term:11.4e} {e.tail_term:11.4e} {e.total:11.4e}  {e.regime.value}")

# the crossing point moves out as the drift shrinks
print("\ncrossing point for Weibull")
for a in (1e-2, 1e-3, 1e-4):
    tp = transition_point(drifted(models["Weibull"], a))
    print(f"  a = {a:g}: closed form {tp.x_star:.5g}, numeric {tp.numeric_cross:.5g}")
