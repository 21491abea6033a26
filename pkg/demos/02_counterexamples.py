"""Why the natural right-hand side is not quasi-optimal, and why estimator
efficiency can fail.

First counterexample (both families): a nonconforming function orthogonal
to the continuous piecewise linears is smoothed and rotated into tensor
data G that is orthogonal to all conforming derivatives.  The exact
solution is zero, and so is the smoothed discrete solution; but the
natural scheme sees only the piecewise-constant part of G and returns a
discrete solution of unit energy.  No constant in a best-approximation
inequality can absorb that.

Second example: data built from a continuous P1 vector field plus volume
bubbles keeps every edge integral unchanged, so both discrete solutions
vanish - yet the data-oscillation term in the (reliable) error bound stays
at a fixed positive value.  The estimator cannot be efficient for such
data: the bound is honest, the error is zero.
"""

from ncfem.experiments import (
    run_counterexample_cr,
    run_counterexample_morley,
    run_oscillation_example,
)
from ncfem.mesh import unit_square_mesh

mesh = unit_square_mesh(2)

for title, report in [
    ("Crouzeix-Raviart (m=1)", run_counterexample_cr(mesh)),
    ("Morley (m=2)", run_counterexample_morley(mesh)),
]:
    print(f"{title} counterexample:")
    for a in report["assertions"]:
        mark = "ok " if a["pass"] else "FAIL"
        print(f"  [{mark}] {a['name']} (value {a['value']:.3e})")
    print()

report = run_oscillation_example(mesh)
print("Dominating data oscillations (m=2):")
print(f"  both discrete solutions vanish: {report['passed']}")
print(f"  ||G - P0 G|| = {report['values']['G_osc']:.4f}  (stays away from zero)")
est = report["values"]["estimate_original"]
print(f"  guaranteed bound_a = {est['bounds']['bound_a']:.4f}")
print(f"  error/estimator ratio: {report['values']['estimator_error_ratio']}")
