"""Uniform diagonal perturbations: the two spectral lower bounds.

The cheapest valid bound shifts the diagonal by the most negative
eigenvalue of Q.  With equality rows the shift only needs to make Q
convex on the nullspace of A, which is found by escalating the
multiplier of A'A in a generalized eigenvalue problem until the shift
stabilizes.  That is usually a much smaller shift, hence a tighter
bound.
"""

import numpy as np

from quadrelax import (
    MiqpInstance,
    VariableDomain,
    generate_instance,
    select_alpha,
    solve_eigenvalue_relaxation,
)
from quadrelax.linalg import min_eigenvalue

# The worked 2x2 example: an indefinite Q restricted to the line x0 + x1 = 1.
Q = np.array([[0.0, 2.0], [2.0, -1.0]])
inst = MiqpInstance.from_arrays(
    Q, np.zeros(2), [[1.0, 1.0]], [1.0],
    [VariableDomain("interval", -2.0, 2.0) for _ in range(2)])

sel = select_alpha(inst)
print("escalation trace (alpha, shift):")
for alpha, mu in sel.trace:
    print(f"  alpha = {alpha:10.1f}   shift = {mu:.6f}")
print(f"selected alpha = {sel.alpha:.1f}, shift = {sel.mu:.6f}, "
      f"capped = {sel.capped}")
print(f"plain spectral shift would be {-min_eigenvalue(Q):.6f}")

# Compare the two bounds on a generated instance with equality rows.
inst = generate_instance("eq_integer", 8, 0.7, 7)
sel = select_alpha(inst)
plain = max(0.0, -min_eigenvalue(inst.Q))
nullsp = max(0.0, sel.mu)

b_plain = solve_eigenvalue_relaxation(inst, plain).value
b_null = solve_eigenvalue_relaxation(inst, nullsp).value
print()
print(f"random integer instance, n = {inst.n}, rows = {inst.m}")
print(f"  shift ignoring rows   {plain:9.4f}  ->  bound {b_plain:10.4f}")
print(f"  shift on the nullspace{nullsp:9.4f}  ->  bound {b_null:10.4f}")
print(f"  improvement: {b_null - b_plain:.4f}")
