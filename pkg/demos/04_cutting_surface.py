"""Tightening the root bound by accumulating perturbation cuts.

One perturbation d gives one convex underestimator.  The cut loop keeps
the whole pool active at once: solve the relaxation over the current
pool, read off the slacks, separate a new d, and repeat while each new
cut is violated by the last solution.  The bound can only go up.
"""

import numpy as np

from quadrelax import (
    cutting_surface,
    generate_instance,
    initial_perturbation,
    select_alpha,
)
from quadrelax.linalg import nullspace_basis, projected_min_eigenvalue

inst = generate_instance("binary_card", 10, 0.8, 21)
sel = select_alpha(inst)
d0 = initial_perturbation(inst, sel.alpha)
print(f"binary instance, n = {inst.n}, cardinality rhs = {inst.b[0]:.0f}")
print(f"uniform starting shift = {d0[0]:.4f}")

res = cutting_surface(inst, sel.alpha, max_cuts=10)
print()
print("bound after each accepted cut:")
for k, v in enumerate(res.bound_history):
    print(f"  {k:2d} cuts   {v:12.5f}")
print(f"cuts added: {res.cuts_added}  (pool size {len(res.pool.cuts)})")
print(f"total gain over the spectral bound: "
      f"{res.bound - res.initial_bound:.5f}")

# Every pool member must keep the quadratic convex on the nullspace;
# that is what makes each cut a valid underestimator.
Z = nullspace_basis(inst.A, inst.n)
worst = min(projected_min_eigenvalue(inst.Q + np.diag(d), Z)
            for d in res.pool.cuts)
print(f"worst projected eigenvalue over the pool: {worst:.2e} (>= 0 up "
      "to tolerance)")

# The nonsmooth separation variant usually lands on a slightly weaker
# bound; compare the two on the same instance.
res_ns = cutting_surface(inst, sel.alpha, max_cuts=10, mode="nonsmooth")
print()
print(f"smooth    final bound {res.bound:12.5f}")
print(f"nonsmooth final bound {res_ns.bound:12.5f}")
