"""Finding the next diagonal perturbation with coordinate descent.

A relaxation solution leaves slacks eta_i = y_i - x_i**2.  The most
useful new perturbation d minimizes eta'd over all d that keep
Q + diag(d) + alpha A'A positive semidefinite.  A log-det barrier keeps
the iterates inside that set, each coordinate step is a closed form, and
a quadratic regularizer (grown on restarts) guarantees the minimum is
attained even when the unregularized problem drifts to infinity.
"""

import numpy as np

from quadrelax import SeparationConfig, SeparationInput, solve_smooth
from quadrelax.separation import solve_nonsmooth

Q = np.array([[0.0, 2.0], [2.0, -1.0]])
A = np.array([[0.0, 1.0]])

# Here the admissible set is d1 >= 0, d2 >= 0, d1*d2 >= 4.  With equal
# slacks the symmetric boundary point (2, 2) is optimal.
inp = SeparationInput(Q=Q, A=A, alpha=1.0, eta=np.array([0.25, 0.25]))
res = solve_smooth(inp, SeparationConfig(rho0=1e-4))
print(f"equal slacks:   d = ({res.d[0]:.4f}, {res.d[1]:.4f})"
      f"   eta.d = {res.d @ inp.eta:.4f}")
print(f"  status {res.status}, {res.iterations} steps, "
      f"{res.restarts} restarts")

# With eta = (0.24, 0) the second coordinate is free to grow without
# changing the objective, so the unregularized minimum is not attained.
# A tiny initial regularizer lets d2 blow up; the restart rule detects
# that and re-runs with a stronger one.
inp = SeparationInput(Q=Q, A=A, alpha=1.0, eta=np.array([0.24, 0.0]))
res = solve_smooth(inp, SeparationConfig(rho0=1e-8))
print()
print(f"degenerate direction: d = ({res.d[0]:.4f}, {res.d[1]:.4f})")
print(f"  d1*d2 = {res.d[0] * res.d[1]:.6f} (boundary is 4)")
print(f"  restarts = {res.restarts}, final regularizer = {res.rho:.1e}")

# The nonsmooth variant penalizes only the positive part of d, which
# tends to pull the perturbation toward zero from above.
inp = SeparationInput(Q=Q, A=A, alpha=1.0, eta=np.array([0.25, 0.25]))
res = solve_nonsmooth(inp, SeparationConfig(rho0=1e-4))
print()
print(f"positive-part penalty: d = ({res.d[0]:.4f}, {res.d[1]:.4f}), "
      f"status {res.status}")
