"""Build a small mixed-integer QP by hand and look at its pieces.

Run from the repository root after installing the package:
    python3 demos/01_instances_and_hulls.py
"""

import numpy as np

from quadrelax import (
    MiqpInstance,
    VariableDomain,
    evaluate_objective,
    hull_lower,
    hull_upper,
    is_feasible,
    load_instance,
    save_instance,
)

# An instance is min x'Qx + q'x subject to Ax = b with every variable in
# a bounded set: an interval, {0,1}, a general two-point set, or a range
# of integers.  Q does not need to be convex.

Q = np.array([[0.0, 2.0, 0.0],
              [2.0, -1.0, 0.0],
              [0.0, 0.0, 1.0]])
q = np.array([-1.0, 0.0, 0.5])
A = np.array([[1.0, 1.0, 0.0]])
b = np.array([1.0])
domains = [
    VariableDomain("binary", 0.0, 1.0),
    VariableDomain("interval", 0.0, 1.0),
    VariableDomain("integer_range", -2.0, 2.0),
]

inst = MiqpInstance.from_arrays(Q, q, A, b, domains)
print("variables:", inst.n, " equality rows:", inst.m)
print("box lower:", inst.lower)
print("box upper:", inst.upper)

# Feasibility asks for the rows, the box, and discreteness all at once.
print()
print("x = (1, 0, 2)  feasible:", is_feasible(inst, [1.0, 0.0, 2.0]))
print("x = (1, 0, 0.5) feasible:", is_feasible(inst, [1.0, 0.0, 0.5]))
print("objective at (1, 0, 2):", evaluate_objective(inst, [1.0, 0.0, 2.0]))

# Every variable carries the tightest convex bracket of x**2 on its set.
# The upper function is the secant through the endpoints; the lower one
# is x**2 itself, except on two-point sets where the secant is exact.
print()
for i, name in enumerate(["binary x0", "interval x1", "integer x2"]):
    mid = 0.5 * (inst.lower[i] + inst.upper[i])
    print(f"{name}: at {mid:+.1f}  lower {hull_lower(inst, i, mid):+.3f}"
          f"  upper {hull_upper(inst, i, mid):+.3f}")

# Instances round-trip through a small JSON format.
save_instance(inst, "/tmp/demo_instance.json")
again = load_instance("/tmp/demo_instance.json")
print()
print("saved and loaded:", np.array_equal(again.Q, inst.Q),
      "-> /tmp/demo_instance.json")
