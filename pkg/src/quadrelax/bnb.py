"""Best-bound branch-and-bound on top of the relaxation chain.

The root node is bounded by the cutting-surface loop; every descendant
solves one convex QP with the perturbation inherited from its parent,
optionally followed by a single separation run and a second QP when the
fresh cut is violated at the first solution.  Upper bounds come from
snapped relaxation points repaired by a feasibility LP; no local NLP
solver is involved.  The scalar weight on the equality rows and the root
surrogate perturbation are fixed once at the root and reused unchanged in
every node.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .linalg import projected_min_eigenvalue
from .model import MiqpInstance, evaluate_objective, is_feasible
from .relax import (
    _VIOLATION_TOL,
    InfeasibleRelaxation,
    ReducedProblem,
    RelaxationSolution,
    SolveFailure,
    cutting_surface,
    initial_perturbation,
    select_alpha,
    solve_qp_child,
    surrogate_root_perturbation,
)
from .separation import (
    SeparationConfig,
    SeparationInput,
    eta_from_relaxation,
    rho_init,
    solve_smooth,
)

__all__ = [
    "BnbConfig",
    "Node",
    "NodeBound",
    "SolveReport",
    "bound_node",
    "branch",
    "brute_force_oracle",
    "solve",
]

# IPM overrides for the one tightened retry after a failed certification
_RETRY_OPTS = {"max_iter": 400, "tol_gap": 1e-13, "tol_feas": 1e-12}

# slices with at most this many remaining discrete combinations are
# enumerated exactly instead of relaxed
_FOLD_CAP = 512


@dataclass
class BnbConfig:
    """Search controls.

    rel_tol closes the tree when the gap falls below
    rel_tol * max(|lower bound|, 1e-3); abs_tol both terminates and
    fathoms individual nodes.  max_nc caps the root cutting-surface loop;
    sep_mode picks its separation variant (nodes always separate with the
    smooth solver).
    """

    time_limit: float | None = None
    rel_tol: float = 1e-6
    abs_tol: float = 1e-9
    max_nc: int = 20
    sep_mode: str = "smooth"
    node_limit: int = 200_000


@dataclass
class Node:
    """A box slice of the root domain.

    Remaining discrete sets are encoded by the bound slice itself (the
    reduction's domain tightening recovers them); d is the perturbation
    that produced the accepted bound of the parent.
    """

    lower: np.ndarray
    upper: np.ndarray
    d: np.ndarray
    lb: float
    depth: int
    best_below: np.ndarray | None = None


@dataclass
class NodeBound:
    """Outcome of bounding one node: the bound and what children inherit."""

    lb: float
    d_pass: np.ndarray
    solution: RelaxationSolution | None
    certified: bool = True
    convex: bool = False
    exact: bool = False  # lb is the exact minimum of the slice


@dataclass
class SolveReport:
    """Search summary; bounds are clipped so lower <= upper when finite."""

    lower_bound: float
    upper_bound: float
    relative_gap: float  # percent, denominator floored at 1e-3
    node_count: int
    max_stored: int
    wall_time: float
    status: str  # optimal | infeasible | time_limit | node_limit
    best_point: np.ndarray | None = None
    root_bound: float | None = None
    root_cuts: int = 0


def _solve_child(instance, d, bounds, red=None):
    """QP child with one tightened retry; None when uncertified twice."""
    try:
        return solve_qp_child(instance, d, bounds, red=red)
    except SolveFailure:
        try:
            return solve_qp_child(instance, d, bounds, ipm_opts=_RETRY_OPTS,
                                  red=red)
        except SolveFailure:
            return None


def _slice_points(instance, red, cap):
    """Per-free-variable admissible values, or None past cap/continuous."""
    lists = []
    total = 1
    for k, i in enumerate(red.free):
        dom = instance.domains[i]
        lo, hi = red.lower[k], red.upper[k]
        if dom.kind in ("binary", "two_point"):
            pts = [p for p in dom.points if lo - 1e-9 <= p <= hi + 1e-9]
        elif dom.kind == "integer_range":
            pts = list(np.arange(np.ceil(lo - 1e-9), np.floor(hi + 1e-9) + 0.5))
        else:
            return None
        total *= len(pts)
        if total > cap or total == 0:
            return None
        lists.append(pts)
    return lists


def _fold_slice(instance, node, red) -> NodeBound | None:
    """Enumerate a small all-discrete slice exactly; None when too big."""
    lists = _slice_points(instance, red, _FOLD_CAP)
    if lists is None:
        return None
    X = np.array(list(itertools.product(*lists)))
    if red.Ar.shape[0]:
        scale = max(1.0, float(np.abs(red.br).max(initial=0.0)))
        ok = np.abs(X @ red.Ar.T - red.br).max(axis=1) <= 1e-8 * scale
        X = X[ok]
        if X.shape[0] == 0:
            raise InfeasibleRelaxation("no admissible point in the slice")
    vals = np.einsum("ij,jk,ik->i", X, red.Qr, X) + X @ red.qr + red.const
    k = int(np.argmin(vals))
    x = red.expand_x(X[k])
    sol = RelaxationSolution(x=x, y=x ** 2, value=float(vals[k]),
                             quad_value=float(x @ instance.Q @ x))
    return NodeBound(float(vals[k]), node.d, sol, convex=True, exact=True)


def bound_node(instance: MiqpInstance, node: Node, alpha: float,
               separate: bool = True,
               sep_config: SeparationConfig | None = None,
               prune_at: float = np.inf) -> NodeBound:
    """Bound one node: inherited-d QP, then a conditional separation pass.

    Slices with at most 512 remaining discrete combinations are enumerated
    exactly.  Convex slices (reduced Q PSD on the reduced nullspace) skip
    the perturbation machinery and solve the plain continuous relaxation.
    Otherwise the first QP uses the inherited d; a single smooth
    separation run then proposes d_new, and a second QP is solved only if
    the new cut is violated at the first solution.  The larger bound wins
    and its perturbation is what descendants inherit.  A first bound at or
    above prune_at already fathoms the node, so the separation pass is
    skipped there.

    Raises InfeasibleRelaxation when the slice is empty.  A node whose
    QP misses KKT certification twice keeps the inherited bound
    (certified=False, no solution).
    """
    red = ReducedProblem.build(instance, node.lower, node.upper)
    bounds = (node.lower, node.upper)
    if red.n_free == 0:
        sol = solve_qp_child(instance, node.d, bounds, red=red)
        return NodeBound(sol.value, node.d, sol, convex=True, exact=True)

    folded = _fold_slice(instance, node, red)
    if folded is not None:
        return folded

    scale = max(1.0, float(np.abs(red.Qr).max(initial=0.0)))
    if projected_min_eigenvalue(red.Qr, red.basis) >= -1e-9 * scale:
        sol = _solve_child(instance, np.zeros(instance.n), bounds, red=red)
        if sol is None:
            return NodeBound(node.lb, node.d, None, certified=False)
        return NodeBound(sol.value, node.d, sol, convex=True)

    sol1 = _solve_child(instance, node.d, bounds, red=red)
    if sol1 is None:
        return NodeBound(node.lb, node.d, None, certified=False)
    if not separate or sol1.value >= prune_at:
        return NodeBound(sol1.value, node.d, sol1)

    eta_f = eta_from_relaxation(sol1.x[red.free], sol1.y[red.free])
    if float(eta_f.max(initial=0.0)) <= 1e-12:
        return NodeBound(sol1.value, node.d, sol1)

    cfg = sep_config or SeparationConfig()
    if cfg.rho0 is None:
        cfg = replace(cfg, rho0=rho_init(red.Qr, red.lower, red.upper))
    sep = solve_smooth(SeparationInput(Q=red.Qr, A=red.Ar, alpha=alpha,
                                       eta=eta_f), cfg)
    d_new = node.d.copy()
    d_new[red.free] = sep.d

    # second solve only if the new cut is violated at the first solution
    v_bar = sol1.value - float(instance.q @ sol1.x)
    gain = sol1.quad_value + float(d_new @ (sol1.x ** 2 - sol1.y)) - v_bar
    if gain > _VIOLATION_TOL * max(1.0, abs(v_bar)):
        sol2 = _solve_child(instance, d_new, (node.lower, node.upper),
                            red=red)
        if sol2 is not None and sol2.value >= sol1.value:
            return NodeBound(sol2.value, d_new, sol2)
    return NodeBound(sol1.value, node.d, sol1)


# ---------------------------------------------------------------------------
# Branching


def _child(node: Node, i: int, lo: float, hi: float) -> Node:
    lower = node.lower.copy()
    upper = node.upper.copy()
    lower[i], upper[i] = lo, hi
    return Node(lower, upper, node.d, node.lb, node.depth + 1)


def _split(instance: MiqpInstance, node: Node, i: int, xi: float) -> list:
    dom = instance.domains[i]
    lo, hi = node.lower[i], node.upper[i]
    if dom.kind in ("binary", "two_point"):
        return [_child(node, i, p, p) for p in dom.points
                if lo - 1e-9 <= p <= hi + 1e-9]
    if dom.kind == "integer_range":
        t = np.floor(min(max(xi, lo), hi))
        t = min(max(t, np.ceil(lo)), np.floor(hi) - 1.0)
        return [_child(node, i, lo, t), _child(node, i, t + 1.0, hi)]
    # interval: bisect at the relaxation point, clamped so neither side
    # is thinner than 10% of the current width
    w = hi - lo
    t = min(max(xi, lo + 0.1 * w), hi - 0.1 * w)
    return [_child(node, i, lo, t), _child(node, i, t, hi)]


def branch(instance: MiqpInstance, node: Node,
           solution: RelaxationSolution) -> list:
    """Children after splitting on the largest hull gap eta_i = y_i - x_i^2.

    Ties go to the lowest index.  When every gap is below 1e-9 the
    relaxation is exact in the lifted variables; a discrete coordinate
    still off its admissible set (beyond 1e-6) is branched instead, and
    with none left the node is fathomed (empty list).
    """
    x, y = solution.x, solution.y
    width = node.upper - node.lower
    unfixed = width > 1e-12
    eta = np.where(unfixed, np.maximum(y - x ** 2, 0.0), 0.0)
    i = int(np.argmax(eta))
    if eta[i] > 1e-9:
        return _split(instance, node, i, float(x[i]))
    for j in range(instance.n):
        dom = instance.domains[j]
        if not unfixed[j] or not dom.is_discrete:
            continue
        if abs(x[j] - dom.nearest_point(float(x[j]))) > 1e-6:
            return _split(instance, node, j, float(x[j]))
    return []


def _fallback_split(instance: MiqpInstance, node: Node) -> list:
    """Split without a relaxation point (uncertified node): widest wins."""
    width = node.upper - node.lower
    disc = [i for i in range(instance.n)
            if width[i] > 1e-12 and instance.domains[i].is_discrete]
    if disc:
        i = max(disc, key=lambda j: width[j])
    else:
        i = int(np.argmax(width))
        if width[i] <= 1e-12:
            return []
    return _split(instance, node, i, 0.5 * (node.lower[i] + node.upper[i]))


# ---------------------------------------------------------------------------
# Incumbents


def _repair(instance: MiqpInstance, z):
    """Fix the discrete coordinates of z, restore Ax=b with the others.

    The LP objective is the objective gradient in the continuous block at
    the snapped point, so among feasible completions a descent-flavored
    vertex is preferred.  Returns None when no completion exists.
    """
    if instance.m == 0:
        return z
    scale = max(1.0, float(np.abs(instance.b).max(initial=0.0)))
    if float(np.abs(instance.A @ z - instance.b).max()) <= 1e-9 * scale:
        return z
    cont = [i for i, dom in enumerate(instance.domains) if not dom.is_discrete]
    if not cont:
        return None
    disc = [i for i in range(instance.n) if instance.domains[i].is_discrete]
    rhs = instance.b - instance.A[:, disc] @ z[disc]
    grad = instance.q[cont] + 2.0 * (instance.Q[np.ix_(cont, disc)] @ z[disc])
    res = optimize.linprog(
        grad, A_eq=instance.A[:, cont], b_eq=rhs,
        bounds=[(instance.domains[i].L, instance.domains[i].U) for i in cont],
        method="highs")
    if not res.success:
        return None
    out = z.copy()
    out[cont] = res.x
    return out


def _update_incumbent(instance, sol, ubd, best_x):
    """Probe candidates derived from a relaxation point; keep the best."""
    if sol is None:
        return ubd, best_x
    snapped = np.array([dom.nearest_point(float(v))
                        for dom, v in zip(instance.domains, sol.x)])
    cands = [snapped]
    if float(np.abs(snapped - sol.x).max()) > 1e-12:
        cands.append(sol.x)
        repaired = _repair(instance, snapped)
        if repaired is not None:
            cands.append(repaired)
    for cand in cands:
        if not is_feasible(instance, cand):
            continue
        val = evaluate_objective(instance, cand)
        if val < ubd:
            ubd, best_x = val, np.asarray(cand, dtype=float).copy()
    return ubd, best_x


# ---------------------------------------------------------------------------
# Search


def _gap_tol(lbd: float, cfg: BnbConfig) -> float:
    return max(cfg.abs_tol, cfg.rel_tol * max(abs(lbd), 1e-3))


def solve(instance: MiqpInstance, config: BnbConfig | None = None) -> SolveReport:
    """Globally minimize the instance by best-bound branch-and-bound.

    The root is bounded by the cutting-surface loop (or the plain
    continuous relaxation when the problem is already convex on the
    nullspace).  Child QPs inherit the root surrogate perturbation; the
    per-node separation pass runs only when cutting actually improved the
    root bound.  Terminates on gap closure, tree exhaustion, the time
    limit, or the node limit.
    """
    cfg = config or BnbConfig()
    t0 = time.perf_counter()
    n = instance.n
    ubd = np.inf
    best_x = None
    root_cuts = 0
    separate = False

    sel = select_alpha(instance)
    d0 = initial_perturbation(instance, sel.alpha)
    try:
        if d0 is None:
            root_sol = solve_qp_child(instance, np.zeros(n),
                                      (instance.lower, instance.upper))
            root_lb, d_root = root_sol.value, np.zeros(n)
        else:
            root = cutting_surface(instance, sel.alpha, max_cuts=cfg.max_nc,
                                   mode=cfg.sep_mode)
            root_lb, root_sol = root.bound, root.solution
            root_cuts = root.cuts_added
            # child QPs keep the surrogate only when cutting helped;
            # otherwise every node reuses the spectral seed unchanged
            separate = root.bound > root.initial_bound + 1e-9
            d_root = (surrogate_root_perturbation(root.pool) if separate
                      else root.pool.cuts[0].copy())
    except InfeasibleRelaxation:
        dt = time.perf_counter() - t0
        return SolveReport(np.inf, np.inf, 0.0, 1, 0, dt, "infeasible")
    except SolveFailure:
        root_lb, root_sol = -np.inf, None
        d_root = d0 if d0 is not None else np.zeros(n)

    nodes = 1
    max_stored = 0
    ubd, best_x = _update_incumbent(instance, root_sol, ubd, best_x)
    root_node = Node(instance.lower.copy(), instance.upper.copy(),
                     d_root, root_lb, 0)

    # open set with two views: a stack drives depth-first plunging while no
    # incumbent exists (otherwise nothing ever prunes), the heap takes over
    # for best-bound selection once one is found
    entries = {}
    heap = []
    stack = []
    seq = itertools.count()
    # separation at nodes runs on a reduced budget; one adequate cut is all
    # a node gets to use
    node_sep = SeparationConfig(max_iter_per_var=60, max_restarts=2)
    lbd = root_lb
    status = None
    if ubd - root_lb > cfg.abs_tol:
        eid = next(seq)
        entries[eid] = (root_lb, root_node, root_sol)
        heapq.heappush(heap, (root_lb, eid))
        stack.append(eid)
        max_stored = 1

    while entries:
        if cfg.time_limit is not None and time.perf_counter() - t0 > cfg.time_limit:
            status = "time_limit"
            break
        if nodes >= cfg.node_limit:
            status = "node_limit"
            break
        while heap and heap[0][1] not in entries:
            heapq.heappop(heap)
        lbd = max(lbd, heap[0][0])
        if ubd - lbd <= _gap_tol(lbd, cfg):
            status = "optimal"
            break
        if not np.isfinite(ubd):
            while stack[-1] not in entries:
                stack.pop()
            lb, node, sol = entries.pop(stack.pop())
        else:
            lb, node, sol = entries.pop(heap[0][1])
            heapq.heappop(heap)
        if lb >= ubd - cfg.abs_tol:
            continue
        children = (branch(instance, node, sol) if sol is not None
                    else _fallback_split(instance, node))
        opened = []
        for child in children:
            if node.lb >= ubd - cfg.abs_tol:
                break  # the inherited bound now fathoms the rest
            try:
                # bound quality only matters once something can be pruned
                nb = bound_node(instance, child, sel.alpha,
                                separate=separate and np.isfinite(ubd),
                                sep_config=node_sep,
                                prune_at=ubd - cfg.abs_tol)
            except InfeasibleRelaxation:
                nodes += 1
                continue
            nodes += 1
            child.lb = max(nb.lb, node.lb)  # parent bound is valid here too
            child.d = nb.d_pass
            before = ubd
            ubd, best_x = _update_incumbent(instance, nb.solution, ubd, best_x)
            if ubd < before:
                child.best_below = best_x
            if child.lb >= ubd - cfg.abs_tol:
                continue
            opened.append((child, nb.solution))
        # plunge order: push the most promising child last
        for child, csol in sorted(opened, key=lambda t: -t[0].lb):
            eid = next(seq)
            entries[eid] = (child.lb, child, csol)
            heapq.heappush(heap, (child.lb, eid))
            stack.append(eid)
        max_stored = max(max_stored, len(entries))

    if status is None:
        if np.isfinite(ubd):
            status = "optimal"
            lbd = ubd  # tree exhausted: the incumbent is the optimum
        else:
            status = "infeasible"
            lbd = ubd = np.inf

    lbd = min(lbd, ubd)
    if np.isfinite(lbd) and np.isfinite(ubd):
        rel = max(0.0, 100.0 * (ubd - lbd) / max(abs(lbd), 1e-3))
    elif lbd == ubd:
        rel = 0.0
    else:
        rel = np.inf
    return SolveReport(
        lower_bound=float(lbd), upper_bound=float(ubd), relative_gap=rel,
        node_count=nodes, max_stored=max_stored,
        wall_time=time.perf_counter() - t0, status=status,
        best_point=best_x, root_bound=None if root_lb == -np.inf else root_lb,
        root_cuts=root_cuts)


# ---------------------------------------------------------------------------
# Enumeration oracle


def _domain_points(dom) -> np.ndarray:
    if dom.kind in ("binary", "two_point"):
        return np.array(dom.points)
    if dom.kind == "integer_range":
        return np.arange(dom.L, dom.U + 0.5)
    raise ValueError("interval domains are not enumerable")


def _best_in_chunk(instance, chunk, scale, best, best_x):
    X = np.array(chunk)
    if instance.m:
        ok = np.abs(X @ instance.A.T - instance.b).max(axis=1) <= 1e-8 * scale
        X = X[ok]
        if X.shape[0] == 0:
            return best, best_x
    vals = np.einsum("ij,jk,ik->i", X, instance.Q, X) + X @ instance.q
    k = int(np.argmin(vals))
    if vals[k] < best:
        return float(vals[k]), X[k].copy()
    return best, best_x


def brute_force_oracle(instance: MiqpInstance) -> float:
    """Global optimum by exhaustive search, for verification at desk scale.

    All-discrete instances are enumerated exactly (at most 2**20
    combinations, equality rows filtered at 1e-8 relative); box-only
    continuous instances with n <= 4 use a dense grid (41 points per axis
    up to n=3, 21 at n=4) plus a local polish from the best grid point.
    Anything else is out of range and raises ValueError.
    """
    doms = instance.domains
    if all(d.is_discrete for d in doms):
        lists = [_domain_points(d) for d in doms]
        total = 1
        for pts in lists:
            total *= len(pts)
        if total > 1 << 20:
            raise ValueError(f"{total} combinations exceed the 2**20 cap")
        scale = (max(1.0, float(np.abs(instance.b).max(initial=0.0)))
                 if instance.m else 1.0)
        best, best_x = np.inf, None
        chunk = []
        for combo in itertools.product(*lists):
            chunk.append(combo)
            if len(chunk) == 65536:
                best, best_x = _best_in_chunk(instance, chunk, scale,
                                              best, best_x)
                chunk = []
        if chunk:
            best, best_x = _best_in_chunk(instance, chunk, scale, best, best_x)
        if best_x is None:
            raise ValueError("no admissible point satisfies the equality rows")
        return best

    if all(d.kind == "interval" for d in doms) and instance.m == 0:
        if instance.n > 4:
            raise ValueError("continuous oracle is limited to n <= 4")
        k = 41 if instance.n <= 3 else 21
        axes = [np.linspace(d.L, d.U, k) for d in doms]
        X = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, instance.n)
        vals = np.einsum("ij,jk,ik->i", X, instance.Q, X) + X @ instance.q
        x0 = X[int(np.argmin(vals))]
        res = optimize.minimize(
            lambda x: float(x @ instance.Q @ x + instance.q @ x), x0,
            jac=lambda x: 2.0 * (instance.Q @ x) + instance.q,
            method="L-BFGS-B",
            bounds=list(zip(instance.lower, instance.upper)))
        return float(min(vals.min(), res.fun))

    raise ValueError("oracle needs all-discrete variables or a small "
                     "unconstrained box")
