"""Convex relaxations: alpha selection, spectral bounds, and the cutting loop.

The relaxation chain for min x^T Q x + q^T x over F = {Ax=b, l_i <= y_i <=
u_i}:

* a single uniform perturbation d = mu * ones gives the spectral (QP)
  relaxation, solvable after eliminating y;
* a pool of perturbations d, each certified convex on the nullspace of A,
  gives the epigraph QCP  min v + q^T x,  v >= x^T (Q + diag d) x - d^T y;
* the cutting-surface loop alternates QCP solves with separation runs that
  mint the pool member most violated by the current relaxation point.

All subproblem solutions pass a KKT certification filter before their
bounds are trusted; failures degrade to the best previously certified
bound.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import qcqp
from .linalg import (
    NullspaceBasis,
    min_eigenvalue,
    min_generalized_eigenvalue,
    nullspace_basis,
    projected_min_eigenvalue,
)
from .model import SQUARE_HULL_KINDS, MiqpInstance
from .separation import (
    SeparationConfig,
    SeparationInput,
    eta_from_relaxation,
    rho_init,
    solve_nonsmooth,
    solve_smooth,
)

__all__ = [
    "AlphaSelection",
    "CutPool",
    "RelaxationSolution",
    "CuttingSurfaceResult",
    "InfeasibleRelaxation",
    "SolveFailure",
    "ReducedProblem",
    "select_alpha",
    "initial_perturbation",
    "solve_eigenvalue_relaxation",
    "assemble_qcp",
    "solve_qcp",
    "solve_qp_child",
    "cutting_surface",
    "cut_violation",
    "surrogate_root_perturbation",
]

# A matrix is treated as convex on the nullspace above this eigenvalue level.
_GATE_TOL = 1e-9

# Pool membership certificate (projected form) must clear this level.
_POOL_TOL = 1e-6

# KKT residual acceptance threshold (relative).
_KKT_TOL = 1e-8

# A new cut must beat the incumbent relaxation point by this much.
_VIOLATION_TOL = 1e-6


class InfeasibleRelaxation(Exception):
    """The (node) feasible set is empty; callers prune."""


class SolveFailure(Exception):
    """A subproblem solve did not reach KKT certification.

    Carries the uncertified iterate in ``best`` so callers can degrade
    gracefully.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class AlphaSelection:
    """Chosen equality-penalty weight alpha with its mu value.

    mu is -lambda_min(Q, I + alpha A^T A); trace holds the escalation
    sequence [(alpha_t, mu_t), ...]; capped marks hitting the escalation
    limit without stabilization.  alpha = 0 exactly when there are no
    equality rows.
    """

    alpha: float
    mu: float
    trace: tuple = ()
    capped: bool = False


@dataclass
class CutPool:
    """Finite set of certified diagonal perturbations plus last multipliers.

    Each stored cut keeps the projected matrix Z^T (Q + diag d) Z above
    -1e-6, which is the operative convexity requirement for the assembled
    QCP.  ``multipliers`` are the per-cut values from the most recent QCP
    solve (None until one happened).
    """

    alpha: float
    Q: np.ndarray
    basis: NullspaceBasis
    cuts: list = field(default_factory=list)
    multipliers: np.ndarray | None = None

    def add(self, d) -> None:
        d = np.asarray(d, dtype=float).reshape(-1)
        if d.shape[0] != self.Q.shape[0]:
            raise ValueError(f"cut length {d.shape[0]} != n={self.Q.shape[0]}")
        lam = projected_min_eigenvalue(self.Q + np.diag(d), self.basis)
        if lam < -_POOL_TOL:
            raise ValueError(f"cut fails the convexity certificate ({lam:.3e})")
        self.cuts.append(d)
        self.multipliers = None  # stale after a pool change

    def __len__(self) -> int:
        return len(self.cuts)


@dataclass
class RelaxationSolution:
    """KKT-certified solution of one convex relaxation, in full variables.

    v is the epigraph value (None for QP-type relaxations whose y and v
    were eliminated).  quad_value caches x^T Q x for cheap cut-violation
    tests.  cut_multipliers holds one value per pool cut for QCP solves.
    """

    x: np.ndarray
    y: np.ndarray
    value: float
    v: float | None = None
    quad_value: float = 0.0
    cut_multipliers: np.ndarray | None = None
    kkt_residual: float = 0.0
    iterations: int = 0

    def feasibility_error(self, inst: MiqpInstance) -> float:
        """Max violation of Ax=b, box, and hull membership (for tests)."""
        err = 0.0
        if inst.m:
            err = float(np.abs(inst.A @ self.x - inst.b).max())
        for i, dom in enumerate(inst.domains):
            err = max(err, dom.L - self.x[i], self.x[i] - dom.U)
            hull = inst.hulls[i]
            err = max(err, self.y[i] - hull.upper(self.x[i]))
            lo = self.x[i] ** 2 if hull.lower_tag == "square" \
                else hull.upper(self.x[i])
            err = max(err, lo - self.y[i])
        return float(err)


def select_alpha(instance: MiqpInstance) -> AlphaSelection:
    """Pick the equality-penalty weight by escalating until mu stabilizes.

    Starting from alpha_0 = max(1, ||Q||_F / max(1, ||A^T A||_F)), try
    alpha_0 * 10^t for t = 0..8 and return the first alpha whose mu value
    changes by at most 1e-3 (relative) when alpha grows tenfold.  The
    returned alpha is frozen for the whole solve.  With no equality rows,
    alpha is 0 and mu is -lambda_min(Q).
    """
    if instance.m == 0:
        return AlphaSelection(alpha=0.0, mu=-min_eigenvalue(instance.Q))
    AtA = instance.A.T @ instance.A
    alpha0 = max(1.0, float(np.linalg.norm(instance.Q, "fro"))
                 / max(1.0, float(np.linalg.norm(AtA, "fro"))))
    eye = np.eye(instance.n)
    trace = []
    mu_t = -min_generalized_eigenvalue(instance.Q, eye + alpha0 * AtA)
    for t in range(9):
        alpha_t = alpha0 * 10.0 ** t
        trace.append((alpha_t, mu_t))
        if t == 8:
            return AlphaSelection(alpha=alpha_t, mu=mu_t, trace=tuple(trace),
                                  capped=True)
        mu_next = -min_generalized_eigenvalue(
            instance.Q, eye + (alpha_t * 10.0) * AtA)
        if abs(mu_next - mu_t) <= 1e-3 * max(1.0, abs(mu_t)):
            return AlphaSelection(alpha=alpha_t, mu=mu_t, trace=tuple(trace))
        mu_t = mu_next


def initial_perturbation(instance: MiqpInstance, alpha: float):
    """Uniform seed perturbation d0 = mu * ones, or None when unneeded.

    mu is -lambda_min(Q) without equality rows, else
    -lambda_min(Q, I + alpha A^T A).  Returns None when the relevant
    restriction of Q is already positive semidefinite (the caller should
    solve the continuous convex relaxation directly).
    """
    scale = max(1.0, float(np.abs(instance.Q).max(initial=0.0)))
    if instance.m == 0:
        lam = min_eigenvalue(instance.Q)
        if lam >= -_GATE_TOL * scale:
            return None
        return np.full(instance.n, -lam)
    basis = nullspace_basis(instance.A, instance.n)
    if projected_min_eigenvalue(instance.Q, basis) >= -_GATE_TOL * scale:
        return None
    mu = -min_generalized_eigenvalue(
        instance.Q, np.eye(instance.n) + alpha * (instance.A.T @ instance.A))
    return np.full(instance.n, mu)


# ---------------------------------------------------------------------------
# node reduction


def _tighten_domain(dom, lo, hi):
    """Intersect a domain with node bounds [lo, hi].

    Returns ("empty", None), ("fixed", value), or ("free", (L, U)) where
    for two-point kinds the endpoints are the original admissible pair.
    """
    tol = 1e-9
    if dom.kind in ("binary", "two_point"):
        pts = [p for p in dom.points if lo - tol <= p <= hi + tol]
        if not pts:
            return "empty", None
        if len(pts) == 1:
            return "fixed", pts[0]
        return "free", (dom.L, dom.U)
    if dom.kind == "integer_range":
        L = float(np.ceil(max(lo, dom.L) - tol))
        U = float(np.floor(min(hi, dom.U) + tol))
        if L > U:
            return "empty", None
        if L == U:
            return "fixed", L
        return "free", (L, U)
    L, U = max(lo, dom.L), min(hi, dom.U)
    if L > U + tol:
        return "empty", None
    if U - L <= 1e-12:
        return "fixed", 0.5 * (L + U)
    return "free", (L, U)


@dataclass
class ReducedProblem:
    """Instance restricted to node bounds with fixed variables eliminated.

    Carries the free-variable data (Qr, qr, Ar, br, bounds), the constant
    objective offset from fixed variables, the nullspace basis of Ar, and a
    least-norm particular solution x_hat of Ar x = br.  Construction raises
    InfeasibleRelaxation when emptiness is detected.
    """

    inst: MiqpInstance
    free: np.ndarray           # indices of free variables
    fixed: np.ndarray          # indices of fixed variables
    fixed_values: np.ndarray
    lower: np.ndarray          # node bounds of free variables
    upper: np.ndarray
    Qr: np.ndarray
    qr: np.ndarray             # q_free + 2 Q[free, fixed] x_fixed
    Ar: np.ndarray
    br: np.ndarray
    const: float               # objective contribution of fixed variables
    quad_fixed: float          # x_fixed^T Q_ff x_fixed (cut-row offset)
    basis: NullspaceBasis
    x_hat: np.ndarray

    @property
    def n_free(self) -> int:
        return self.free.shape[0]

    @staticmethod
    def build(inst: MiqpInstance, lower, upper) -> "ReducedProblem":
        lower = np.asarray(lower, dtype=float).reshape(-1)
        upper = np.asarray(upper, dtype=float).reshape(-1)
        if lower.shape[0] != inst.n or upper.shape[0] != inst.n:
            raise ValueError("node bounds must have length n")
        free, fixed, fixed_vals = [], [], []
        lo_f, up_f = [], []
        for i, dom in enumerate(inst.domains):
            status, payload = _tighten_domain(dom, lower[i], upper[i])
            if status == "empty":
                raise InfeasibleRelaxation(f"variable {i}: empty domain slice")
            if status == "fixed":
                fixed.append(i)
                fixed_vals.append(payload)
            else:
                free.append(i)
                lo_f.append(payload[0])
                up_f.append(payload[1])
        free = np.array(free, dtype=int)
        fixed = np.array(fixed, dtype=int)
        xf = np.array(fixed_vals, dtype=float)
        lo_f = np.array(lo_f, dtype=float)
        up_f = np.array(up_f, dtype=float)

        Qff = inst.Q[np.ix_(fixed, fixed)] if fixed.size else np.zeros((0, 0))
        quad_fixed = float(xf @ Qff @ xf) if fixed.size else 0.0
        const = quad_fixed + (float(inst.q[fixed] @ xf) if fixed.size else 0.0)
        Qr = inst.Q[np.ix_(free, free)] if free.size else np.zeros((0, 0))
        qr = inst.q[free].copy() if free.size else np.zeros(0)
        if fixed.size and free.size:
            qr = qr + 2.0 * (inst.Q[np.ix_(free, fixed)] @ xf)

        if inst.m:
            Ar = inst.A[:, free] if free.size else np.zeros((inst.m, 0))
            br = inst.b - (inst.A[:, fixed] @ xf if fixed.size else 0.0)
            a_scale = max(1.0, float(np.abs(inst.A).max()))
            b_scale = max(1.0, float(np.abs(inst.b).max(initial=0.0)))
            keep = []
            for r in range(Ar.shape[0]):
                if np.abs(Ar[r]).max(initial=0.0) <= 1e-12 * a_scale:
                    if abs(br[r]) > 1e-8 * b_scale:
                        raise InfeasibleRelaxation(
                            f"equality row {r} reduces to 0 = {br[r]:.3e}")
                else:
                    keep.append(r)
            Ar, br = Ar[keep], br[keep]
            if Ar.shape[0] and free.size:
                # drop rows made dependent by the fixing; inconsistency
                # means the node is empty
                from scipy.linalg import qr as _qr
                _, R, piv = _qr(Ar.T, mode="economic", pivoting=True)
                diag = np.abs(np.diag(R)) if R.size else np.array([])
                rtol = 1e-10 * max(1.0, diag[0] if diag.size else 1.0)
                rank = int(np.sum(diag > rtol))
                if rank < Ar.shape[0]:
                    sol, *_ = np.linalg.lstsq(Ar, br, rcond=None)
                    resid = np.abs(Ar @ sol - br).max(initial=0.0)
                    if resid > 1e-8 * max(b_scale, a_scale):
                        raise InfeasibleRelaxation("dependent equality rows "
                                                   "are inconsistent")
                    rows = sorted(piv[:rank])
                    Ar, br = Ar[rows], br[rows]
        else:
            Ar = np.zeros((0, free.size))
            br = np.zeros(0)

        basis = nullspace_basis(Ar, free.size) if free.size \
            else NullspaceBasis(Z=np.zeros((0, 0)))
        if free.size and Ar.shape[0]:
            x_hat, *_ = np.linalg.lstsq(Ar, br, rcond=None)
            resid = float(np.abs(Ar @ x_hat - br).max(initial=0.0))
            if resid > 1e-8 * max(1.0, float(np.abs(br).max(initial=0.0))):
                raise InfeasibleRelaxation("equality system has no solution "
                                           f"(residual {resid:.3e})")
        else:
            x_hat = np.zeros(free.size)
            if not free.size and br.size and np.abs(br).max() > 1e-8:
                raise InfeasibleRelaxation("all variables fixed but Ax != b")

        red = ReducedProblem(inst=inst, free=free, fixed=fixed,
                             fixed_values=xf, lower=lo_f, upper=up_f,
                             Qr=Qr, qr=qr, Ar=Ar, br=br, const=const,
                             quad_fixed=quad_fixed, basis=basis, x_hat=x_hat)
        red._check_box_consistency()
        return red

    def _check_box_consistency(self):
        """Cheap emptiness checks of {Ar x = br} intersect the box."""
        if not self.n_free:
            return
        # coordinates the equalities determine completely must sit in the box
        if self.basis.dim:
            znorm = np.abs(self.basis.Z).max(axis=1)
        else:
            znorm = np.zeros(self.n_free)
        pinned = znorm <= 1e-12
        bad = pinned & ((self.x_hat < self.lower - 1e-8)
                        | (self.x_hat > self.upper + 1e-8))
        if np.any(bad):
            raise InfeasibleRelaxation("equality-pinned variable outside box")
        if not self.Ar.shape[0]:
            return
        # row-wise interval bound: b_r outside the range of a_r^T x over the
        # box proves emptiness without an LP (sound, not complete)
        pos = np.clip(self.Ar, 0.0, None)
        neg = self.Ar - pos
        row_lo = pos @ self.lower + neg @ self.upper
        row_hi = pos @ self.upper + neg @ self.lower
        tol = 1e-9 * np.maximum(1.0, np.abs(self.br))
        if np.any(self.br < row_lo - tol) or np.any(self.br > row_hi + tol):
            raise InfeasibleRelaxation("equality row unreachable inside box")
        # witness shortcut: projected midpoint often certifies feasibility
        mid = 0.5 * (self.lower + self.upper)
        w = self.x_hat + self.basis.Z @ (self.basis.Z.T @ (mid - self.x_hat))
        if np.all(w >= self.lower - 1e-9) and np.all(w <= self.upper + 1e-9):
            return
        res = scipy.optimize.linprog(
            c=np.zeros(self.n_free), A_eq=self.Ar, b_eq=self.br,
            bounds=list(zip(self.lower, self.upper)), method="highs")
        if res.status == 2:
            raise InfeasibleRelaxation("box and equality rows are disjoint")

    def hull_coeffs(self):
        """Node-level secant coefficients (slope, intercept) per free var."""
        slope = np.empty(self.n_free)
        intercept = np.empty(self.n_free)
        for k, i in enumerate(self.free):
            dom = self.inst.domains[i]
            if dom.kind in ("binary", "two_point"):
                a, b = dom.points
            else:
                a, b = self.lower[k], self.upper[k]
            slope[k] = a + b
            intercept[k] = -a * b
        return slope, intercept

    def square_mask(self):
        """Free variables whose lower hull is x**2 (explicit y needed)."""
        return np.array([self.inst.domains[i].kind in SQUARE_HULL_KINDS
                         for i in self.free], dtype=bool)

    def expand_x(self, x_free) -> np.ndarray:
        x = np.empty(self.inst.n)
        if self.free.size:
            x[self.free] = x_free
        if self.fixed.size:
            x[self.fixed] = self.fixed_values
        return x

    def expand_y(self, y_free) -> np.ndarray:
        y = np.empty(self.inst.n)
        if self.free.size:
            y[self.free] = y_free
        if self.fixed.size:
            y[self.fixed] = self.fixed_values ** 2
        return y

    def restrict(self, d) -> np.ndarray:
        return np.asarray(d, dtype=float).reshape(-1)[self.free]


def _all_fixed_solution(red: ReducedProblem) -> RelaxationSolution:
    x = red.expand_x(np.zeros(0))
    y = red.expand_y(np.zeros(0))
    quad = float(x @ red.inst.Q @ x)
    value = quad + float(red.inst.q @ x)
    return RelaxationSolution(x=x, y=y, value=value, quad_value=quad)


# ---------------------------------------------------------------------------
# QP-type relaxations (y eliminated)


def solve_qp_child(instance: MiqpInstance, d, node_bounds,
                   ipm_opts=None, red=None) -> RelaxationSolution:
    """Bound min x^T (Q + diag d) x + q^T x - d^T y over the node's hulls.

    y is eliminated coordinatewise: the secant u_i when d_i >= 0 or the
    hull is two-point/binary (l = u there), and x_i**2 otherwise, which
    cancels the d_i term.  The result is a box-and-equality QP on the
    nullspace, convex whenever d is certified for the parent space.
    ipm_opts, if given, overrides interior-point keyword defaults; red may
    carry a reduction already built for these exact node bounds.

    Raises InfeasibleRelaxation for empty nodes and SolveFailure when the
    subproblem solve misses KKT certification.
    """
    lower, upper = node_bounds
    if red is None:
        red = ReducedProblem.build(instance, lower, upper)
    d_f = red.restrict(d)
    if red.n_free == 0:
        return _all_fixed_solution(red)

    slope, intercept = red.hull_coeffs()
    square = red.square_mask()
    use_u = (d_f >= 0.0) | ~square
    dhat = np.where(use_u, d_f, 0.0)

    H = red.Qr + np.diag(dhat)
    lin = red.qr - np.where(use_u, d_f * slope, 0.0)
    const = red.const - float(np.sum(np.where(use_u, d_f * intercept, 0.0)))

    Z = red.basis.Z
    if Z.shape[1] == 0:
        x_f = red.x_hat
        if np.any(x_f < red.lower - 1e-8) or np.any(x_f > red.upper + 1e-8):
            raise InfeasibleRelaxation("unique equality solution outside box")
        z_opt = np.zeros(0)
        value = float(x_f @ H @ x_f + lin @ x_f) + const
        result = None
    else:
        P0 = 2.0 * (Z.T @ H @ Z)
        c0 = Z.T @ (2.0 * (H @ red.x_hat) + lin)
        r0 = float(red.x_hat @ H @ red.x_hat + lin @ red.x_hat) + const
        cons = []
        for k in range(red.n_free):
            zk = Z[k]
            if np.abs(zk).max(initial=0.0) <= 1e-12:
                continue  # pinned by equalities; checked at build time
            cons.append(qcqp.QuadConstraint(None, zk.copy(),
                                            float(red.x_hat[k] - red.upper[k])))
            cons.append(qcqp.QuadConstraint(None, -zk.copy(),
                                            float(red.lower[k] - red.x_hat[k])))
        mid = 0.5 * (red.lower + red.upper)
        z0 = Z.T @ (mid - red.x_hat)
        result = qcqp.solve_qcqp(P0, c0, r0, cons, z0=z0,
                                 **(ipm_opts or {}))
        _require_kkt(result, c0)
        z_opt = result.z
        x_f = red.x_hat + Z @ z_opt
        value = result.obj

    # same roundoff guard as the epigraph path: x can sit ~1e-10 outside
    # the box, where the secant dips below the parabola
    y_f = np.maximum(np.where(use_u, slope * x_f + intercept, x_f ** 2),
                     x_f ** 2)
    x = red.expand_x(x_f)
    y = red.expand_y(y_f)
    quad = float(x @ instance.Q @ x)
    return RelaxationSolution(
        x=x, y=y, value=value, quad_value=quad,
        kkt_residual=0.0 if result is None else max(result.r_dual,
                                                    result.r_primal),
        iterations=0 if result is None else result.iterations)


def solve_eigenvalue_relaxation(instance: MiqpInstance, mu: float) -> RelaxationSolution:
    """Spectral relaxation: uniform perturbation mu >= 0 over root bounds.

    Equivalent to minimizing x^T (Q + mu I) x + q^T x - mu * sum_i u_i(x_i)
    over {Ax=b, L <= x <= U}; the returned value lower-bounds the mixed
    problem whenever Q + mu I is convex on the nullspace of A.
    """
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    d = np.full(instance.n, float(mu))
    return solve_qp_child(instance, d, (instance.lower, instance.upper))


def _require_kkt(result: qcqp.IpmResult, c0) -> None:
    scale = max(1.0, float(np.abs(c0).max(initial=0.0)), abs(result.obj))
    resid = max(result.r_dual, result.r_primal, result.gap)
    if result.status != "optimal" and resid > _KKT_TOL * scale:
        raise SolveFailure(
            f"subproblem not certified (status {result.status}, "
            f"residual {resid:.3e})", best=result)


# ---------------------------------------------------------------------------
# QCP relaxation (explicit y and epigraph v)


@dataclass
class QcpModel:
    """Assembled epigraph model over nullspace coordinates.

    Variables z = (x_z, y_square, v); constraint list starts with one row
    per pool cut (multiplier extraction relies on that order).
    """

    red: ReducedProblem
    pool: CutPool
    P0: np.ndarray
    c0: np.ndarray
    r0: float
    constraints: list
    n_cuts: int
    nz: int
    sq_idx: np.ndarray      # positions (in free order) with explicit y
    z0: np.ndarray


def assemble_qcp(instance: MiqpInstance, cut_pool: CutPool,
                 node_bounds=None) -> QcpModel:
    """Build the epigraph relaxation of a certified cut pool.

    min v + q^T x  s.t.  v >= x^T (Q + diag d) x - d^T y for each pool d,
    x = x_hat + Z x_z, hull rows for y, box rows for x.  y variables of
    binary/two-point coordinates are eliminated through their (equal)
    hulls.
    """
    if len(cut_pool) == 0:
        raise ValueError("cut pool is empty")
    if node_bounds is None:
        node_bounds = (instance.lower, instance.upper)
    red = ReducedProblem.build(instance, node_bounds[0], node_bounds[1])
    nf = red.n_free
    if nf == 0:
        raise InfeasibleRelaxation("no free variables; relaxation is a point")
    Z = red.basis.Z
    k = Z.shape[1]
    slope, intercept = red.hull_coeffs()
    square = red.square_mask()
    sq_idx = np.flatnonzero(square)
    ny = sq_idx.shape[0]
    nz = k + ny + 1
    iv = nz - 1  # position of v
    ypos = {int(f): k + j for j, f in enumerate(sq_idx)}

    # objective: v + q_free^T x + const (cross terms with fixed variables
    # live inside the cut rows, not the objective)
    q_f = instance.q[red.free]
    c0 = np.zeros(nz)
    c0[:k] = Z.T @ q_f
    c0[iv] = 1.0
    r0 = float(q_f @ red.x_hat) + (red.const - red.quad_fixed)

    cross = red.qr - q_f  # 2 Q[free, fixed] x_fixed

    cons = []
    for d_full in cut_pool.cuts:
        d_f = red.restrict(d_full)
        M = red.Qr + np.diag(d_f)
        w = cross - np.where(square, 0.0, d_f * slope)
        cj = float(red.quad_fixed
                   - np.sum(np.where(square, 0.0, d_f * intercept)))
        P = np.zeros((nz, nz))
        P[:k, :k] = 2.0 * (Z.T @ M @ Z)
        a = np.zeros(nz)
        a[:k] = Z.T @ (2.0 * (M @ red.x_hat) + w)
        for j, f in enumerate(sq_idx):
            a[k + j] = -d_f[f]
        a[iv] = -1.0
        r = float(red.x_hat @ M @ red.x_hat + w @ red.x_hat) + cj
        cons.append(qcqp.QuadConstraint(P, a, r))

    for f in sq_idx:
        zrow = Z[f]
        # lower hull x_f^2 <= y_f
        P = np.zeros((nz, nz))
        P[:k, :k] = 2.0 * np.outer(zrow, zrow)
        a = np.zeros(nz)
        a[:k] = 2.0 * red.x_hat[f] * zrow
        a[ypos[int(f)]] = -1.0
        cons.append(qcqp.QuadConstraint(P, a, float(red.x_hat[f] ** 2)))
        # upper hull y_f <= slope x_f + intercept
        a = np.zeros(nz)
        a[ypos[int(f)]] = 1.0
        a[:k] -= slope[f] * zrow
        cons.append(qcqp.QuadConstraint(
            None, a, float(-slope[f] * red.x_hat[f] - intercept[f])))

    for f in range(nf):
        zrow = Z[f]
        if np.abs(zrow).max(initial=0.0) <= 1e-12:
            continue
        a = np.zeros(nz)
        a[:k] = zrow
        cons.append(qcqp.QuadConstraint(None, a,
                                        float(red.x_hat[f] - red.upper[f])))
        a = np.zeros(nz)
        a[:k] = -zrow
        cons.append(qcqp.QuadConstraint(None, a,
                                        float(red.lower[f] - red.x_hat[f])))

    # strictly interior-ish start
    mid = 0.5 * (red.lower + red.upper)
    z0 = np.zeros(nz)
    z0[:k] = Z.T @ (mid - red.x_hat)
    x0 = red.x_hat + Z @ z0[:k]
    for j, f in enumerate(sq_idx):
        u0 = slope[f] * x0[f] + intercept[f]
        z0[k + j] = 0.5 * (x0[f] ** 2 + max(u0, x0[f] ** 2 + 0.1))
    worst = -np.inf
    for c in cons[:len(cut_pool)]:
        val = 0.5 * z0 @ c.P @ z0 + c.a @ z0 + c.r
        worst = max(worst, val + z0[iv])  # cut value before subtracting v
    z0[iv] = worst + 1.0

    return QcpModel(red=red, pool=cut_pool, P0=np.zeros((nz, nz)), c0=c0,
                    r0=r0, constraints=cons, n_cuts=len(cut_pool), nz=nz,
                    sq_idx=sq_idx, z0=z0)


def solve_qcp(model: QcpModel) -> RelaxationSolution:
    """Solve an assembled epigraph model to KKT certification.

    Returns the full-space solution with per-cut multipliers (needed by the
    surrogate root perturbation).  Raises SolveFailure with the best
    iterate when certification fails.
    """
    result = qcqp.solve_qcqp(model.P0, model.c0, model.r0, model.constraints,
                             z0=model.z0)
    _require_kkt(result, model.c0)
    red = model.red
    Z = red.basis.Z
    k = Z.shape[1]
    x_f = red.x_hat + Z @ result.z[:k]
    slope, intercept = red.hull_coeffs()
    square = red.square_mask()
    y_f = slope * x_f + intercept
    for j, f in enumerate(model.sq_idx):
        y_f[f] = result.z[k + j]
    # keep hull membership exact against roundoff
    y_f = np.where(square, np.maximum(y_f, x_f ** 2), y_f)
    # cut rows carry the fixed-block quadratic offset, so z[-1] is already
    # the full-space epigraph value
    v = float(result.z[-1])
    x = red.expand_x(x_f)
    y = red.expand_y(y_f)
    quad = float(x @ red.inst.Q @ x)
    nu = np.maximum(result.lam[:model.n_cuts], 0.0)
    return RelaxationSolution(
        x=x, y=y, value=float(v + red.inst.q @ x), v=v, quad_value=quad,
        cut_multipliers=nu,
        kkt_residual=max(result.r_dual, result.r_primal),
        iterations=result.iterations)


def cut_violation(d, solution: RelaxationSolution) -> float:
    """Amount by which perturbation d cuts off the relaxation point.

    Returns x^T (Q + diag d) x - d^T y - v; the point is considered
    violated when this exceeds 1e-6 * max(1, |v|).
    """
    if solution.v is None:
        raise ValueError("cut violation needs an epigraph (QCP) solution")
    d = np.asarray(d, dtype=float).reshape(-1)
    return float(solution.quad_value
                 + d @ (solution.x ** 2 - solution.y) - solution.v)


def surrogate_root_perturbation(pool: CutPool) -> np.ndarray:
    """Multiplier-weighted average of the pool, for child-node inheritance.

    d_root = sum_i nu_i d_i / sum_i nu_i using the last QCP multipliers.
    Degenerate multipliers (sum <= 1e-12) fall back to the member with the
    largest multiplier, or to the first pool member when no multipliers
    exist.
    """
    if len(pool) == 0:
        raise ValueError("cut pool is empty")
    nu = pool.multipliers
    if nu is None:
        return pool.cuts[0].copy()
    nu = np.maximum(np.asarray(nu, dtype=float).reshape(-1), 0.0)
    if nu.shape[0] != len(pool):
        raise ValueError("multiplier count does not match pool size")
    total = float(nu.sum())
    if total <= 1e-12:
        return pool.cuts[int(np.argmax(nu))].copy()
    d = np.zeros_like(pool.cuts[0])
    for w, dd in zip(nu, pool.cuts):
        d += w * dd
    return d / total


@dataclass
class CuttingSurfaceResult:
    """Outcome of the cutting-surface loop at one node."""

    bound: float
    pool: CutPool
    solution: RelaxationSolution
    initial_bound: float        # single-perturbation (spectral) bound
    bound_history: list
    cuts_added: int
    separation_traces: list | None = None


def cutting_surface(instance: MiqpInstance, alpha: float, max_cuts: int = 20,
                    mode: str = "smooth",
                    sep_config: SeparationConfig | None = None,
                    collect_traces: bool = False) -> CuttingSurfaceResult:
    """Cutting-surface loop: grow a cut pool until violation dries up.

    Starts from the uniform spectral perturbation, then alternates QCP
    solves with separation runs (smooth or nonsmooth coordinate descent),
    adding each new cut only when it violates the incumbent relaxation
    point by more than 1e-6 * max(1, |v|).  The reported bound is the best
    certified bound seen, so the sequence is non-decreasing even under
    subproblem failures.
    """
    if mode not in ("smooth", "nonsmooth"):
        raise ValueError(f"unknown separation mode {mode!r}")
    d0 = initial_perturbation(instance, alpha)
    if d0 is None:
        raise ValueError("instance is convex on the nullspace; "
                         "solve the continuous relaxation instead")
    red = ReducedProblem.build(instance, instance.lower, instance.upper)
    basis_full = nullspace_basis(instance.A, instance.n)
    pool = CutPool(alpha=alpha, Q=instance.Q, basis=basis_full)
    pool.add(d0)

    init = solve_qp_child(instance, d0, (instance.lower, instance.upper))
    bound = init.value
    history = [bound]
    traces = [] if collect_traces else None

    sol = None
    try:
        sol = solve_qcp(assemble_qcp(instance, pool))
        pool.multipliers = sol.cut_multipliers
        bound = max(bound, sol.value)
    except SolveFailure:
        warnings.warn("initial epigraph solve not certified; "
                      "keeping the spectral bound")
    history.append(bound)

    cuts_added = 0
    if sol is not None and red.n_free:
        base_cfg = sep_config or SeparationConfig()
        for _ in range(max_cuts):
            eta_f = eta_from_relaxation(sol.x[red.free], sol.y[red.free])
            if float(eta_f.max(initial=0.0)) <= 1e-12:
                break  # relaxation is exact at this point
            sep_in = SeparationInput(Q=red.Qr, A=red.Ar, alpha=alpha,
                                     eta=eta_f)
            cfg = SeparationConfig(
                rho0=base_cfg.rho0 if base_cfg.rho0 is not None
                else rho_init(red.Qr, red.lower, red.upper),
                max_iter_per_var=base_cfg.max_iter_per_var,
                sigma_min=base_cfg.sigma_min,
                sigma_update=base_cfg.sigma_update,
                eps_update=base_cfg.eps_update,
                check_every=base_cfg.check_every,
                eps_check=base_cfg.eps_check,
                rho_update=base_cfg.rho_update,
                max_restarts=base_cfg.max_restarts,
                restart_factor=base_cfg.restart_factor,
                trace=collect_traces)
            sep = solve_smooth(sep_in, cfg) if mode == "smooth" \
                else solve_nonsmooth(sep_in, cfg)
            if traces is not None and sep.trace:
                traces.append(sep.trace)
            mu0 = float(d0[0])
            d_new = np.full(instance.n, mu0)
            d_new[red.free] = sep.d
            if cut_violation(d_new, sol) <= _VIOLATION_TOL * max(1.0, abs(sol.v)):
                break
            pool.add(d_new)
            cuts_added += 1
            try:
                sol_new = solve_qcp(assemble_qcp(instance, pool))
            except SolveFailure:
                warnings.warn("epigraph re-solve not certified; stopping "
                              "with the best prior bound")
                pool.cuts.pop()
                cuts_added -= 1
                break
            sol = sol_new
            pool.multipliers = sol.cut_multipliers
            bound = max(bound, sol.value)
            history.append(bound)

    return CuttingSurfaceResult(bound=bound, pool=pool,
                                solution=sol if sol is not None else init,
                                initial_bound=init.value,
                                bound_history=history,
                                cuts_added=cuts_added,
                                separation_traces=traces)
