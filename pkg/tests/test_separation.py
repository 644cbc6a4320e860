"""Coordinate-descent separation: steps, restarts, and full solves."""

import numpy as np
import pytest

from quadrelax.linalg import min_eigenvalue, nullspace_basis, projected_min_eigenvalue
from quadrelax.separation import (
    SeparationConfig,
    SeparationInput,
    check_restart,
    coordinate_step_smooth,
    eta_from_relaxation,
    rho_init,
    select_index_smooth,
    sigma_init,
    solve_nonsmooth,
    solve_smooth,
    update_sigma,
)

# Worked 2x2 problem: one equality row, indefinite Q.
Q2 = np.array([[0.0, 2.0], [2.0, -1.0]])
A2 = np.array([[0.0, 1.0]])


def random_indefinite_input(rng, n, with_rows=True):
    B = rng.normal(size=(n, n))
    Q = 0.5 * (B + B.T)
    Q -= (min_eigenvalue(Q) + 1.0) * np.eye(n) * 0  # keep as drawn
    A = rng.normal(size=(max(1, n // 3), n)) if with_rows else np.zeros((0, n))
    alpha = 1.0 if with_rows else 0.0
    base = Q + alpha * A.T @ A
    if min_eigenvalue(base) >= -1e-6:
        Q = Q - (abs(min_eigenvalue(base)) + 1.0) * np.eye(n)
    eta = np.abs(rng.normal(size=n))
    return SeparationInput(Q=Q, A=A, alpha=alpha, eta=eta)


class TestEta:
    def test_basic_and_clamp(self):
        eta = eta_from_relaxation([0.5, 1.0], [0.3, 1.0 - 5e-11])
        assert eta[0] == pytest.approx(0.05)
        assert eta[1] == 0.0  # clamped tiny negative

    def test_negative_slack_rejected(self):
        with pytest.raises(ValueError, match="slack"):
            eta_from_relaxation([1.0], [0.9])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            eta_from_relaxation([1.0, 2.0], [1.0])


class TestSeeds:
    def test_rho_init_unit_scale(self):
        assert rho_init(np.eye(2), [0, 0], [1, 1]) == pytest.approx(1e-4)

    def test_rho_init_large_entries(self):
        Q = np.array([[250.0, 0.0], [0.0, 1.0]])
        # floor(250/100) * 250 = 500
        assert rho_init(Q, [0, 0], [1, 1]) == pytest.approx(2e-7)

    def test_rho_init_wide_box(self):
        assert rho_init(np.eye(2), [0, 0], [100, 100]) == pytest.approx(1e4)

    def test_rho_init_fixed_box_rejected(self):
        with pytest.raises(ValueError, match="fixed"):
            rho_init(np.eye(2), [1, 1], [1, 1])

    def test_sigma_init_anchor(self):
        # slopes at d = (3,3), rho = 1e-4, eta = 0.25: 0.2506 / 0.6
        slopes = np.array([0.2506, 0.2506])
        v_diag = np.array([0.6, 0.6])
        assert sigma_init(slopes, v_diag) == pytest.approx(0.2506 / 0.6)

    def test_sigma_init_validates(self):
        with pytest.raises(ValueError):
            sigma_init([1.0], [0.0])
        with pytest.raises(ValueError):
            sigma_init([], [])


class TestStepPieces:
    def test_select_index_ties_lowest(self):
        assert select_index_smooth([1.0, -2.0, 2.0]) == 1
        assert select_index_smooth([-3.0, 3.0]) == 0
        assert select_index_smooth([0.0, 0.0]) == 0

    def test_step_stationarity(self):
        # Residual of the stationarity equation in cleared form: multiply
        # through by the (positive) denominator 1 + Delta V_ii, which keeps
        # the measurement well conditioned next to the barrier pole.
        # Ranges mirror states the solver can actually visit: |d| inside
        # the restart trust region, sigma above its floor, moderate rho.
        rng = np.random.default_rng(23)
        for _ in range(500):
            v = 10.0 ** rng.uniform(-2, 2)
            eta_i = 0.0 if rng.random() < 0.15 else 10.0 ** rng.uniform(-4, 1)
            rho = 10.0 ** rng.uniform(-8, 0)
            d_i = rng.uniform(-20.0, 20.0)
            sigma = 10.0 ** rng.uniform(-5, 1)
            step = coordinate_step_smooth(0, d_i, eta_i, v, rho, sigma)
            t = 1.0 + step.delta * v
            s_lin = eta_i + 2 * rho * (d_i + step.delta)
            scale = max(1.0, abs(s_lin) * abs(t), sigma * v)
            assert t > 0.0
            assert abs(s_lin * t - sigma * v) <= 1e-10 * scale

    def test_step_validates(self):
        with pytest.raises(ValueError):
            coordinate_step_smooth(0, 1.0, 1.0, -0.5, 1e-4, 0.1)
        with pytest.raises(ValueError):
            coordinate_step_smooth(0, 1.0, 1.0, 0.5, 0.0, 0.1)

    def test_check_restart_strict(self):
        assert not check_restart(20.0, 2.0)
        assert check_restart(20.0 + 1e-9, 2.0)

    def test_update_sigma(self):
        cfg = SeparationConfig()
        assert update_sigma(1.0, 0.02, 1.0, cfg) == pytest.approx(0.8)
        assert update_sigma(1.0, 0.05, 1.0, cfg) == 1.0
        assert update_sigma(1e-5, 0.0, 1.0, cfg) == pytest.approx(1e-5)


class TestSolveSmooth:
    def test_worked_case_symmetric_slack(self):
        inp = SeparationInput(Q=Q2, A=A2, alpha=1.0, eta=[0.25, 0.25])
        res = solve_smooth(inp, SeparationConfig(rho0=1e-4))
        assert res.status == "converged"
        # membership boundary for this data is d1*d2 = 4, d >= 0
        assert np.abs(res.d - 2.0).max() < 0.2
        assert inp.eta @ res.d == pytest.approx(1.0, abs=0.05)
        assert res.d[0] * res.d[1] >= 4.0 * (1 - 1e-6)

    def test_weak_regularization_restarts(self):
        inp = SeparationInput(Q=Q2, A=A2, alpha=1.0, eta=[0.24, 0.0])
        res = solve_smooth(inp, SeparationConfig(rho0=1e-8))
        assert res.status == "converged"
        assert res.restarts >= 1
        assert res.rho > 1e-8
        assert res.d[0] * res.d[1] >= 4.0 * (1 - 1e-6)

    def test_rho0_required(self):
        inp = SeparationInput(Q=Q2, A=A2, alpha=1.0, eta=[0.25, 0.25])
        with pytest.raises(ValueError, match="rho0"):
            solve_smooth(inp, SeparationConfig())

    def test_psd_input_rejected(self):
        inp = SeparationInput(Q=np.eye(2), A=np.zeros((0, 2)), alpha=0.0,
                              eta=[1.0, 1.0])
        with pytest.raises(ValueError, match="positive semidefinite"):
            solve_smooth(inp, SeparationConfig(rho0=1e-4))

    def test_returned_d_always_in_membership_set(self):
        rng = np.random.default_rng(41)
        for _ in range(20):
            n = int(rng.integers(2, 9))
            inp = random_indefinite_input(rng, n, with_rows=bool(rng.integers(2)))
            cfg = SeparationConfig(rho0=float(10.0 ** rng.uniform(-8, -2)))
            res = solve_smooth(inp, cfg)
            lam = min_eigenvalue(inp.barrier_base() + np.diag(res.d))
            assert lam >= -1e-8 * max(1.0, np.abs(inp.Q).max())

    def test_projected_psd_on_nullspace(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            n = int(rng.integers(3, 8))
            inp = random_indefinite_input(rng, n, with_rows=True)
            res = solve_smooth(inp, SeparationConfig(rho0=1e-4))
            basis = nullspace_basis(inp.A)
            lam = projected_min_eigenvalue(inp.Q + np.diag(res.d), basis)
            assert lam >= -1e-6

    def test_trace_rows(self):
        inp = SeparationInput(Q=Q2, A=A2, alpha=1.0, eta=[0.25, 0.25])
        res = solve_smooth(inp, SeparationConfig(rho0=1e-4, trace=True))
        assert res.trace and len(res.trace) <= res.iterations
        k, i, delta, sigma, rho, obj = res.trace[0]
        assert k == 1 and i in (0, 1) and rho == pytest.approx(1e-4)


class TestSolveNonsmooth:
    def test_worked_case(self):
        inp = SeparationInput(Q=Q2, A=A2, alpha=1.0, eta=[0.25, 0.25])
        res = solve_nonsmooth(inp, SeparationConfig())
        assert res.status == "converged"
        assert np.abs(res.d - 2.0).max() < 0.2
        assert res.d[0] * res.d[1] >= 4.0 * (1 - 1e-6)

    def test_membership_preserved(self):
        rng = np.random.default_rng(43)
        for _ in range(20):
            n = int(rng.integers(2, 9))
            inp = random_indefinite_input(rng, n, with_rows=bool(rng.integers(2)))
            res = solve_nonsmooth(inp, SeparationConfig())
            lam = min_eigenvalue(inp.barrier_base() + np.diag(res.d))
            assert lam >= -1e-8 * max(1.0, np.abs(inp.Q).max())

    def test_zero_slack_early_return(self):
        inp = SeparationInput(Q=Q2, A=A2, alpha=1.0, eta=[0.0, 0.0])
        res = solve_nonsmooth(inp, SeparationConfig())
        assert res.status == "converged"
        assert res.iterations == 0
        lam = min_eigenvalue(inp.barrier_base() + np.diag(res.d))
        assert lam >= 0.0

    def test_negative_coordinates_allowed(self):
        # A diagonally dominant column lets d_i go negative while staying
        # in the membership set; the one-sided regularizer exploits that.
        Q = np.array([[5.0, 0.0, 0.0],
                      [0.0, -1.0, 2.0],
                      [0.0, 2.0, -1.0]])
        inp = SeparationInput(Q=Q, A=np.zeros((0, 3)), alpha=0.0,
                              eta=[5.0, 0.1, 0.1])
        res = solve_nonsmooth(inp, SeparationConfig())
        assert res.d[0] < 0.0
        lam = min_eigenvalue(Q + np.diag(res.d))
        assert lam >= -1e-8


class TestInputValidation:
    def test_eta_below_floor_rejected(self):
        with pytest.raises(ValueError, match="eta"):
            SeparationInput(Q=Q2, A=A2, alpha=1.0, eta=[-1e-6, 0.0])

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError, match="alpha"):
            SeparationInput(Q=Q2, A=A2, alpha=-1.0, eta=[0.1, 0.1])

    def test_asymmetric_q_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            SeparationInput(Q=[[0.0, 1.0], [0.0, 0.0]], A=A2, alpha=1.0,
                            eta=[0.1, 0.1])
