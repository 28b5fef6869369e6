from math import comb

import numpy as np
import pytest
from scipy.integrate import quad

from jflow import HermitianField, LatticeGrid, MonitorViolation, assemble_chi, complex_hessian
from jflow.flow import FlowConfig, JFlowProblem, Trajectory, evaluate_state, run_flow
from jflow.functionals import (
    beta_weight,
    compute_c,
    fit_sup_inf_constants,
    functional_I,
    functional_J_increment,
    i_weights,
    normalize_to_I_zero,
    sup_inf_monitor,
)


class TestComputeC:
    @pytest.mark.parametrize(
        "g, chi0, expected",
        [([[1.0]], [[2.0]], 0.5), (np.eye(2), np.diag([2.0, 4.0]), 0.375), (np.eye(3), 4 * np.eye(3), 0.25)],
    )
    def test_constant(self, g, chi0, expected):
        assert compute_c(g, chi0) == pytest.approx(expected, rel=1e-15)

    @pytest.mark.parametrize("n, N", [(1, 64), (2, 16), (3, 8)])
    def test_cohomological_invariance(self, rng, n, N):
        grid = LatticeGrid(n, N)
        chi0 = np.diag(np.arange(2.0, 2.0 + n))
        g = np.eye(n) + 0.1 * np.ones((n, n))
        x = grid.coords
        psi = 0.3 * np.cos(x[0]) + 0.2 * np.sin(sum(x)) + 0.1 * np.cos(2 * x[-1])
        chi = assemble_chi(chi0, complex_hessian(psi, grid))
        assert compute_c(g, chi, grid) == pytest.approx(compute_c(g, chi0), rel=1e-9)


class TestWeights:
    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_beta_quadrature(self, n):
        for k in range(n + 1):
            numeric = comb(n, k) * quad(lambda t: t**k * (1 - t) ** (n - k), 0, 1, epsabs=1e-14, epsrel=1e-14)[0]
            assert beta_weight(n, k) == pytest.approx(numeric, abs=1e-12)

    def test_n2_k1(self):
        assert beta_weight(2, 1) == pytest.approx(1 / 3, abs=1e-15)

    def test_weights_uniform(self):
        np.testing.assert_allclose(i_weights(3), np.full(4, 1 / 24), rtol=1e-15)


class TestFunctionalI:
    @pytest.mark.parametrize("n, N", [(1, 32), (2, 8), (3, 8)])
    def test_constant_potential(self, n, N):
        grid = LatticeGrid(n, N)
        chi0 = np.diag(np.linspace(1.5, 3.0, n))
        s = 0.7
        # with chi_phi = chi0 every mixed density is n! det chi0
        expected = s * grid.volume * np.linalg.det(chi0)
        assert functional_I(np.full(grid.shape, s), chi0, grid) == pytest.approx(expected, rel=1e-12)

    def test_n1_closed_form(self):
        grid = LatticeGrid(1, 64)
        (x,) = grid.coords
        phi = 0.3 * np.cos(x) + 0.1
        # I = 1/2 int phi (2 chi0 + phi''/4) with chi0 = 2
        d2 = -0.3 * np.cos(x)
        expected = 0.5 * grid.integrate(phi * (4.0 + d2 / 4))
        assert functional_I(phi, [[2.0]], grid) == pytest.approx(expected, rel=1e-13)

    def test_variation_matches_density(self, rng):
        # d/ds I(phi + s f) = int f chi_phi^n / n!
        grid = LatticeGrid(2, 16)
        chi0 = np.diag([2.0, 3.0])
        x1, x2 = grid.coords
        phi = 0.2 * np.cos(x1) + 0.1 * np.sin(x1 + x2)
        f = 1.0 + np.cos(x1) + 0.5 * np.sin(x1 + x2)
        h = 1e-4
        num = (functional_I(phi + h * f, chi0, grid) - functional_I(phi - h * f, chi0, grid)) / (2 * h)
        det = assemble_chi(chi0, complex_hessian(phi, grid)).det()
        assert num == pytest.approx(grid.integrate(f * det), rel=1e-7)


class TestNormalize:
    def test_already_zero(self):
        grid = LatticeGrid(1, 32)
        (x,) = grid.coords
        phi = normalize_to_I_zero(0.2 * np.cos(x), [[2.0]], grid)
        out = normalize_to_I_zero(phi, [[2.0]], grid)
        assert np.max(np.abs(out - phi)) <= 1e-10

    def test_constant_one(self):
        grid = LatticeGrid(2, 8)
        out = normalize_to_I_zero(np.ones(grid.shape), np.diag([2.0, 4.0]), grid)
        assert np.max(np.abs(out)) <= 1e-12

    def test_random(self, rng):
        grid = LatticeGrid(2, 16)
        chi0 = np.diag([2.0, 4.0])
        x1, x2 = grid.coords
        phi = rng.uniform(-1, 1) + 0.2 * np.cos(x1) + 0.1 * np.cos(x1 + x2) + 0.05 * np.sin(3 * x2)
        out = normalize_to_I_zero(phi, chi0, grid)
        assert abs(functional_I(out, chi0, grid)) <= 1e-10
        shift = out - phi
        assert np.ptp(shift) <= 1e-14


def _short_run(problem, phi0, **kw):
    cfg = FlowConfig(**{"scheme": "rk4", "stop_residual": 1e-8, "record_every": 5, **kw})
    return run_flow(phi0, problem, cfg)


class TestJ:
    def test_stationary_increments_zero(self, n2_problem):
        s = evaluate_state(np.zeros(n2_problem.grid.shape), 0.0, n2_problem)
        assert functional_J_increment(s, s, n2_problem.grid) == 0.0

    def test_monotone_along_flow(self, n1_problem):
        (x,) = n1_problem.grid.coords
        traj = _short_run(n1_problem, 0.3 * np.cos(x), max_steps=400)
        assert len(traj.J_increments) > 10
        assert max(traj.J_increments) <= 1e-10

    def test_refinement_is_second_order(self):
        # n <= 2 makes (sigma - c) det affine in phi and the trapezoid exact, so use n = 3
        problem = JFlowProblem(LatticeGrid(3, 8), np.eye(3), np.diag([2.0, 3.0, 4.0]))
        x = problem.grid.coords
        phi0 = normalize_to_I_zero(2 * np.cos(x[0]) + 1.5 * np.cos(x[1] + x[2]), problem.chi0, problem.grid)
        dt = 0.01
        vals = {}
        for every in (1, 8, 16, 32):
            traj = _short_run(problem, phi0, record_every=every, max_steps=64, dt_init=dt, dt_max=dt,
                              cfl=None, stop_residual=1e-300)
            vals[every] = traj.diagnostics[-1].J_value
        errs = [abs(vals[k] - vals[1]) for k in (8, 16, 32)]
        # doubling the record spacing multiplies the trapezoid error by about 4
        assert 3.5 <= errs[1] / errs[0] <= 4.5
        assert 3.5 <= errs[2] / errs[1] <= 4.5


class TestSupInf:
    def test_stationary(self, n2_problem):
        traj = _short_run(n2_problem, np.zeros(n2_problem.grid.shape))
        rep = sup_inf_monitor(traj, n2_problem.chi0, n2_problem.grid)
        assert rep.applicable and rep.min_sup == 0.0 and (rep.C1, rep.C2) == (0.0, 0.0)

    def test_n1_run(self, n1_problem):
        (x,) = n1_problem.grid.coords
        phi0 = normalize_to_I_zero(0.3 * np.cos(x), n1_problem.chi0, n1_problem.grid)
        traj = _short_run(n1_problem, phi0, max_steps=500)
        rep = sup_inf_monitor(traj, n1_problem.chi0, n1_problem.grid)
        assert rep.applicable and rep.min_sup >= -1e-8
        sups = [d.sup_phi for d in traj.diagnostics]
        infs = [d.inf_phi for d in traj.diagnostics]
        assert all(s <= -rep.C1 * i + rep.C2 + 1e-12 for s, i in zip(sups, infs))

    def test_shifted_gauge_inapplicable(self, n1_problem):
        (x,) = n1_problem.grid.coords
        traj = _short_run(n1_problem, 0.3 * np.cos(x) - 1.0, max_steps=20)
        rep = sup_inf_monitor(traj, n1_problem.chi0, n1_problem.grid)
        assert not rep.applicable and "gauge" in rep.reason

    def test_violation_raises(self, n1_problem):
        grid = n1_problem.grid
        (x,) = grid.coords
        # I = 0 gauge but the second state is pushed below zero by hand
        s0 = evaluate_state(np.zeros(grid.shape), 0.0, n1_problem)
        s1 = evaluate_state(0.1 * np.cos(x) - 0.2, 1.0, n1_problem)
        traj = Trajectory(states=[s0, s1])
        with pytest.raises(MonitorViolation):
            sup_inf_monitor(traj, n1_problem.chi0, grid)

    def test_fit_constants(self):
        c1, c2 = fit_sup_inf_constants([1.0, 0.5], [-1.0, -0.2])
        assert c1 >= 0 and c2 >= 0
        assert 1.0 <= c1 * 1.0 + c2 + 1e-12 and 0.5 <= c1 * 0.2 + c2 + 1e-12
