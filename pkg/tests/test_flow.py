import numpy as np
import pytest

from jflow import DomainError, LatticeGrid, PositivityLost
from jflow.flow import (
    CONVERGED,
    EULER,
    IMEX,
    RK4,
    STEP_FAILURE,
    TIMEOUT,
    FlowConfig,
    JFlowProblem,
    advance,
    evaluate_state,
    flow_rhs,
    integrate_fixed,
    run_flow,
)
from jflow.functionals import functional_I, normalize_to_I_zero
from jflow.verify import order_errors


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [{"scheme": "leapfrog"}, {"dt_init": 2.0, "dt_max": 1.0}, {"stop_residual": 0.0},
         {"record_every": 0}, {"cfl": -1.0}, {"t_max": 0.0}],
    )
    def test_rejects(self, kw):
        with pytest.raises(DomainError):
            FlowConfig(**kw)


class TestRhs:
    def test_stationary_zero(self, n2_problem):
        s = evaluate_state(np.zeros(n2_problem.grid.shape), 0.0, n2_problem)
        assert np.max(np.abs(flow_rhs(s, n2_problem))) <= 1e-15

    def test_n1_constant(self, n1_problem):
        s = evaluate_state(np.zeros(n1_problem.grid.shape), 0.0, n1_problem)
        assert n1_problem.c == 0.5
        assert np.max(np.abs(flow_rhs(s, n1_problem))) <= 1e-15

    @pytest.mark.parametrize("n, N", [(1, 64), (2, 16), (3, 8)])
    def test_weighted_mean_zero(self, n, N):
        grid = LatticeGrid(n, N)
        problem = JFlowProblem(grid, np.eye(n) + 0.2 * np.ones((n, n)), np.diag(np.linspace(2, 3, n)))
        x = grid.coords
        phi = 0.3 * np.cos(x[0]) + 0.1 * np.sin(sum(x))
        s = evaluate_state(phi, 0.0, problem)
        assert abs(grid.integrate(flow_rhs(s, problem) * s.det)) <= 1e-8

    def test_positivity_lost(self, n1_problem):
        (x,) = n1_problem.grid.coords
        with pytest.raises(PositivityLost):
            evaluate_state(10 * np.cos(x), 0.0, n1_problem)


class TestAdvance:
    @pytest.mark.parametrize("scheme", [EULER, RK4, IMEX])
    def test_stationary(self, n2_problem, scheme):
        s = evaluate_state(np.zeros(n2_problem.grid.shape), 0.0, n2_problem)
        out = advance(s, n2_problem, FlowConfig(scheme=scheme), 0.1)
        assert np.max(np.abs(out.state.phi - s.phi)) <= 1e-15
        assert out.rejected == 0

    def test_euler_vs_rk4_one_step(self, n1_problem):
        (x,) = n1_problem.grid.coords
        s = evaluate_state(0.3 * np.cos(x), 0.0, n1_problem)
        diffs = []
        for dt in (1e-2, 5e-3):
            cfg_e, cfg_r = FlowConfig(scheme=EULER, cfl=None), FlowConfig(scheme=RK4, cfl=None)
            a = advance(s, n1_problem, cfg_e, dt).state.phi
            b = advance(s, n1_problem, cfg_r, dt).state.phi
            diffs.append(np.max(np.abs(a - b)))
        assert diffs[0] / diffs[1] == pytest.approx(4.0, rel=0.1)

    @staticmethod
    def _stiff_start(problem):
        # the k = 20 mode decays at rate ~ 400 / 16, far beyond what dt = 10 can take
        (x,) = problem.grid.coords
        return 0.3 * np.cos(x) + 0.01 * np.cos(20 * x)

    def test_stiff_rejection(self, n1_problem):
        s = evaluate_state(self._stiff_start(n1_problem), 0.0, n1_problem)
        cfg = FlowConfig(scheme=EULER, cfl=None, dt_init=10.0, dt_max=10.0)
        out = advance(s, n1_problem, cfg, 10.0)
        assert out.rejected > 0 and out.dt < 10.0
        assert out.dt == 10.0 * 0.5**out.rejected

    def test_rejections_visible_in_diagnostics(self, n1_problem):
        cfg = FlowConfig(scheme=EULER, cfl=None, dt_init=10.0, dt_max=10.0, record_every=1, max_steps=5)
        traj = run_flow(self._stiff_start(n1_problem), n1_problem, cfg)
        assert traj.n_rejected > 0
        assert traj.diagnostics[1].dt < 10.0

    def test_step_failure(self, n1_problem):
        s = evaluate_state(self._stiff_start(n1_problem), 0.0, n1_problem)
        cfg = FlowConfig(scheme=EULER, cfl=None, dt_init=10.0, dt_max=10.0, dt_min=5.0)
        from jflow import StepFailure

        with pytest.raises(StepFailure):
            advance(s, n1_problem, cfg, 10.0)

    def test_cfl_cap(self, n1_problem):
        (x,) = n1_problem.grid.coords
        s = evaluate_state(0.3 * np.cos(x), 0.0, n1_problem)
        out = advance(s, n1_problem, FlowConfig(scheme=RK4), 1.0)
        assert out.rejected == 0 and out.dt < 1.0


class TestRunFlow:
    def test_stationary_converged_at_zero(self, n2_problem):
        traj = run_flow(np.zeros(n2_problem.grid.shape), n2_problem)
        assert traj.status == CONVERGED and traj.n_steps == 0 and traj.final.t == 0.0

    # IMEX is first order and drifts in I by O(dt) at its large steps
    @pytest.mark.parametrize("scheme, i_tol", [(RK4, 1e-10), (IMEX, 2e-3)])
    def test_n1_converges_to_flat(self, scheme, i_tol):
        grid = LatticeGrid(1, 32)
        problem = JFlowProblem(grid, [[1.0]], [[2.0]])
        (x,) = grid.coords
        phi0 = normalize_to_I_zero(0.3 * np.cos(x), problem.chi0, grid)
        traj = run_flow(phi0, problem, FlowConfig(scheme=scheme, stop_residual=1e-8))
        assert traj.status == CONVERGED
        # the exact critical potential is constant; the I = 0 gauge pins it to 0
        assert np.max(np.abs(normalize_to_I_zero(traj.final.phi, problem.chi0, grid))) <= 1e-6
        drift = [abs(d.I_value - traj.diagnostics[0].I_value) for d in traj.diagnostics]
        assert max(drift) <= i_tol

    def test_n2_converges(self, n2_problem):
        x1, x2 = n2_problem.grid.coords
        phi0 = normalize_to_I_zero(0.2 * np.cos(x1) + 0.1 * np.cos(x1 + x2), n2_problem.chi0, n2_problem.grid)
        traj = run_flow(phi0, n2_problem, FlowConfig(stop_residual=1e-8))
        assert traj.status == CONVERGED and traj.final.residual <= 1e-8
        assert max(traj.J_increments) <= 1e-10

    def test_timeout(self, n1_problem):
        (x,) = n1_problem.grid.coords
        traj = run_flow(0.3 * np.cos(x), n1_problem, FlowConfig(t_max=0.05))
        assert traj.status == TIMEOUT and traj.final.t >= 0.05

    def test_step_failure_status(self, n1_problem):
        cfg = FlowConfig(scheme=EULER, cfl=None, dt_init=10.0, dt_max=10.0, dt_min=5.0)
        traj = run_flow(TestAdvance._stiff_start(n1_problem), n1_problem, cfg)
        assert traj.status == STEP_FAILURE and traj.message

    def test_progress_callback(self, n1_problem):
        (x,) = n1_problem.grid.coords
        seen = []
        run_flow(0.3 * np.cos(x), n1_problem, FlowConfig(max_steps=30, record_every=10), progress=seen.append)
        assert len(seen) == 3

    def test_full_mode_i_conserved(self):
        grid = LatticeGrid(1, 16, "full")
        problem = JFlowProblem(grid, [[1.0]], [[2.0]])
        x, y = grid.coords
        phi0 = 0.2 * np.cos(x) * np.cos(y)
        traj = run_flow(phi0, problem, FlowConfig(max_steps=200, record_every=20))
        i0 = functional_I(phi0, problem.chi0, grid)
        assert all(abs(d.I_value - i0) <= 1e-6 for d in traj.diagnostics)


class TestOrder:
    def test_orders(self):
        errs = order_errors(seed=3)
        for scheme, expected in ((EULER, 1.0), (RK4, 4.0)):
            (dt1, e1), (dt2, e2) = errs[scheme]
            assert np.log(e1 / e2) / np.log(dt1 / dt2) == pytest.approx(expected, abs=0.3)

    def test_integrate_fixed_guard(self, n1_problem):
        with pytest.raises(DomainError):
            integrate_fixed(np.zeros(n1_problem.grid.shape), n1_problem, RK4, 0.3, 1.0)
