"""Time integration of the J-flow ``d/dt phi = c - (1/n) tr(chi_phi^{-1} g)``."""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .errors import DomainError, PositivityLost, StepFailure
from .functionals import DiagnosticsRecord, compute_c, functional_I, functional_J_increment
from .geometry import BackgroundForm, constant_symbol, hessian_from_spectrum

EULER = "euler"
RK4 = "rk4"
IMEX = "imex"
SCHEMES = (EULER, RK4, IMEX)

# real-axis stability limits of the explicit schemes
_STABILITY = {EULER: 2.0, RK4: 2.785}

CONVERGED = "CONVERGED"
TIMEOUT = "TIMEOUT"
POSITIVITY_LOST = "POSITIVITY_LOST"
STEP_FAILURE = "STEP_FAILURE"


@dataclass(frozen=True)
class FlowConfig:
    scheme: str = RK4
    dt_init: float = 1e-2
    dt_min: float = 1e-10
    dt_max: float = 1.0
    stop_residual: float = 1e-8
    t_max: float = 1e4
    record_every: int = 50
    # Safety factor on the explicit stability limit estimated from the current
    # state; None lets the reject/halve rule alone control dt.
    cfl: float = 0.9
    grow_after: int = 20
    max_steps: int = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise DomainError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not 0 < self.dt_min <= self.dt_init <= self.dt_max:
            raise DomainError("need 0 < dt_min <= dt_init <= dt_max")
        if not self.stop_residual > 0:
            raise DomainError("stop_residual must be positive")
        if not self.t_max > 0:
            raise DomainError("t_max must be positive")
        if self.record_every < 1:
            raise DomainError("record_every must be a positive integer")
        if self.cfl is not None and not self.cfl > 0:
            raise DomainError("cfl must be positive or None")


class JFlowProblem:
    """Grid plus the two constant background forms ``g`` (omega) and ``chi0``."""

    def __init__(self, grid, g, chi0):
        self.grid = grid
        self.g = BackgroundForm.of(g)
        self.chi0 = BackgroundForm.of(chi0)
        if self.g.n != grid.n or self.chi0.n != grid.n:
            raise DomainError(f"background forms must be {grid.n}x{grid.n}")
        self.n = grid.n
        self.c = compute_c(self.g, self.chi0)
        # omega rescaled so that the flow constant becomes 1/n
        self.g_scaled = self.g.matrix / (self.n * self.c)
        self.g_scaled_inv = np.linalg.inv(self.g_scaled)
        self.g_max_eig = float(np.linalg.eigvalsh(self.g.matrix)[-1])

    @cached_property
    def frozen_symbol(self):
        """Symbol of the linearized operator at ``chi0`` (IMEX implicit part)."""
        inv = np.linalg.inv(self.chi0.matrix)
        return constant_symbol(inv @ self.g.matrix @ inv, self.grid)

    @cached_property
    def max_wavenumber_sq(self):
        kmax = self.grid.N // 2
        return float(self.grid.d * kmax * kmax)

    def chi_from_phi(self, phi):
        return self.chi_from_spectrum(self.grid.fft(phi))

    def chi_from_spectrum(self, phi_hat):
        return hessian_from_spectrum(phi_hat, self.grid) + self.chi0.matrix

    def sigma_det(self, chi):
        n = self.n
        sigma, det = kernels.sigma_det(chi.reshape(-1, n, n), self.g.matrix)
        if not np.all(det > 0):
            raise PositivityLost("chi is not positive definite at some site")
        shape = self.grid.shape
        return sigma.reshape(shape), det.reshape(shape)

    def rhs(self, phi):
        sigma, _ = self.sigma_det(self.chi_from_phi(phi))
        return self.c - sigma

    def max_trace(self, chi):
        """``sup tr(g_scaled^{-1} chi)`` over the grid."""
        lam = np.einsum("ij,...ji->...", self.g_scaled_inv, chi).real
        return float(np.max(lam))


@dataclass(frozen=True, eq=False)
class FlowState:
    phi: np.ndarray
    t: float
    c: float
    sigma: np.ndarray = field(repr=False)
    det: np.ndarray = field(repr=False)
    residual: float = 0.0
    min_eig_chi: float = 0.0
    max_lambda: float = 0.0

    @property
    def rhs(self):
        return self.c - self.sigma


def evaluate_state(phi, t, problem):
    """Build a :class:`FlowState`; raises :class:`PositivityLost` outside the admissible set."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != problem.grid.shape:
        raise DomainError(f"field shape {phi.shape} does not match grid {problem.grid.shape}")
    if not np.all(np.isfinite(phi)):
        raise DomainError("potential has non-finite values")
    chi = problem.chi_from_phi(phi)
    sigma, det = problem.sigma_det(chi)
    min_eig = float(np.min(kernels.min_eig(chi.reshape(-1, problem.n, problem.n))))
    if not min_eig > 0:
        raise PositivityLost(f"chi lost positivity (min eig {min_eig:.6g})", min_eig)
    residual = float(np.max(np.abs(problem.c - sigma)))
    return FlowState(phi, float(t), problem.c, sigma, det, residual, min_eig, problem.max_trace(chi))


def flow_rhs(state, problem):
    """Right side ``c - sigma`` of the flow at ``state``."""
    return problem.c - state.sigma


def stable_dt(state, problem, scheme, cfl):
    """Explicit step bound from ``max eig(chi^{-1} g chi^{-1}) |k|^2 / (4n)``."""
    if scheme not in _STABILITY or cfl is None:
        return np.inf
    m_max = problem.g_max_eig / state.min_eig_chi**2
    lam = m_max * problem.max_wavenumber_sq / (4 * problem.n)
    return cfl * _STABILITY[scheme] / lam


def _step(state, problem, scheme, dt):
    phi = state.phi
    if scheme == EULER:
        return phi + dt * state.rhs
    if scheme == RK4:
        k1 = state.rhs
        k2 = problem.rhs(phi + 0.5 * dt * k1)
        k3 = problem.rhs(phi + 0.5 * dt * k2)
        k4 = problem.rhs(phi + dt * k3)
        return phi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    # IMEX: (1 - dt L0) phi+ = phi + dt (rhs(phi) - L0 phi), L0 frozen at chi0
    grid = problem.grid
    sym = problem.frozen_symbol
    phi_hat = grid.fft(phi)
    rhs_hat = grid.fft(state.rhs)
    new_hat = (phi_hat + dt * (rhs_hat - sym * phi_hat)) / (1.0 - dt * sym)
    return grid.ifft(new_hat)


@dataclass(frozen=True)
class StepResult:
    state: FlowState
    dt: float
    rejected: int


def advance(state, problem, config, dt=None):
    """One accepted step of ``config.scheme``, halving ``dt`` on rejection.

    A step is rejected when the new state leaves the admissible set or its
    residual grows by more than 10x.  Raises :class:`StepFailure` once ``dt``
    would fall below ``config.dt_min``.
    """
    dt = config.dt_init if dt is None else dt
    dt = min(dt, stable_dt(state, problem, config.scheme, config.cfl))
    floor = 100 * np.finfo(float).eps * (1.0 + abs(problem.c))
    rejected = 0
    while True:
        try:
            new_phi = _step(state, problem, config.scheme, dt)
            new = evaluate_state(new_phi, state.t + dt, problem)
        except PositivityLost:
            new = None
        if new is not None and not (new.residual > 10 * state.residual and new.residual > floor):
            return StepResult(new, dt, rejected)
        rejected += 1
        dt *= 0.5
        if dt < config.dt_min:
            raise StepFailure(f"step rejected at dt_min = {config.dt_min:g} (t = {state.t:.6g})")


@dataclass
class Trajectory:
    """Recorded states with per-record diagnostics; ``status`` tells how the run ended."""

    states: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    status: str = TIMEOUT
    message: str = ""
    n_steps: int = 0
    n_rejected: int = 0
    J_increments: list = field(default_factory=list)

    @property
    def final(self):
        return self.states[-1]

    @property
    def converged(self):
        return self.status == CONVERGED

    @property
    def times(self):
        return np.array([s.t for s in self.states])


def _record(traj, state, problem, dt):
    grid = problem.grid
    if traj.states:
        inc = functional_J_increment(traj.states[-1], state, grid)
        traj.J_increments.append(inc)
        j_value = traj.diagnostics[-1].J_value + inc
    else:
        j_value = 0.0
    traj.states.append(state)
    traj.diagnostics.append(
        DiagnosticsRecord(
            t=state.t,
            sup_phi=float(np.max(state.phi)),
            inf_phi=float(np.min(state.phi)),
            residual=state.residual,
            I_value=functional_I(state.phi, problem.chi0, grid),
            J_value=j_value,
            max_lambda_omega_chi=state.max_lambda,
            min_eig_chi=state.min_eig_chi,
            dt=dt,
        )
    )


def run_flow(phi_init, problem, config=None, progress=None):
    """Integrate until ``residual <= stop_residual`` or ``t >= t_max``.

    Positivity loss or step failure end the run early; the partial trajectory
    comes back with ``status`` set accordingly instead of raising.
    """
    config = FlowConfig() if config is None else config
    traj = Trajectory()
    state = evaluate_state(phi_init, 0.0, problem)
    _record(traj, state, problem, 0.0)
    if state.residual <= config.stop_residual:
        traj.status = CONVERGED
        return traj

    dt = config.dt_init
    streak = 0
    since_record = 0
    last_dt = 0.0
    while True:
        if state.t >= config.t_max:
            traj.status = TIMEOUT
            break
        if config.max_steps is not None and traj.n_steps >= config.max_steps:
            traj.status = TIMEOUT
            traj.message = f"max_steps = {config.max_steps} reached"
            break
        try:
            step = advance(state, problem, config, dt)
        except StepFailure as exc:
            traj.status = STEP_FAILURE
            traj.message = str(exc)
            break
        except PositivityLost as exc:
            traj.status = POSITIVITY_LOST
            traj.message = str(exc)
            break
        state = step.state
        last_dt = step.dt
        traj.n_steps += 1
        traj.n_rejected += step.rejected
        since_record += 1
        if step.rejected:
            dt = step.dt
            streak = 0
        else:
            streak += 1
            if streak >= config.grow_after:
                dt = min(2 * dt, config.dt_max)
                streak = 0
        done = state.residual <= config.stop_residual
        if since_record >= config.record_every or done:
            _record(traj, state, problem, last_dt)
            since_record = 0
            if progress is not None:
                progress(state)
        if done:
            traj.status = CONVERGED
            break
    if traj.states[-1] is not state:
        _record(traj, state, problem, last_dt)
    return traj


def integrate_fixed(phi, problem, scheme, dt, t_end):
    """Fixed-step integration without adaptation (order studies)."""
    state = evaluate_state(phi, 0.0, problem)
    steps = int(round(t_end / dt))
    if abs(steps * dt - t_end) > 1e-9 * t_end:
        raise DomainError(f"t_end = {t_end} is not a multiple of dt = {dt}")
    for _ in range(steps):
        state = evaluate_state(_step(state, problem, scheme, dt), state.t + dt, problem)
    return state
