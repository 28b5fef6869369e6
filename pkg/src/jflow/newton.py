"""Newton-Krylov solver for the critical equation ``(1/n) tr(chi^{-1} g) = c``.

The linearization of ``sigma(phi) = (1/n) tr(chi_phi^{-1} g)`` is
``-tilde_laplacian`` with ``tilde_laplacian f = (1/n) h^{k lbar} d_k dbar_l f``
and ``h = chi^{-1} g chi^{-1}``.  That operator is not self-adjoint for the
flat measure, so the inner solves use right-preconditioned GMRES with the
constant-coefficient operator at the site-averaged ``h`` as preconditioner.
"""

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from . import kernels
from .errors import NoConvergence, PositivityLost, SolverStall
from .estimates import check_cone
from .flow import evaluate_state
from .functionals import normalize_to_I_zero
from .geometry import constant_symbol, hessian_from_spectrum

INNER_RTOL = 1e-10
STALL_RTOL = 1e-8
BACKTRACK_FLOOR = 2.0**-20


class LinearizedOperator:
    """``f -> (1/n) Re tr(h Hess f)`` at a fixed positive field ``chi``."""

    def __init__(self, problem, chi):
        self.problem = problem
        self.grid = problem.grid
        n = problem.n
        self.n = n
        flat = np.asarray(chi).reshape(-1, n, n)
        m, det = kernels.weighted_inverse(flat, problem.g.matrix)
        if not np.all(det > 0):
            raise PositivityLost("linearization requested at a non-positive chi")
        self.h = m
        self.det = det.reshape(self.grid.shape)
        sym = constant_symbol(m.mean(axis=0), self.grid)
        with np.errstate(divide="ignore"):
            inv = np.where(sym != 0.0, 1.0 / np.where(sym != 0.0, sym, 1.0), 0.0)
        self._precond = inv

    @property
    def shape(self):
        return self.grid.shape

    def apply(self, f):
        f = np.asarray(f, dtype=np.float64).reshape(self.shape)
        hess = hessian_from_spectrum(self.grid.fft(f), self.grid)
        return kernels.contract(self.h, hess.reshape(-1, self.n, self.n)).reshape(self.shape) / self.n

    def apply_adjoint(self, w):
        """Transpose of :meth:`apply` in the flat ``l^2`` pairing."""
        w = np.asarray(w, dtype=np.float64).reshape(-1)
        re_m, im_m = self.grid.hessian_multipliers
        acc = np.zeros(self.grid.spectral_shape, dtype=np.complex128)
        for k in range(self.n):
            for l in range(self.n):
                coeff = self.h[:, l, k]
                acc += re_m[k, l] * self.grid.fft((coeff.real * w).reshape(self.shape))
                if np.iscomplexobj(coeff) and np.any(im_m[k, l]):
                    acc -= im_m[k, l] * self.grid.fft((coeff.imag * w).reshape(self.shape))
        return self.grid.ifft(acc) / self.n

    def precondition(self, r):
        r = np.asarray(r, dtype=np.float64).reshape(self.shape)
        return self.grid.ifft(self._precond * self.grid.fft(r))

    def _gmres(self, matvec, b, counter, maxiter):
        size = self.grid.size
        shape = self.shape

        def mv(y):
            return matvec(self.precondition(y.reshape(shape))).reshape(-1)

        op = LinearOperator((size, size), matvec=mv, dtype=np.float64)

        def cb(_):
            counter[0] += 1

        y, _ = gmres(op, b.reshape(-1), rtol=INNER_RTOL * 0.1, atol=0.0, restart=60, maxiter=maxiter,
                     callback=cb, callback_type="pr_norm")
        return self.precondition(y.reshape(shape))

    def left_null_vector(self, maxiter=50):
        """Weight ``w`` with ``w . apply(f) = 0`` for all ``f``, normalized to mean one."""
        ones = np.ones(self.shape)
        rhs = -self.apply_adjoint(ones)
        if np.max(np.abs(rhs)) == 0.0:
            return ones
        count = [0]
        v = self._gmres(self.apply_adjoint, rhs, count, maxiter)
        w = ones + v
        return w / np.mean(w)


def apply_tilde_laplacian(op, f):
    return op.apply(f)


def project_range(rhs, w):
    """Subtract the constant that puts ``rhs`` in the range (orthogonal to ``w``)."""
    return rhs - np.sum(w * rhs) / np.sum(w)


def solve_linearized(op, rhs, w=None, maxiter=50, return_info=False):
    """Mean-zero ``delta`` with ``op.apply(delta) = P(rhs)``.

    Raises :class:`SolverStall` if the true relative residual stays above 1e-8.
    """
    rhs = np.asarray(rhs, dtype=np.float64).reshape(op.shape)
    if w is None:
        w = op.left_null_vector()
    b = project_range(rhs, w)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        delta = np.zeros(op.shape)
        return (delta, {"iterations": 0, "rel_residual": 0.0, "projected": b}) if return_info else delta
    count = [0]
    delta = op._gmres(op.apply, b, count, maxiter)
    delta = delta - np.mean(delta)
    rel = float(np.linalg.norm(op.apply(delta) - b)) / bnorm
    if rel > STALL_RTOL:
        raise SolverStall(f"inner solve stalled at relative residual {rel:.3e}")
    info = {"iterations": count[0], "rel_residual": rel, "projected": b}
    return (delta, info) if return_info else delta


@dataclass
class NewtonReport:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    step_lengths: list = field(default_factory=list)
    step_means: list = field(default_factory=list)
    converged: bool = False
    message: str = ""
    phi: np.ndarray = field(default=None, repr=False)

    def as_dict(self):
        d = asdict(self)
        d.pop("phi")
        return d


def newton_critical(phi_init, problem, tol=1e-10, max_iter=50):
    """Damped Newton iteration for ``sigma(phi) = c``; returns ``(phi, report)``.

    Each step solves ``tilde_laplacian delta = sigma - c`` and backtracks by
    halving until the residual decreases with ``chi`` still positive.  The
    returned potential is shifted to the ``I = 0`` gauge.
    """
    cone = check_cone(problem.g, problem.chi0)
    if not cone.cone_ok:
        warnings.warn("cone condition fails; Newton may not converge", RuntimeWarning, stacklevel=2)
    report = NewtonReport()
    state = evaluate_state(phi_init, 0.0, problem)
    phi = state.phi
    r = state.residual
    report.residuals.append(r)
    while r > tol:
        if report.iterations >= max_iter:
            report.message = f"no convergence after {max_iter} iterations (residual {r:.3e})"
            report.phi = phi
            raise NoConvergence(report.message, report)
        chi = problem.chi_from_phi(phi)
        op = LinearizedOperator(problem, chi)
        delta, info = solve_linearized(op, state.sigma - problem.c, return_info=True)
        report.inner_iterations.append(info["iterations"])
        report.step_means.append(float(np.mean(delta)))
        step = 1.0
        positivity_failed = False
        while True:
            try:
                trial = evaluate_state(phi + step * delta, 0.0, problem)
            except PositivityLost:
                trial = None
                positivity_failed = True
            if trial is not None and (trial.residual < r or trial.residual <= tol):
                break
            step *= 0.5
            if step < BACKTRACK_FLOOR:
                report.phi = phi
                if positivity_failed:
                    raise PositivityLost("Newton step left the admissible set; backtracking hit 2^-20")
                report.message = "backtracking could not reduce the residual"
                raise NoConvergence(report.message, report)
        report.iterations += 1
        report.step_lengths.append(step)
        state = trial
        phi = trial.phi
        r = trial.residual
        report.residuals.append(r)
    report.converged = True
    phi = normalize_to_I_zero(phi, problem.chi0, problem.grid)
    report.phi = phi
    return phi, report
