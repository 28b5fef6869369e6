"""Flow constant, the I functional, the J descent functional and sup/inf monitors."""

from dataclasses import asdict, dataclass
from math import comb, factorial

import numpy as np
from scipy.optimize import linprog

from .errors import MonitorViolation
from .geometry import (
    BackgroundForm,
    HermitianField,
    assemble_chi,
    complex_hessian,
    mixed_densities,
    sigma_and_det,
)

SUP_TOL = 1e-8


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    sup_phi: float
    inf_phi: float
    residual: float
    I_value: float
    J_value: float
    max_lambda_omega_chi: float
    min_eig_chi: float
    dt: float

    def as_dict(self):
        return asdict(self)


def compute_c(g, chi0, grid=None):
    """Cohomological constant ``int omega ^ chi0^{n-1} / int chi0^n``.

    ``chi0`` may be a constant :class:`BackgroundForm` (closed form) or any
    positive :class:`HermitianField` in the same class (quadrature on ``grid``).
    """
    g = BackgroundForm.of(g)
    if isinstance(chi0, HermitianField):
        sigma, det = sigma_and_det(chi0, g)
        return grid.integrate(sigma * det) / grid.integrate(det)
    chi0 = BackgroundForm.of(chi0)
    return float(np.trace(np.linalg.solve(chi0.matrix, g.matrix)).real) / g.n


def beta_weight(n, k):
    """``C(n, k) * int_0^1 t^k (1-t)^{n-k} dt`` evaluated through factorials."""
    return comb(n, k) * factorial(k) * factorial(n - k) / factorial(n + 1)


def i_weights(n):
    """Weights ``w_k`` multiplying ``int phi chi_phi^k ^ chi0^{n-k}`` in the closed form of I."""
    return np.array([beta_weight(n, k) / factorial(n) for k in range(n + 1)])


def _mixed(phi, chi0, grid, chi=None):
    if chi is None:
        chi = assemble_chi(chi0, complex_hessian(phi, grid))
    return mixed_densities(chi, chi0)


def functional_I(phi, chi0, grid, chi=None):
    """``I(phi)`` along the straight path ``t phi``, evaluated exactly in ``t``."""
    chi0 = BackgroundForm.of(chi0)
    mixed = _mixed(phi, chi0, grid, chi)
    w = i_weights(chi0.n)
    return float(sum(wk * grid.integrate(phi * mk) for wk, mk in zip(w, mixed)))


def i_slope(phi, chi0, grid, chi=None):
    """``d/ds I(phi + s)``; positive, and independent of ``s``."""
    chi0 = BackgroundForm.of(chi0)
    mixed = _mixed(phi, chi0, grid, chi)
    w = i_weights(chi0.n)
    return float(sum(wk * grid.integrate(mk) for wk, mk in zip(w, mixed)))


def normalize_to_I_zero(phi, chi0, grid, tol=1e-10, max_iter=5):
    """Shift ``phi`` by the constant that makes ``I`` vanish.

    Adding a constant leaves ``chi_phi`` unchanged, so ``I(phi + s)`` is affine
    in ``s`` with positive slope; a couple of secant corrections absorb rounding.
    """
    chi0 = BackgroundForm.of(chi0)
    phi = np.asarray(phi, dtype=np.float64)
    chi = assemble_chi(chi0, complex_hessian(phi, grid))
    slope = i_slope(phi, chi0, grid, chi)
    out = phi
    for _ in range(max_iter):
        val = functional_I(out, chi0, grid, chi)
        if abs(val) <= tol:
            break
        out = out - val / slope
    return out


def functional_J_increment(state_a, state_b, grid):
    """Trapezoidal ``int (phi_b - phi_a) (sigma - c) det chi`` between two states.

    Along the flow ``d/dt phi = c - sigma``, so each increment approximates
    ``-int_a^b int (c - sigma)^2 det chi`` and is non-positive.
    """
    dphi = state_b.phi - state_a.phi
    fa = grid.integrate(dphi * (state_a.sigma - state_a.c) * state_a.det)
    fb = grid.integrate(dphi * (state_b.sigma - state_b.c) * state_b.det)
    return 0.5 * (fa + fb)


@dataclass(frozen=True)
class SupInfReport:
    applicable: bool
    min_sup: float
    C1: float
    C2: float
    n_states: int
    reason: str = ""

    def as_dict(self):
        return asdict(self)


def fit_sup_inf_constants(sups, infs):
    """Smallest ``C1 + C2`` with ``C1, C2 >= 0`` and ``sup <= -C1 inf + C2`` on every sample."""
    sups = np.asarray(sups, dtype=float)
    infs = np.asarray(infs, dtype=float)
    if np.all(sups <= 0):
        return 0.0, 0.0
    # constraint rows: -C1 * (-inf) - C2 <= -sup
    a_ub = np.column_stack([infs, -np.ones_like(infs)])
    res = linprog([1.0, 1.0], A_ub=a_ub, b_ub=-sups, bounds=[(0, None), (0, None)], method="highs")
    if not res.success:
        return float("nan"), float("nan")
    c1, c2 = res.x
    # tighten C2 for the chosen C1 so the reported pair is feasible to rounding
    c2 = max(0.0, float(np.max(sups + c1 * infs)))
    return float(c1), c2


def sup_inf_monitor(trajectory, chi0, grid, tol=SUP_TOL, gauge_tol=1e-6, strict=True):
    """Check ``sup phi_t >= 0`` on a trajectory started in the ``I = 0`` gauge.

    Raises :class:`MonitorViolation` (when ``strict``) if some recorded state has
    ``sup phi < -tol``.  Starts with ``I != 0`` are reported as inapplicable.
    """
    states = trajectory.states
    sups = np.array([float(np.max(s.phi)) for s in states])
    infs = np.array([float(np.min(s.phi)) for s in states])
    i0 = functional_I(states[0].phi, chi0, grid)
    scale = 1.0 + float(np.max(np.abs(states[0].phi)))
    if abs(i0) > gauge_tol * scale:
        return SupInfReport(False, float(sups.min()), float("nan"), float("nan"), len(states),
                            f"initial I = {i0:.3e} is not zero; shift to the I = 0 gauge first")
    c1, c2 = fit_sup_inf_constants(sups, infs)
    report = SupInfReport(True, float(sups.min()), c1, c2, len(states))
    bad = np.flatnonzero(sups < -tol)
    if bad.size and strict:
        k = int(bad[0])
        raise MonitorViolation(f"sup phi = {sups[k]:.3e} < 0 at t = {states[k].t:.6g}", where=(states[k].t,))
    return report
