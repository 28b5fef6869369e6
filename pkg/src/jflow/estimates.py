"""Positivity conditions, the eigenvalue bound and the second-order estimate monitor.

Everything here works in the gauge where omega is rescaled so the flow
constant equals ``1/n``.  On a flat torus the curvature terms in the
maximum-principle computation vanish, so any ``A > 0`` is admissible and the
constants of the estimate are explicit.
"""

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize

from .errors import DomainError, MonitorViolation
from .functionals import compute_c
from .geometry import BackgroundForm

EPS_BISECT_TOL = 1e-12
MONITOR_SLACK = 1e-6


def _min_eig(m):
    return float(np.linalg.eigvalsh(m)[0])


def _check_eps(n, eps):
    if not 0 < eps < 1.0 / (n + 1):
        raise DomainError(f"epsilon must lie in (0, 1/(n+1)) = (0, {1.0 / (n + 1):.6g}), got {eps!r}")


def lambda_bar(n, eps):
    """Upper and companion lower bound on eigenvalues satisfying the critical-point inequality.

    Returns ``((n-1+eps)/(1-sqrt(1-eps)), (n-1+eps)/(1+sqrt(1-eps)))``.
    """
    _check_eps(n, eps)
    a = n - 1 + eps
    root = np.sqrt(1.0 - eps)
    return a / (1.0 - root), a / (1.0 + root)


@dataclass(frozen=True)
class EstimateConstants:
    n: int
    epsilon: float
    A: float = 1.0
    # flat background: bisectional curvature bound and Ricci term are zero
    C0: float = 0.0
    ricci_bound: float = 0.0

    def __post_init__(self):
        _check_eps(self.n, self.epsilon)
        if not self.A > 0:
            raise DomainError(f"A must be positive, got {self.A!r}")
        if self.C0 != 0.0 or self.ricci_bound != 0.0:
            raise DomainError("only the flat case (C0 = 0, Ricci = 0) is supported")

    @property
    def lam_bar(self):
        return lambda_bar(self.n, self.epsilon)[0]

    @property
    def lam_lower(self):
        return lambda_bar(self.n, self.epsilon)[1]


def scale_to_unit_c(g, chi0):
    """Rescale ``g`` so the flow constant becomes ``1/n``; returns ``(g_scaled, factor)``."""
    g = BackgroundForm.of(g)
    chi0 = BackgroundForm.of(chi0)
    c = compute_c(g, chi0)
    factor = 1.0 / (g.n * c)
    return g.matrix * factor, factor


@dataclass(frozen=True)
class ConeReport:
    n: int
    c: float
    donaldson_ok: bool
    cone_ok: bool
    eps_max: float = None
    min_eigs: dict = field(default_factory=dict)

    def as_dict(self):
        return asdict(self)


def _eps_gap(chi0, g_scaled, n):
    return lambda e: _min_eig(chi0 - (n - 1 + (n + 1) * e) * g_scaled)


def check_cone(g, chi0, n=None):
    """Donaldson's condition ``nc chi0 - g > 0`` and the cone condition ``nc chi0 - (n-1) g > 0``.

    ``eps_max`` is the largest admissible epsilon (capped just below
    ``1/(n+1)``) with ``chi0 >= (n-1+(n+1) eps) g_scaled``; ``None`` when the
    cone condition fails.
    """
    g = BackgroundForm.of(g)
    chi0 = BackgroundForm.of(chi0)
    n = g.n if n is None else n
    if n != g.n or n != chi0.n:
        raise DomainError(f"n = {n} does not match {g.n}x{g.n} forms")
    c = compute_c(g, chi0)
    don = _min_eig(n * c * chi0.matrix - g.matrix)
    cone = _min_eig(n * c * chi0.matrix - (n - 1) * g.matrix)
    cone_ok = cone > 0
    eps_max = None
    if cone_ok:
        g_scaled, _ = scale_to_unit_c(g, chi0)
        gap = _eps_gap(chi0.matrix, g_scaled, n)
        cap = (1.0 / (n + 1)) * (1 - 1e-12)
        if gap(cap) >= 0:
            eps_max = cap
        else:
            eps_max = brentq(gap, 0.0, cap, xtol=EPS_BISECT_TOL, rtol=4 * np.finfo(float).eps)
    return ConeReport(n, c, bool(don > 0), bool(cone_ok), eps_max,
                      {"donaldson": don, "cone": cone})


def eigen_inequality(lam, n, eps):
    """``1 + (n-1+eps) sum 1/lam^2 - 2 sum 1/lam``; feasible points give ``<= 0``."""
    inv = 1.0 / np.asarray(lam, dtype=float)
    return 1.0 + (n - 1 + eps) * np.sum(inv * inv, axis=-1) - 2.0 * np.sum(inv, axis=-1)


@dataclass
class EigenboundReport:
    n: int
    epsilon: float
    upper: float
    lower: float
    n_samples: int
    n_draws: int
    sample_max: float
    sample_min: float
    optimizer_max: float
    optimizer_min: float
    violations: int
    worst_slack: float

    @property
    def ratio(self):
        return max(self.sample_max, self.optimizer_max) / self.upper

    @property
    def ok(self):
        return self.violations == 0

    def as_dict(self):
        d = asdict(self)
        d["ratio"] = self.ratio
        d["ok"] = self.ok
        return d


def _draw_candidates(rng, n, size, lo, hi):
    # Three boxes, none derived from the bounds under test: log-uniform lambda
    # over [lo, hi], and uniform 1/lambda over (0, 2] and over (0, 1].
    k = size // 3
    lam_log = np.exp(rng.uniform(np.log(lo), np.log(hi), size=(k, n)))
    x = np.concatenate([rng.uniform(0.0, 2.0, size=(k, n)), rng.uniform(0.0, 1.0, size=(size - 2 * k, n))])
    x = x[np.all(x > 0, axis=1)]
    return np.concatenate([lam_log, 1.0 / x])


def _pull_to_feasible(lam, j, n, eps):
    # Optimizer output may sit a hair outside the set; slide coordinate j back
    # toward n-1+eps (where the inequality is most slack in that coordinate).
    if eigen_inequality(lam, n, eps) <= 0:
        return lam
    a = n - 1 + eps
    trial = lam.copy()

    def f(v):
        trial[j] = v
        return eigen_inequality(trial, n, eps)

    if f(a) > 0:
        return None
    v = brentq(f, min(a, lam[j]), max(a, lam[j]), xtol=1e-15, rtol=4 * np.finfo(float).eps)
    step = np.sign(a - lam[j]) * 1e-13 * abs(v)
    for _ in range(100):
        if f(v) <= 0:
            return trial.copy()
        v += step
    return None


def _optimize(rng, start, n, eps, sense):
    j = int(rng.integers(n))
    sign = -1.0 if sense == "max" else 1.0
    cons = {"type": "ineq", "fun": lambda u: -eigen_inequality(np.exp(u), n, eps)}
    box = [(np.log(1e-8), np.log(1e10))] * n
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(lambda u: sign * u[j], np.log(start), method="SLSQP", constraints=[cons],
                       bounds=box, options={"maxiter": 500, "ftol": 1e-14})
    lam = np.exp(res.x)
    if not np.all(np.isfinite(lam)):
        return None
    return _pull_to_feasible(lam, j, n, eps)


def eigenbound_verify(n, eps, samples=100_000, restarts=100, seed=0, slack=1e-9, max_draws=50_000_000):
    """Brute-force check of the eigenvalue bounds over the feasible set.

    Random candidates are drawn from wide boxes that extend well past the
    claimed bounds; every feasible one is checked.  Multi-start SLSQP then
    pushes a single eigenvalue as far up (and down) as the constraint allows.
    """
    upper, lower = lambda_bar(n, eps)
    rng = np.random.default_rng([seed, n, int(round(eps * 1e9))])
    lo, hi = min(1e-2, lower / 10), max(1e4, upper * 10)
    feasible = []
    got = draws = 0
    while got < samples and draws < max_draws:
        cand = _draw_candidates(rng, n, 200_000, lo, hi)
        draws += cand.shape[0]
        ok = cand[eigen_inequality(cand, n, eps) <= 0]
        feasible.append(ok[: samples - got])
        got += feasible[-1].shape[0]
    pts = np.concatenate(feasible) if feasible else np.empty((0, n))

    viol = 0
    worst = np.inf
    if pts.size:
        viol += int(np.sum(pts > upper + slack) + np.sum(pts < lower - slack))
        worst = float(min(np.min(upper - pts), np.min(pts - lower)))

    opt_max, opt_min = -np.inf, np.inf
    if pts.size:
        starts = pts[rng.integers(pts.shape[0], size=restarts)]
    else:
        starts = np.full((restarts, n), n - 1 + eps)
    for s in starts:
        for sense in ("max", "min"):
            lam = _optimize(rng, s, n, eps, sense)
            if lam is None:
                continue
            opt_max = max(opt_max, float(lam.max()))
            opt_min = min(opt_min, float(lam.min()))
            if lam.max() > upper + slack or lam.min() < lower - slack:
                viol += 1
            worst = min(worst, float(upper - lam.max()), float(lam.min() - lower))

    return EigenboundReport(
        n=n, epsilon=eps, upper=upper, lower=lower, n_samples=int(pts.shape[0]), n_draws=int(draws),
        sample_max=float(pts.max()) if pts.size else float("nan"),
        sample_min=float(pts.min()) if pts.size else float("nan"),
        optimizer_max=opt_max, optimizer_min=opt_min, violations=viol, worst_slack=worst,
    )


@dataclass
class SecondOrderReport:
    A: float
    epsilon: float
    lam_bar: float
    times: list
    M: list
    bounds: list
    ok: bool
    worst_margin: float

    def as_dict(self):
        return asdict(self)


def second_order_monitor(trajectory, problem, constants, strict=True, slack=MONITOR_SLACK):
    """Discrete check of ``max_x [log tr_omega chi - A phi]`` against its maximum-principle bound.

    At every recorded ``t`` requires
    ``M(t) <= max(M(0), log(n lam_bar) - A inf_{s<=t} phi) + slack``.
    """
    n = problem.n
    A = constants.A
    cap = np.log(n * constants.lam_bar)
    times, values, bounds = [], [], []
    m0 = None
    inf_so_far = np.inf
    worst = np.inf
    for state in trajectory.states:
        chi = problem.chi_from_phi(state.phi)
        lam = np.einsum("ij,...ji->...", problem.g_scaled_inv, chi).real
        with np.errstate(invalid="ignore", divide="ignore"):
            q = np.log(lam) - A * state.phi
        if not np.all(np.isfinite(q)):
            raise MonitorViolation(f"trace of chi is not positive at t = {state.t:.6g}", where=(None, state.t))
        m_t = float(np.max(q))
        if m0 is None:
            m0 = m_t
        inf_so_far = min(inf_so_far, float(np.min(state.phi)))
        bound = max(m0, cap - A * inf_so_far)
        times.append(state.t)
        values.append(m_t)
        bounds.append(bound)
        margin = bound + slack - m_t
        worst = min(worst, margin)
        if margin < 0 and strict:
            idx = np.unravel_index(int(np.argmax(q)), q.shape)
            raise MonitorViolation(
                f"M(t) = {m_t:.6g} exceeds bound {bound:.6g} at t = {state.t:.6g}, site {idx}",
                where=(idx, state.t),
            )
    return SecondOrderReport(A, constants.epsilon, constants.lam_bar, times, values, bounds,
                             bool(worst >= 0), float(worst))
