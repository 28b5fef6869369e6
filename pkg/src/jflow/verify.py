"""Property suites behind ``jflow verify``."""

from math import comb, factorial

import numpy as np
from scipy.integrate import quad

from . import kernels
from .estimates import eigenbound_verify
from .flow import EULER, RK4, JFlowProblem, integrate_fixed
from .functionals import beta_weight, i_weights
from .geometry import LatticeGrid, wedge_ratio_oracle


def random_positive_hermitian(rng, n, size, complex_=True):
    a = rng.normal(size=(size, n, n))
    if complex_:
        a = a + 1j * rng.normal(size=(size, n, n))
    m = a @ np.conj(np.swapaxes(a, -1, -2)) / n
    m = 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))
    return m + 0.1 * np.eye(n)


def suite_identities(seed, pairs=1000):
    rng = np.random.default_rng(seed)
    results = []
    for n in (1, 2, 3, 4):
        chi = random_positive_hermitian(rng, n, pairs)
        g = random_positive_hermitian(rng, n, pairs)
        worst = 0.0
        for i in range(pairs):
            sig, _ = kernels.sigma_det(chi[i : i + 1], g[i])
            ref = wedge_ratio_oracle(chi[i], g[i], n)
            worst = max(worst, abs(sig[0] - ref) / abs(ref))
        results.append({"property": f"trace_vs_logdet_n{n}", "count": pairs, "worst": float(worst),
                        "tolerance": 1e-9, "passed": bool(worst <= 1e-9)})
    worst = 0.0
    for n in (1, 2, 3):
        w = i_weights(n)
        for k in range(n + 1):
            numeric = comb(n, k) * quad(lambda t: t**k * (1 - t) ** (n - k), 0, 1, epsabs=1e-14, epsrel=1e-14)[0]
            worst = max(worst, abs(w[k] - numeric / factorial(n)), abs(beta_weight(n, k) - 1.0 / (n + 1)))
    results.append({"property": "I_weights_vs_beta_quadrature", "count": 9, "worst": float(worst),
                    "tolerance": 1e-12, "passed": bool(worst <= 1e-12)})
    return results


def suite_eigenbound(seed, samples=100_000, restarts=100):
    results = []
    for n in (2, 3, 4):
        for eps in (0.01, 0.05, 0.1, 1.0 / (n + 1) - 0.01):
            rep = eigenbound_verify(n, eps, samples=samples, restarts=restarts, seed=seed)
            results.append({
                "property": f"eigenbound_n{n}_eps{eps:.4g}", "count": rep.n_samples, "worst": rep.worst_slack,
                "ratio": rep.ratio, "violations": rep.violations,
                "passed": bool(rep.ok and rep.ratio >= 0.9 and rep.n_samples >= samples),
            })
    return results


def order_errors(seed, dts=(0.02, 0.01), rk4_dts=(0.1, 0.05), t_end=1.0, N=32):
    """Sup-norm errors of EULER and RK4 against a fine RK4 reference."""
    rng = np.random.default_rng(seed)
    grid = LatticeGrid(1, N)
    (x,) = grid.coords
    problem = JFlowProblem(grid, [[1.0]], [[2.0]])
    a1, a2 = rng.uniform(0.2, 0.3), rng.uniform(0.02, 0.05)
    phi0 = a1 * np.cos(x) + a2 * np.sin(2 * x)
    ref = integrate_fixed(phi0, problem, RK4, 1e-3, t_end).phi
    errs = {}
    for scheme, steps in ((EULER, dts), (RK4, rk4_dts)):
        errs[scheme] = [
            (dt, float(np.max(np.abs(integrate_fixed(phi0, problem, scheme, dt, t_end).phi - ref))))
            for dt in steps
        ]
    return errs


def suite_order(seed):
    errs = order_errors(seed)
    results = []
    for scheme, expected in ((EULER, 1), (RK4, 4)):
        (dt1, e1), (dt2, e2) = errs[scheme]
        observed = float(np.log(e1 / e2) / np.log(dt1 / dt2))
        results.append({"property": f"order_{scheme}", "count": 2, "observed_order": observed,
                        "errors": [e1, e2], "passed": bool(abs(observed - expected) <= 0.3)})
    return results


SUITES = {"identities": suite_identities, "eigenbound": suite_eigenbound, "order": suite_order}
