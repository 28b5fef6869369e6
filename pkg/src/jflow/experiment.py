"""Experiment configuration and the monitor bundle applied to flow runs."""

import json
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, DomainError, MonitorViolation, PositivityLost
from .estimates import EstimateConstants, check_cone, second_order_monitor
from .flow import SCHEMES, FlowConfig, JFlowProblem
from .functionals import normalize_to_I_zero, sup_inf_monitor
from .geometry import FULL, REDUCED, BackgroundForm, LatticeGrid

I_TOL = 1e-6
J_TOL = 1e-10


@dataclass
class MonitorConfig:
    I: bool = True
    J: bool = True
    sup_inf: bool = True
    second_order: bool = True
    A: float = 1.0
    epsilon: object = "auto"


@dataclass
class ExperimentConfig:
    n: int
    N: int
    g: np.ndarray
    chi0: np.ndarray
    mode: str = REDUCED
    phi_init: object = "zero"
    flow: FlowConfig = field(default_factory=FlowConfig)
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    monitors: MonitorConfig = field(default_factory=MonitorConfig)
    seed: int = 0
    normalize_init: bool = True

    def grid(self):
        return LatticeGrid(self.n, self.N, self.mode)

    def problem(self):
        return JFlowProblem(self.grid(), self.g, self.chi0)

    def initial_phi(self, grid=None):
        grid = self.grid() if grid is None else grid
        return evaluate_terms(self.phi_init, grid)


def evaluate_terms(terms, grid):
    """``sum a cos(k . x + theta)`` over the lattice; ``"zero"`` gives 0."""
    phi = np.zeros(grid.shape)
    if terms == "zero":
        return phi
    for term in terms:
        k = term["k"]
        arg = sum(ki * xi for ki, xi in zip(k, grid.coords))
        phi = phi + term["a"] * np.cos(arg + term.get("theta", 0.0))
    return phi


def _parse_matrix(value, name, n):
    try:
        rows = []
        for row in value:
            out = []
            for entry in row:
                if isinstance(entry, (list, tuple)):
                    re, im = entry
                    out.append(complex(float(re), float(im)))
                else:
                    out.append(complex(float(entry), 0.0))
            rows.append(out)
        m = np.array(rows, dtype=np.complex128)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, f"expected an {n}x{n} array of [re, im] pairs ({exc})") from None
    if m.shape != (n, n):
        raise ConfigError(name, f"expected shape ({n}, {n}), got {m.shape}")
    if not np.any(m.imag):
        m = m.real
    try:
        BackgroundForm(m)
    except PositivityLost as exc:
        raise ConfigError(name, f"matrix is not positive definite ({exc})") from None
    except DomainError as exc:
        raise ConfigError(name, str(exc)) from None
    return m


def _parse_terms(value, d):
    if value in (None, "zero"):
        return "zero"
    if not isinstance(value, list):
        raise ConfigError("phi_init", 'expected "zero" or a list of {"a", "k", "theta"} terms')
    terms = []
    for i, t in enumerate(value):
        where = f"phi_init[{i}]"
        if not isinstance(t, dict) or "a" not in t or "k" not in t:
            raise ConfigError(where, 'each term needs "a" and "k"')
        k = t["k"]
        if not isinstance(k, list) or len(k) != d or not all(isinstance(v, int) for v in k):
            raise ConfigError(f"{where}.k", f"expected {d} integer wavenumbers")
        try:
            terms.append({"a": float(t["a"]), "k": list(k), "theta": float(t.get("theta", 0.0))})
        except (TypeError, ValueError):
            raise ConfigError(where, "a and theta must be numbers") from None
    return terms


def _parse_flow(value):
    if value is None:
        return FlowConfig()
    if not isinstance(value, dict):
        raise ConfigError("flow", "expected an object")
    known = {f.name for f in fields(FlowConfig)}
    for key in value:
        if key not in known:
            raise ConfigError(f"flow.{key}", "unknown field")
    kw = dict(value)
    if "scheme" in kw:
        kw["scheme"] = str(kw["scheme"]).lower()
        if kw["scheme"] not in SCHEMES:
            raise ConfigError("flow.scheme", f"must be one of {SCHEMES}")
    try:
        return FlowConfig(**kw)
    except (DomainError, TypeError) as exc:
        raise ConfigError("flow", str(exc)) from None


def _parse_monitors(value):
    mc = MonitorConfig()
    if value is None:
        return mc
    if isinstance(value, list):
        names = set(value)
        mc.I, mc.J = "I" in names, "J" in names
        mc.sup_inf, mc.second_order = "sup_inf" in names, "second_order" in names
        return mc
    if not isinstance(value, dict):
        raise ConfigError("monitors", "expected a list of names or an object")
    for key in ("I", "J", "sup_inf"):
        if key in value:
            setattr(mc, key, bool(value[key]))
    so = value.get("second_order", True)
    if isinstance(so, dict):
        mc.second_order = bool(so.get("enabled", True))
        mc.A = float(so.get("A", 1.0))
        eps = so.get("epsilon", "auto")
        if eps != "auto":
            try:
                eps = float(eps)
            except (TypeError, ValueError):
                raise ConfigError("monitors.second_order.epsilon", 'expected a number or "auto"') from None
        mc.epsilon = eps
        if not mc.A > 0:
            raise ConfigError("monitors.second_order.A", "must be positive")
    else:
        mc.second_order = bool(so)
    return mc


def parse_config(doc):
    """Validate a config mapping; raises :class:`ConfigError` naming the bad field."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected a JSON object")
    for key in ("n", "N", "g", "chi0"):
        if key not in doc:
            raise ConfigError(key, "missing required field")
    n, N = doc["n"], doc["N"]
    if not isinstance(n, int) or not 1 <= n <= 4:
        raise ConfigError("n", "must be an integer in 1..4")
    if not isinstance(N, int) or N < 4 or N % 2:
        raise ConfigError("N", "must be an even integer >= 4")
    mode = str(doc.get("mode", REDUCED)).lower()
    if mode not in (REDUCED, FULL):
        raise ConfigError("mode", f"must be {REDUCED!r} or {FULL!r}")
    try:
        grid = LatticeGrid(n, N, mode)
    except DomainError as exc:
        raise ConfigError("N", str(exc)) from None
    newton = doc.get("newton", {}) or {}
    return ExperimentConfig(
        n=n,
        N=N,
        mode=mode,
        g=_parse_matrix(doc["g"], "g", n),
        chi0=_parse_matrix(doc["chi0"], "chi0", n),
        phi_init=_parse_terms(doc.get("phi_init", "zero"), grid.d),
        flow=_parse_flow(doc.get("flow")),
        newton_tol=float(newton.get("tol", 1e-10)),
        newton_max_iter=int(newton.get("max_iter", 50)),
        monitors=_parse_monitors(doc.get("monitors")),
        seed=int(doc.get("seed", 0)),
        normalize_init=bool(doc.get("normalize_init", True)),
    )


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(str(path), exc.strerror or str(exc)) from None
    return parse_config(doc)


def prepare_initial(config, problem):
    phi = config.initial_phi(problem.grid)
    if config.normalize_init:
        phi = normalize_to_I_zero(phi, problem.chi0, problem.grid)
    return phi


def run_monitors(trajectory, problem, monitors):
    """Evaluate every enabled monitor; returns a JSON-ready verdict mapping."""
    out = {}
    diags = trajectory.diagnostics
    if monitors.I:
        i0 = diags[0].I_value
        worst = 0.0
        for d, s in zip(diags, trajectory.states):
            scale = 1.0 + float(np.max(np.abs(s.phi)))
            worst = max(worst, abs(d.I_value - i0) / scale)
        out["I"] = {"passed": worst <= I_TOL, "max_scaled_drift": worst, "tolerance": I_TOL}
    if monitors.J:
        incs = trajectory.J_increments
        mx = max(incs) if incs else 0.0
        out["J"] = {"passed": mx <= J_TOL, "max_increment": mx, "tolerance": J_TOL, "count": len(incs)}
    if monitors.sup_inf:
        try:
            rep = sup_inf_monitor(trajectory, problem.chi0, problem.grid)
            out["sup_inf"] = {"passed": True, **rep.as_dict()}
        except MonitorViolation as exc:
            out["sup_inf"] = {"passed": False, "error": str(exc)}
    if monitors.second_order:
        cone = check_cone(problem.g, problem.chi0)
        if not cone.cone_ok:
            out["second_order"] = {"passed": True, "applicable": False, "reason": "cone condition fails"}
        else:
            eps = cone.eps_max / 2 if monitors.epsilon == "auto" else float(monitors.epsilon)
            try:
                consts = EstimateConstants(problem.n, eps, monitors.A)
                rep = second_order_monitor(trajectory, problem, consts)
                out["second_order"] = {"passed": True, "applicable": True, "epsilon": eps, "A": monitors.A,
                                       "lam_bar": rep.lam_bar, "worst_margin": rep.worst_margin}
            except (MonitorViolation, DomainError) as exc:
                out["second_order"] = {"passed": False, "applicable": True, "error": str(exc)}
    return out


def monitors_passed(verdicts):
    return all(v.get("passed", False) for v in verdicts.values())

