"""Weighted nonlinear least-squares calibration of hidden model parameters.

The solver is scipy's bounded trust-region reflective least squares, fed a
forward-difference Jacobian computed here (stepping backward near an upper
bound so no evaluation leaves the box). Parameters are rescaled by Jacobian
column norms, which keeps a start at half or twice the truth from drifting
onto a bound where the error surface is flat.
"""

from __future__ import annotations

import logging
import math
import re
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import least_squares

from .compartment import simulate_compartments
from .config import PER_PA_FIELDS, ModelParameters, OrganogenesisRules, with_values
from .engine import SimulationError, simulate
from .patterns import PatternVector, TargetDataset, extract_pattern

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps

SCALAR_FREE = ("r", "k_beer", "s_p", "ring_sink_const", "ring_sink_slope", "lambda_pressler", "slw")
ALIASES = {
    "P_1": "ring_sink_slope",
    "P1": "ring_sink_slope",
    "P_l": "ring_sink_slope",
    "P_0": "ring_sink_const",
    "P0": "ring_sink_const",
    "lambda": "lambda_pressler",
    "λ": "lambda_pressler",
    "S_p": "s_p",
    "Sp": "s_p",
    "k": "k_beer",
}
_PA_ALIASES = {"p_rg": "ring_density", "P_a": "sink_needle", "P_e": "sink_internode"}
_PA_RE = re.compile(r"^(\w+?)[\(\[](\d+)[\)\]]$")


class AlignmentError(ValueError):
    def __init__(self, missing: list):
        self.missing = missing
        shown = ", ".join(map(str, missing[:10]))
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        super().__init__(f"{len(missing)} target rows have no simulated counterpart: {shown}{more}")


class NonIdentifiableError(RuntimeError):
    def __init__(self, names: list[str], direction: np.ndarray):
        self.names = names
        self.direction = direction
        terms = " ".join(f"{c:+.3g}*{n}" for c, n in zip(direction, names) if abs(c) > 1e-3)
        super().__init__(f"normal matrix is singular; flat direction: {terms}")


def canonical_name(name: str) -> str:
    """Map a user-facing parameter name to ``field`` or ``field[k]``."""
    name = name.strip()
    if name in ALIASES:
        return ALIASES[name]
    if name in SCALAR_FREE:
        return name
    m = _PA_RE.match(name)
    if m:
        base, k = m.group(1), int(m.group(2))
        base = _PA_ALIASES.get(base, base)
        if base in PER_PA_FIELDS and k >= 1:
            return f"{base}[{k}]"
    raise KeyError(f"unknown free parameter {name!r}")


def current_value(params: ModelParameters, name: str) -> float:
    if "[" in name:
        base, k = name[:-1].split("[")
        return getattr(params, base)[int(k) - 1]
    return float(getattr(params, name))


def default_bounds(name: str) -> tuple[float, float]:
    if name == "lambda_pressler":
        return 0.0, 1.0
    return 0.0, math.inf


# --- problem --------------------------------------------------------------


@dataclass(frozen=True)
class FreeParameter:
    name: str
    initial: float
    lower: float = 0.0
    upper: float = math.inf


@dataclass
class FitProblem:
    """A calibration problem.

    ``params`` holds the fixed values; the entries named by ``free`` are
    overwritten by the optimizer. ``weighting`` is ``"file"`` (per-row
    weights from the target file), ``"unit"``, or ``"relative"``
    (``1 / value**2``).
    """

    params: ModelParameters
    rules: OrganogenesisRules
    targets: TargetDataset
    free: list[FreeParameter]
    weighting: str = "file"
    per_whorl: bool = False
    fast_compartments: bool = True
    _index: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.targets.pattern not in (1, 2) or not len(self.targets):
            raise ValueError("targets must be a non-empty pattern-1 or pattern-2 dataset")
        if self.weighting not in ("file", "unit", "relative"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        names = [p.name for p in self.free]
        if len(set(names)) != len(names):
            raise ValueError("duplicate free parameter")
        for p in self.free:
            if canonical_name(p.name) != p.name:
                raise ValueError(f"free parameter {p.name!r} is not canonical")
            if p.name in ("sink_needle[1]", "ring_density[1]"):
                raise ValueError(f"{p.name} is fixed at 1 by normalization")
            base = p.name.split("[")[0]
            if "[" in p.name and int(p.name[:-1].split("[")[1]) > self.rules.pa_max:
                raise ValueError(f"{p.name}: PA beyond pa_max")
            if p.name == "lambda_pressler" and (p.lower < 0 or p.upper > 1):
                raise ValueError("lambda_pressler bounds must lie within [0, 1]")
            if base != "lambda_pressler" and p.lower < 0:
                raise ValueError(f"{p.name}: lower bound must be >= 0")
            if not p.lower <= p.initial <= p.upper:
                raise ValueError(f"{p.name}: initial value {p.initial} outside bounds")
        # canonical row order makes the fit independent of the file's row order
        rows = tuple(sorted(self.targets.rows, key=lambda r: r.key))
        self.targets = PatternVector(self.targets.pattern, rows)
        obs = self.targets.values
        if self.weighting == "unit":
            w = np.ones_like(obs)
        elif self.weighting == "relative":
            w = np.where(obs > 0, 1.0 / np.where(obs > 0, obs, 1.0) ** 2, 1.0)
        else:
            w = np.array([r.weight for r in rows])
        self._n_pred = -1
        self._sqrt_w = np.sqrt(w)
        self._obs = obs

    @property
    def pattern(self) -> int:
        return self.targets.pattern

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.free]

    def merged(self, theta) -> ModelParameters:
        return with_values(self.params, dict(zip(self.names, map(float, theta))))

    def predict(self, params: ModelParameters) -> PatternVector:
        if (
            self.pattern == 2
            and self.fast_compartments
            and not self.per_whorl
            and not params.foliage_mass_weighted
        ):
            return extract_pattern(simulate_compartments(params, self.rules), 2)
        return extract_pattern(simulate(params, self.rules), self.pattern, self.per_whorl)

    def align(self, predicted: PatternVector) -> np.ndarray:
        """Simulated values in target row order."""
        if self._index is None or len(predicted) != self._n_pred:
            where = {key: i for i, key in enumerate(predicted.keys)}
            missing = [r.key for r in self.targets.rows if r.key not in where]
            if missing:
                raise AlignmentError(missing)
            self._index = np.array([where[r.key] for r in self.targets.rows])
            self._n_pred = len(predicted)
        return predicted.values[self._index]


def residuals(theta, problem: FitProblem) -> np.ndarray:
    """``sqrt(weight) * (simulated - observed)``, in canonical target order."""
    sim = problem.align(problem.predict(problem.merged(theta)))
    return problem._sqrt_w * (sim - problem._obs)


def make_problem(
    params: ModelParameters,
    rules: OrganogenesisRules,
    targets: TargetDataset,
    free: dict[str, float] | list[str],
    bounds: dict[str, tuple[float, float]] | None = None,
    **kwargs,
) -> FitProblem:
    """Build a problem from names (initial values taken from ``params``) or a name->initial map."""
    bounds = {canonical_name(k): v for k, v in (bounds or {}).items()}
    if isinstance(free, dict):
        items = [(canonical_name(k), float(v)) for k, v in free.items()]
    else:
        items = [(canonical_name(k), None) for k in free]
    specs = []
    for name, init in items:
        lo, hi = bounds.get(name, default_bounds(name))
        if init is None:
            init = current_value(params, name)
        specs.append(FreeParameter(name, init, lo, hi))
    return FitProblem(params, rules, targets, specs, **kwargs)


# --- optimizer --------------------------------------------------------------


@dataclass
class FitOptions:
    max_evaluations: int = 2000
    # relative tolerances on the error, the step and the scaled gradient
    ftol: float = 1e-12
    xtol: float = 1e-12
    gtol: float = 1e-12
    # "jac" rescales parameters by the Jacobian column norms each iteration;
    # a float or array fixes the scale instead
    x_scale: str | float | np.ndarray = "jac"


@dataclass
class FitResult:
    names: list[str]
    estimates: dict[str, float]
    cv_percent: dict[str, float]
    error: float
    initial_error: float
    iterations: int
    evaluations: int
    wall_time: float
    converged: bool
    message: str
    n_observations: int
    history: list[dict] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "estimates": self.estimates,
            "cv_percent": self.cv_percent,
            "error": self.error,
            "initial_error": self.initial_error,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "wall_time": self.wall_time,
            "converged": self.converged,
            "message": self.message,
            "n_observations": self.n_observations,
        }


def forward_jacobian(
    fun: Callable, x: np.ndarray, r0: np.ndarray, upper: np.ndarray | None = None
) -> np.ndarray:
    """One-sided differences; steps back from ``upper`` when a forward step would cross it."""
    jac = np.empty((len(r0), len(x)))
    for j in range(len(x)):
        h = math.sqrt(EPS) * max(abs(x[j]), 1e-3)
        if upper is not None and x[j] + h > upper[j]:
            h = -h
        xp = x.copy()
        xp[j] += h
        jac[:, j] = (fun(xp) - r0) / (xp[j] - x[j])
    return jac


def central_jacobian(fun: Callable, x: np.ndarray) -> np.ndarray:
    cols = []
    for j in range(len(x)):
        h = EPS ** (1 / 3) * max(abs(x[j]), 1e-3)
        up, dn = x.copy(), x.copy()
        up[j] += h
        dn[j] -= h
        cols.append((fun(up) - fun(dn)) / (up[j] - dn[j]))
    return np.column_stack(cols) if cols else np.empty((0, 0))


def check_identifiable(jac: np.ndarray, names: list[str], rcond: float = 1e-10) -> None:
    """Raise if some combination of parameters leaves every residual unchanged."""
    norms = np.linalg.norm(jac, axis=0)
    if np.any(norms == 0):
        raise NonIdentifiableError(names, (norms == 0).astype(float))
    s, vt = np.linalg.svd(jac / norms, full_matrices=False)[1:]
    if s[-1] < rcond * s[0]:
        direction = vt[-1] / norms
        raise NonIdentifiableError(names, direction / np.max(np.abs(direction)))


class _Counter:
    def __init__(self, fun):
        self.fun = fun
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        return self.fun(x)


def _feasible_box(specs: list[FreeParameter]) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = [], []
    for p in specs:
        if p.lower > 0 or p.name == "lambda_pressler":
            lo.append(p.lower)
        else:
            # strictly positive quantities: stay a hair above zero
            lo.append(p.lower + 1e-9 * max(abs(p.initial), 1e-12))
        hi.append(p.upper)
    return np.array(lo), np.array(hi)


def fit(problem: FitProblem, options: FitOptions | None = None) -> FitResult:
    """Minimize the weighted residual sum of squares over the free parameters.

    Runs a bounded trust-region reflective solver with the forward-difference
    Jacobian of this module. ``history`` holds one entry per accepted iterate,
    starting with the initial point.

    Raises:
        NonIdentifiableError: the Jacobian is rank-deficient at the start.
    """
    options = options or FitOptions()
    t0 = time.perf_counter()
    specs = problem.free
    names = problem.names
    lo, hi = _feasible_box(specs)

    history: list[dict] = []
    last: dict = {}

    def fun(x):
        try:
            r = residuals(x, problem)
        except SimulationError as exc:
            if not last:
                raise
            # a failed trial point makes the solver shrink its step
            log.debug("trial point failed: %s", exc)
            return np.full(len(problem._obs), np.inf)
        last["x"], last["r"] = x.copy(), r
        return r

    counted = _Counter(fun)

    def jac(x):
        # the solver asks for a Jacobian once per accepted iterate
        r0 = last["r"] if np.array_equal(last.get("x"), x) else counted(x)
        if not history or not np.array_equal(history[-1]["x"], x):
            history.append({"iteration": len(history), "error": float(r0 @ r0), "x": x.copy()})
        return forward_jacobian(counted, x, r0, hi)

    x0 = np.clip(np.array([p.initial for p in specs], dtype=float), lo, hi)
    r0 = counted(x0)
    f0 = float(r0 @ r0)
    n_obs = len(r0)
    if not specs:
        return FitResult(
            [], {}, {}, f0, f0, 0, counted.calls, time.perf_counter() - t0, True,
            "no free parameters", n_obs, history,
        )
    check_identifiable(jac(x0), names)
    if f0 == 0.0:
        x, r, f, nit, converged, message = x0, r0, 0.0, 0, True, "zero residual"
    else:
        sol = least_squares(
            counted, x0, jac=jac, bounds=(lo, hi), method="trf",
            x_scale=options.x_scale, ftol=options.ftol, xtol=options.xtol,
            gtol=options.gtol, max_nfev=options.max_evaluations,
        )
        x, r = sol.x, sol.fun
        f = float(r @ r)
        nit, converged, message = int(sol.njev) - 1, sol.status > 0, str(sol.message)
        if not history or not np.array_equal(history[-1]["x"], x):
            history.append({"iteration": len(history), "error": f, "x": x.copy()})

    cv = _cv_percent(counted, x, r, f, hi, n_obs)
    history = [
        {"iteration": h["iteration"], "error": h["error"], **dict(zip(names, map(float, h["x"])))}
        for h in history
    ]
    return FitResult(
        names,
        dict(zip(names, map(float, x))),
        dict(zip(names, cv)),
        f,
        f0,
        nit,
        counted.calls,
        time.perf_counter() - t0,
        converged,
        message,
        n_obs,
        history,
    )


def _cv_percent(fun, x, r, f, hi, n_obs) -> list[float]:
    """100 * standard error / estimate, from ``s^2 (J^T W J)^-1`` at the optimum."""
    p = len(x)
    if n_obs <= p:
        return [math.nan] * p
    jac = forward_jacobian(fun, x, r, hi)
    s2 = f / (n_obs - p)
    try:
        cov = s2 * np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        return [math.nan] * p
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return [float(100.0 * s / abs(t)) if t != 0 else math.nan for s, t in zip(se, x)]


def fit_multistart(
    problem: FitProblem,
    starts: int,
    seed: int = 0,
    spread: float = 2.0,
    options: FitOptions | None = None,
) -> FitResult:
    """Best of ``starts`` fits: the given initial point, then random ones
    multiplied by factors in ``[1/spread, spread]`` (log-uniform), clipped to bounds."""
    rng = np.random.default_rng(seed)
    best = None
    for s in range(starts):
        if s == 0:
            trial = problem
        else:
            free = []
            for p in problem.free:
                x = p.initial * spread ** rng.uniform(-1, 1)
                x = min(max(x, p.lower), p.upper)
                free.append(FreeParameter(p.name, x, p.lower, p.upper))
            trial = FitProblem(
                problem.params, problem.rules, problem.targets, free,
                problem.weighting, problem.per_whorl, problem.fast_compartments,
            )
        result = fit(trial, options)
        if best is None or result.error < best.error:
            best = result
    return best


def compare_patterns(
    problem1: FitProblem, problem2: FitProblem, options: FitOptions | None = None
) -> dict:
    """Fit the same tree from pattern-1 and pattern-2 targets and report both."""
    if problem1.rules != problem2.rules:
        raise ValueError("both problems must share organogenesis rules")
    report: dict = {"patterns": {}}
    for label, problem in (("1", problem1), ("2", problem2)):
        try:
            result = fit(problem, options)
            report["patterns"][label] = {
                "pattern": problem.pattern,
                **result.to_dict(),
            }
        except Exception as exc:  # one failing pattern must not hide the other
            report["patterns"][label] = {"pattern": problem.pattern, "failed": str(exc)}
    t1 = report["patterns"]["1"].get("wall_time")
    t2 = report["patterns"]["2"].get("wall_time")
    report["time_ratio"] = t1 / t2 if t1 and t2 else None
    return report
