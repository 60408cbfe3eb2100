"""Robust multistart fitting of the scaling-law families.

The objective is the mean Huber loss between predicted and observed log
loss, with the prediction expressed as a log-sum-exp over the law's additive
terms (coefficients are optimized as log-coefficients a = log A, b = log B,
e = log E).  Every start in a deterministic initialization grid is driven to
convergence with a quasi-Newton local search using central finite-difference
gradients, falling back to simplex descent when the line search fails; the
lowest-objective start wins, ties resolved by the lexicographically smallest
start.  Exponent positivity is enforced by optimizing log-exponents for
alpha, beta, and beta'; gamma is optimized raw because its fitted sign is
meaningful.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import (
    DomainError,
    FitFailureError,
    UnidentifiableDataError,
    ValidationError,
)
from .ingest import FLOPS_PER_PARAM_TOKEN, RunSet, warmup_filter
from .laws import (
    SCHEMA_VERSION,
    ChinchillaParams,
    ExtendedCptParams,
    FrontierParams,
    law_to_dict,
)

#: Default Huber threshold on log-loss residuals.
DEFAULT_DELTA = 1e-3

#: Step for central finite-difference gradients, per optimizer coordinate.
FD_STEP = 1e-6

# Cap on log-exponent coordinates during optimization; keeps exp() finite
# when a line search probes far out (any exponent near e^50 is meaningless).
_LOG_EXPONENT_CAP = 50.0


def _exponent(q) -> float:
    return float(np.exp(min(float(q), _LOG_EXPONENT_CAP)))

# Default initialization grid: brackets the plausible coefficient range with
# margin.  Coefficient starts are log-coefficients (A = e^a up to ~1.2e6).
COEFFICIENT_STARTS = (2.0, 6.0, 10.0, 14.0)
EXPONENT_STARTS = (0.1, 0.3, 0.5, 0.7)
GAMMA_STARTS = (-0.1, 0.0, 0.1, 0.2)
OFFSET_FRACTIONS = (0.5, 0.9)  # E starts at these fractions of the lowest observed loss


@dataclass(frozen=True)
class FitConfig:
    """Fitting knobs: Huber threshold, start grid, and stopping criteria.

    ``init_grid`` entries are starting points in natural coordinates:
    (a, b, e, alpha, beta) for from-scratch fits and (b', beta', gamma) for
    CPT fits.  When omitted, the default grid is built from the data (the
    offset starts depend on the lowest observed loss).
    """

    delta: float = DEFAULT_DELTA
    init_grid: tuple[tuple[float, ...], ...] | None = None
    local_tol: float = 1e-11
    max_iters: int = 300
    warmup_fraction: float = 0.0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValidationError(f"delta must be positive, got {self.delta!r}")
        if self.init_grid is not None:
            object.__setattr__(self, "init_grid", tuple(tuple(p) for p in self.init_grid))
            if not self.init_grid:
                raise ValidationError("init_grid must be nonempty when given")
        if self.local_tol <= 0:
            raise ValidationError(f"local_tol must be positive, got {self.local_tol!r}")
        if self.max_iters < 1:
            raise ValidationError(f"max_iters must be at least 1, got {self.max_iters!r}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValidationError(
                f"warmup_fraction must lie in [0, 1), got {self.warmup_fraction!r}"
            )


@dataclass(frozen=True)
class FitReport:
    """A fitted law plus the objective value and per-record diagnostics.

    ``residuals`` are predicted minus observed log loss, aligned with the
    records the fit actually used (main-series records, in run order, after
    any warmup filtering).
    """

    params: ChinchillaParams | ExtendedCptParams
    objective: float
    n_points: int
    residuals: tuple[float, ...]
    chosen_init: tuple[float, ...]

    def __post_init__(self):
        if self.objective < 0:
            raise ValidationError(f"objective must be nonnegative, got {self.objective!r}")
        if len(self.residuals) != self.n_points:
            raise ValidationError(
                f"residual count {len(self.residuals)} != n_points {self.n_points}"
            )


@dataclass(frozen=True)
class ModelComparison:
    """Mean Huber objectives of both law families on the same data."""

    chinchilla_error: float
    extended_error: float
    gamma_fitted: float

    def __post_init__(self):
        if self.chinchilla_error < 0 or self.extended_error < 0:
            raise ValidationError("fitting errors must be nonnegative")


def huber(residual, delta: float = DEFAULT_DELTA):
    """Huber penalty: quadratic inside |r| <= delta, linear with matched slope outside."""
    if delta <= 0:
        raise DomainError(f"delta must be positive, got {delta!r}")
    r = np.asarray(residual, dtype=float)
    magnitude = np.abs(r)
    out = np.where(magnitude <= delta, 0.5 * r * r, delta * (magnitude - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


def lse(terms) -> float:
    """log(sum(exp(terms))) computed with the max-subtraction trick."""
    arr = np.asarray(terms, dtype=float).ravel()
    if arr.size == 0:
        raise DomainError("lse requires at least one term")
    peak = float(arr.max())
    return peak + math.log(float(np.sum(np.exp(arr - peak))))


def _mean_huber(residuals: np.ndarray, delta: float) -> float:
    magnitude = np.abs(residuals)
    penalties = np.where(
        magnitude <= delta, 0.5 * residuals * residuals, delta * (magnitude - 0.5 * delta)
    )
    return float(np.mean(penalties))


def _fit_records(data: RunSet):
    """(run, record) pairs the fits use: each run's own-language loss series."""
    for run in data:
        for rec in run.main_series():
            yield run, rec


def _flatten(data: RunSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_vals, d_vals, l_vals = [], [], []
    for run, rec in _fit_records(data):
        n_vals.append(run.param_count)
        d_vals.append(rec.tokens)
        l_vals.append(rec.loss)
    if not n_vals:
        raise UnidentifiableDataError("RunSet contains no usable records")
    return (
        np.log(np.asarray(n_vals, dtype=float)),
        np.log(np.asarray(d_vals, dtype=float)),
        np.log(np.asarray(l_vals, dtype=float)),
    )


def _predicted_scratch(theta, log_n: np.ndarray, log_d: np.ndarray) -> np.ndarray:
    a, b, e, alpha, beta = theta
    return np.logaddexp(np.logaddexp(a - alpha * log_n, b - beta * log_d), e)


def _predicted_cpt(theta2, fixed, log_n: np.ndarray, log_d: np.ndarray) -> np.ndarray:
    b, beta, gamma = theta2
    a, e, alpha = fixed
    return np.logaddexp(np.logaddexp(a - alpha * log_n, b - beta * log_d - gamma * log_n), e)


def objective_scratch(theta: Sequence[float], data: RunSet, delta: float = DEFAULT_DELTA) -> float:
    """Mean Huber loss of the from-scratch law at theta = (a, b, e, alpha, beta).

    Coefficients follow the A = exp(a), B = exp(b), E = exp(e) convention.
    Nonpositive losses cannot occur here; ingest rejects them at load time.
    """
    log_n, log_d, log_l = _flatten(data)
    return _mean_huber(_predicted_scratch(theta, log_n, log_d) - log_l, delta)


def objective_cpt(
    theta2: Sequence[float],
    fixed: Sequence[float],
    data: RunSet,
    delta: float = DEFAULT_DELTA,
) -> float:
    """Mean Huber loss of the CPT law at theta2 = (b', beta', gamma).

    ``fixed`` carries (a, e, alpha) from a completed from-scratch fit, held
    constant.
    """
    log_n, log_d, log_l = _flatten(data)
    return _mean_huber(_predicted_cpt(theta2, fixed, log_n, log_d) - log_l, delta)


def _fd_gradient(fun, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    grad = np.empty_like(x)
    for i in range(x.size):
        up = x.copy()
        down = x.copy()
        up[i] += step
        down[i] -= step
        grad[i] = (fun(up) - fun(down)) / (2.0 * step)
    return grad


def _minimize_multistart(fun, starts: list[tuple[tuple[float, ...], np.ndarray]], cfg: FitConfig):
    """Run the local search from every start; return (objective, natural, x).

    Winner selection is a deterministic reduction: lowest objective, ties
    broken by the lexicographically smallest natural-coordinate start.
    """
    results = []
    failures = []
    for natural, x0 in starts:
        res = minimize(
            fun,
            x0,
            jac=lambda x: _fd_gradient(fun, x),
            method="L-BFGS-B",
            options={"maxiter": cfg.max_iters, "ftol": cfg.local_tol, "gtol": 1e-10},
        )
        if not res.success:
            res = minimize(
                fun,
                x0,
                method="Nelder-Mead",
                options={
                    "maxiter": 40 * cfg.max_iters,
                    "fatol": cfg.local_tol,
                    "xatol": 1e-9,
                },
            )
        if res.success and math.isfinite(res.fun):
            results.append((float(res.fun), natural, np.asarray(res.x, dtype=float)))
        else:
            failures.append(f"start {natural}: {res.message}")
    if not results:
        raise FitFailureError(
            "no optimizer start converged; diagnostics:\n  " + "\n  ".join(failures)
        )
    return min(results, key=lambda item: (item[0], item[1]))


def _check_identifiable(log_n: np.ndarray, log_d: np.ndarray) -> None:
    if np.unique(log_n).size < 2 or np.unique(log_d).size < 2:
        raise UnidentifiableDataError(
            "fitting requires at least two distinct model sizes and two distinct token counts"
        )


def _apply_warmup(data: RunSet, fraction: float) -> RunSet:
    if fraction == 0.0:
        return data
    return RunSet(runs=tuple(warmup_filter(run, fraction) for run in data))


def _default_scratch_grid(min_loss: float) -> list[tuple[float, ...]]:
    offsets = tuple(math.log(frac * min_loss) for frac in OFFSET_FRACTIONS)
    return [
        (a, b, e, alpha, beta)
        for a in COEFFICIENT_STARTS
        for b in COEFFICIENT_STARTS
        for e in offsets
        for alpha in EXPONENT_STARTS
        for beta in EXPONENT_STARTS
    ]


def _default_cpt_grid() -> list[tuple[float, ...]]:
    return list(product(COEFFICIENT_STARTS, EXPONENT_STARTS, GAMMA_STARTS))


def fit_scratch(data: RunSet, cfg: FitConfig | None = None) -> FitReport:
    """Fit the from-scratch law to a RunSet via the multistart procedure."""
    cfg = cfg or FitConfig()
    data = _apply_warmup(data, cfg.warmup_fraction)
    log_n, log_d, log_l = _flatten(data)
    _check_identifiable(log_n, log_d)

    grid = cfg.init_grid or _default_scratch_grid(float(np.exp(log_l.min())))
    starts = []
    for point in grid:
        if len(point) != 5:
            raise ValidationError(
                f"from-scratch starts need 5 coordinates (a, b, e, alpha, beta), got {point!r}"
            )
        a, b, e, alpha, beta = point
        if alpha <= 0 or beta <= 0:
            raise ValidationError(f"start {point!r}: exponents must be positive")
        starts.append((tuple(point), np.array([a, b, e, math.log(alpha), math.log(beta)])))

    delta = cfg.delta

    def fun(q: np.ndarray) -> float:
        theta = (q[0], q[1], q[2], _exponent(q[3]), _exponent(q[4]))
        return _mean_huber(_predicted_scratch(theta, log_n, log_d) - log_l, delta)

    objective, chosen, x = _minimize_multistart(fun, starts, cfg)
    theta = (x[0], x[1], x[2], float(np.exp(x[3])), float(np.exp(x[4])))
    params = ChinchillaParams(
        E=float(np.exp(x[2])),
        A=float(np.exp(x[0])),
        B=float(np.exp(x[1])),
        alpha=theta[3],
        beta=theta[4],
    )
    residuals = _predicted_scratch(theta, log_n, log_d) - log_l
    return FitReport(
        params=params,
        objective=objective,
        n_points=int(log_l.size),
        residuals=tuple(float(r) for r in residuals),
        chosen_init=chosen,
    )


def fit_cpt(
    data: RunSet, fixed: Sequence[float], cfg: FitConfig | None = None
) -> FitReport:
    """Fit the CPT law's free coefficients (B', beta', gamma).

    ``fixed`` supplies (E, A, alpha) from a completed from-scratch fit; those
    three values are not updated.
    """
    cfg = cfg or FitConfig()
    fixed_e, fixed_a, fixed_alpha = (float(v) for v in fixed)
    if fixed_e <= 0 or fixed_a <= 0 or fixed_alpha <= 0:
        raise ValidationError(f"fixed (E, A, alpha) must be positive, got {tuple(fixed)!r}")
    data = _apply_warmup(data, cfg.warmup_fraction)
    log_n, log_d, log_l = _flatten(data)
    _check_identifiable(log_n, log_d)

    grid = cfg.init_grid or _default_cpt_grid()
    starts = []
    for point in grid:
        if len(point) != 3:
            raise ValidationError(
                f"CPT starts need 3 coordinates (b', beta', gamma), got {point!r}"
            )
        b, beta, gamma = point
        if beta <= 0:
            raise ValidationError(f"start {point!r}: beta' must be positive")
        starts.append((tuple(point), np.array([b, math.log(beta), gamma])))

    fixed_log = (math.log(fixed_a), math.log(fixed_e), fixed_alpha)
    delta = cfg.delta

    def fun(q: np.ndarray) -> float:
        theta2 = (q[0], _exponent(q[1]), q[2])
        return _mean_huber(_predicted_cpt(theta2, fixed_log, log_n, log_d) - log_l, delta)

    objective, chosen, x = _minimize_multistart(fun, starts, cfg)
    theta2 = (x[0], float(np.exp(x[1])), x[2])
    params = ExtendedCptParams(
        E=fixed_e,
        A=fixed_a,
        alpha=fixed_alpha,
        B_prime=float(np.exp(x[0])),
        beta_prime=theta2[1],
        gamma=float(x[2]),
    )
    residuals = _predicted_cpt(theta2, fixed_log, log_n, log_d) - log_l
    return FitReport(
        params=params,
        objective=objective,
        n_points=int(log_l.size),
        residuals=tuple(float(r) for r in residuals),
        chosen_init=chosen,
    )


def extract_compute_frontier(
    data: RunSet, bins_per_decade: int = 10
) -> list[tuple[float, float]]:
    """Lowest loss per compute bin, Pareto-filtered to be strictly decreasing.

    Compute is binned in log10 space (``bins_per_decade`` bins per decade);
    each bin keeps its minimum-loss record at that record's actual compute.
    """
    if bins_per_decade < 1:
        raise DomainError(f"bins_per_decade must be at least 1, got {bins_per_decade!r}")
    best: dict[int, tuple[float, float]] = {}
    for run, rec in _fit_records(data):
        compute = FLOPS_PER_PARAM_TOKEN * run.param_count * rec.tokens
        key = math.floor(math.log10(compute) * bins_per_decade)
        incumbent = best.get(key)
        if incumbent is None or (rec.loss, compute) < incumbent:
            best[key] = (rec.loss, compute)
    if not best:
        raise ValidationError("cannot extract a frontier from an empty RunSet")

    frontier = []
    for loss, compute in sorted(best.values(), key=lambda item: item[1]):
        if not frontier or loss < frontier[-1][1]:
            frontier.append((compute, loss))
    return frontier


def fit_frontier(
    points: Sequence[tuple[float, float]], fix_offset_zero: bool = True
) -> FrontierParams:
    """Fit the loss-compute power law to (C, L) frontier points.

    With the offset fixed at zero this is linear regression in
    (log C, log L); otherwise the offset is fitted jointly by minimizing the
    mean Huber loss on log residuals from a small deterministic set of
    starts.
    """
    pts = [(float(c), float(l)) for c, l in points]
    if any(c <= 0 or l <= 0 for c, l in pts):
        raise DomainError("frontier points must have positive compute and loss")
    log_c = np.log([c for c, _ in pts])
    log_l = np.log([l for _, l in pts])
    if np.unique(log_c).size < 2:
        raise UnidentifiableDataError("frontier fitting requires two distinct compute values")

    slope, intercept = np.polyfit(log_c, log_l, 1)
    exponent = -float(slope)
    if abs(exponent) < 1e-12:  # flat data: suppress least-squares noise
        exponent = 0.0
    zero_offset = FrontierParams(
        coefficient=float(np.exp(intercept)), exponent=exponent, offset=0.0
    )
    if fix_offset_zero:
        return zero_offset

    min_loss = float(np.exp(log_l.min()))

    def fun(q: np.ndarray) -> float:
        log_coef, exponent, offset = q
        pred = offset + np.exp(np.minimum(log_coef - exponent * log_c, 700.0))
        return _mean_huber(np.log(np.maximum(pred, 1e-300)) - log_l, DEFAULT_DELTA)

    best = None
    for offset0 in (0.0, 0.5 * min_loss, 0.9 * min_loss):
        res = minimize(
            fun,
            np.array([math.log(zero_offset.coefficient), zero_offset.exponent, offset0]),
            jac=lambda x: _fd_gradient(fun, x),
            method="L-BFGS-B",
            bounds=[(None, None), (0.0, None), (0.0, min_loss)],
            options={"maxiter": 500, "ftol": 1e-13},
        )
        candidate = (float(res.fun), float(offset0), res.x)
        if res.success and (best is None or candidate[:2] < best[:2]):
            best = candidate
    if best is None:
        raise FitFailureError("offset-free frontier fit did not converge from any start")
    log_coef, exponent, offset = best[2]
    return FrontierParams(
        coefficient=float(np.exp(log_coef)), exponent=float(exponent), offset=float(offset)
    )


def compare_laws(data: RunSet, cfg: FitConfig | None = None) -> ModelComparison:
    """Fit both families to the same data and report their objectives.

    Stage one is the full five-coefficient from-scratch fit.  Stage two
    refits the extended family's complete coefficient set, warm-started from
    the stage-one solution (with the stage-one optimum at gamma = 0 included
    as a start, so the extended objective can never exceed the from-scratch
    objective).  The data-parameter exponent gamma is reported as fitted;
    fixing (E, A, alpha) here instead would leave gamma unidentifiable
    because a single RunSet cannot separate it from the stage-one bias.
    """
    cfg = cfg or FitConfig()
    scratch_report = fit_scratch(data, cfg)

    data_f = _apply_warmup(data, cfg.warmup_fraction)
    log_n, log_d, log_l = _flatten(data_f)
    p = scratch_report.params
    # Natural start coordinates: (a, b', e, alpha, beta', gamma) with a, b',
    # e as log-coefficients, matching the scratch-grid convention.
    a1, b1, e1 = math.log(p.A), math.log(p.B), math.log(p.E)
    starts = [
        (
            (a1, b1, e1, p.alpha, p.beta, 0.0),
            np.array([a1, b1, e1, math.log(p.alpha), math.log(p.beta), 0.0]),
        )
    ]
    for b, beta, gamma in _default_cpt_grid():
        starts.append(
            (
                (a1, b, e1, p.alpha, beta, gamma),
                np.array([a1, b, e1, math.log(p.alpha), math.log(beta), gamma]),
            )
        )

    delta = cfg.delta

    def fun(q: np.ndarray) -> float:
        pred = np.logaddexp(
            np.logaddexp(
                q[0] - _exponent(q[3]) * log_n,
                q[1] - _exponent(q[4]) * log_d - q[5] * log_n,
            ),
            q[2],
        )
        return _mean_huber(pred - log_l, delta)

    extended_error, _, x = _minimize_multistart(fun, starts, cfg)
    return ModelComparison(
        chinchilla_error=scratch_report.objective,
        extended_error=extended_error,
        gamma_fitted=float(x[5]),
    )


def fit_report_to_dict(report: FitReport) -> dict:
    """Serialize a FitReport (without residuals) to a JSON-compatible dict."""
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "fit_report",
        "params": law_to_dict(report.params),
        "objective": report.objective,
        "n_points": report.n_points,
        "chosen_init": list(report.chosen_init),
    }


def export_residuals_csv(report: FitReport, data: RunSet, path, warmup_fraction: float = 0.0):
    """Write per-record residuals as CSV.

    Pass the same RunSet and warmup fraction used for the fit so rows align
    with ``report.residuals``.
    """
    data = _apply_warmup(data, warmup_fraction)
    rows = list(_fit_records(data))
    if len(rows) != report.n_points:
        raise ValidationError(
            f"data yields {len(rows)} records but the report covers {report.n_points}"
        )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["run_id", "tokens", "predicted_log_loss", "observed_log_loss", "residual"]
        )
        for (run, rec), residual in zip(rows, report.residuals):
            observed = math.log(rec.loss)
            writer.writerow(
                [run.id, rec.tokens, f"{observed + residual:.12g}", f"{observed:.12g}", f"{residual:.12g}"]
            )
