"""Cross-strategy transfer measurement and replay forgetting curves.

Two routes quantify the CPT benefit at matched loss:

* empirically, by interpolating a pair of measured loss curves at common
  loss levels (tokens saved, FLOPs-saving fraction), and
* parametrically, by inverting a fitted from-scratch law at the loss the
  fitted CPT law reaches.

Transfer values are signed and never clamped: past the point where the two
laws cross, continued pre-training is predicted to need *more* tokens.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DomainError,
    InterpolationRangeError,
    UnreachableLossError,
    ValidationError,
)
from .ingest import (
    FLOPS_PER_PARAM_TOKEN,
    RunSet,
    TrainingRun,
    attribute_flops_by_language,
)
from .laws import (
    SCHEMA_VERSION,
    ChinchillaParams,
    ExtendedCptParams,
    FrontierParams,
    eval_extended,
    solve_tokens_for_loss,
)

#: Default number of loss levels for empirical transfer reports.
DEFAULT_LEVELS = 32


@dataclass(frozen=True)
class CurveInterpolator:
    """Piecewise-linear loss curve in (log tokens, log loss).

    Knots are the run's records after running-minimum smoothing, so the
    curve is nonincreasing and inverse lookup is well defined: a loss level
    maps to the first token count that achieved it.
    """

    log_tokens: tuple[float, ...]
    log_losses: tuple[float, ...]

    def __post_init__(self):
        if len(self.log_tokens) < 2 or len(self.log_tokens) != len(self.log_losses):
            raise ValidationError("interpolator needs at least two aligned knots")
        if any(b <= a for a, b in zip(self.log_tokens, self.log_tokens[1:])):
            raise ValidationError("knot tokens must strictly increase")
        if any(b > a for a, b in zip(self.log_losses, self.log_losses[1:])):
            raise ValidationError("knot losses must be nonincreasing")

    @property
    def domain(self) -> tuple[float, float]:
        """Token range covered by the curve."""
        return math.exp(self.log_tokens[0]), math.exp(self.log_tokens[-1])

    @property
    def loss_range(self) -> tuple[float, float]:
        """(lowest, highest) loss reached along the curve."""
        return math.exp(self.log_losses[-1]), math.exp(self.log_losses[0])

    def loss_at_tokens(self, tokens: float) -> float:
        x = math.log(tokens) if tokens > 0 else -math.inf
        if x < self.log_tokens[0] or x > self.log_tokens[-1]:
            raise InterpolationRangeError(
                f"tokens {tokens!r} outside curve domain {self.domain!r}"
            )
        return math.exp(float(np.interp(x, self.log_tokens, self.log_losses)))

    def tokens_at_loss(self, loss: float) -> float:
        lo, hi = self.loss_range
        if loss <= 0 or loss < lo or loss > hi:
            raise InterpolationRangeError(
                f"loss {loss!r} outside achieved range {(lo, hi)!r}"
            )
        # Keep only first-achievement knots so the sequence is strictly
        # decreasing and invertible; flat stretches map to their left edge.
        xs, ys = [], []
        last = math.inf
        for t, l in zip(self.log_tokens, self.log_losses):
            if l < last:
                xs.append(l)
                ys.append(t)
                last = l
        # np.interp needs ascending x
        return math.exp(float(np.interp(math.log(loss), xs[::-1], ys[::-1])))


def interp_loss_curve(run: TrainingRun) -> CurveInterpolator:
    """Build the smoothed interpolator for a run's own-language loss series."""
    records = run.main_series()
    if len(records) < 2:
        raise DomainError(f"run {run.id!r} needs at least two records to interpolate")
    tokens = np.array([rec.tokens for rec in records], dtype=float)
    losses = np.minimum.accumulate(np.array([rec.loss for rec in records], dtype=float))
    return CurveInterpolator(
        log_tokens=tuple(np.log(tokens)), log_losses=tuple(np.log(losses))
    )


@dataclass(frozen=True)
class TransferReport:
    """Tokens and FLOPs saved by CPT at each common loss level."""

    loss_levels: tuple[float, ...]
    d_pt: tuple[float, ...]
    d_cpt: tuple[float, ...]
    transferred_tokens: tuple[float, ...]
    flops_saved_fraction: tuple[float, ...]

    def __post_init__(self):
        n = len(self.loss_levels)
        for name in ("d_pt", "d_cpt", "transferred_tokens", "flops_saved_fraction"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"{name} is not aligned with loss_levels")
        if any(f >= 1.0 for f in self.flops_saved_fraction):
            raise ValidationError("a FLOPs-saving fraction of 1 or more is impossible")


def empirical_transfer(
    run_pt: TrainingRun, run_cpt: TrainingRun, levels: int = DEFAULT_LEVELS
) -> TransferReport:
    """Measure transfer between two runs of equal size at matched loss levels.

    Levels are geometrically spaced across the overlap of the two achieved
    loss ranges, highest loss first.
    """
    if run_pt.param_count != run_cpt.param_count:
        raise ValidationError(
            f"runs must have equal param_count, got {run_pt.param_count} "
            f"and {run_cpt.param_count}"
        )
    if levels < 1:
        raise DomainError(f"levels must be at least 1, got {levels!r}")
    curve_pt = interp_loss_curve(run_pt)
    curve_cpt = interp_loss_curve(run_cpt)
    low = max(curve_pt.loss_range[0], curve_cpt.loss_range[0])
    high = min(curve_pt.loss_range[1], curve_cpt.loss_range[1])
    if low > high:
        raise ValidationError("the two runs' loss ranges do not overlap")

    rows = []
    for level in np.geomspace(high, low, levels):
        level = float(level)
        d_pt = curve_pt.tokens_at_loss(level)
        d_cpt = curve_cpt.tokens_at_loss(level)
        c_pt = FLOPS_PER_PARAM_TOKEN * run_pt.param_count * d_pt
        c_cpt = FLOPS_PER_PARAM_TOKEN * run_cpt.param_count * d_cpt
        rows.append((level, d_pt, d_cpt, d_pt - d_cpt, (c_pt - c_cpt) / c_pt))
    levels_t, d_pt_t, d_cpt_t, moved, saved = zip(*rows)
    return TransferReport(
        loss_levels=levels_t,
        d_pt=d_pt_t,
        d_cpt=d_cpt_t,
        transferred_tokens=moved,
        flops_saved_fraction=saved,
    )


def parametric_transfer(
    scratch: ChinchillaParams, cpt: ExtendedCptParams, N: float, D_cpt: float
) -> float:
    """Effectively transferred tokens implied by the two fitted laws.

    Evaluates the CPT loss at (N, D_cpt), inverts the from-scratch law at
    that loss, and returns D_PT - D_CPT (signed).
    """
    level = eval_extended(cpt, N, D_cpt)
    try:
        d_pt = solve_tokens_for_loss(scratch, N, level)
    except UnreachableLossError as exc:
        raise UnreachableLossError(
            f"CPT loss {level:.6g} at N={N:.6g}, D={D_cpt:.6g} is below the "
            f"from-scratch floor: {exc}"
        ) from exc
    return d_pt - D_cpt


def flops_saving_from_frontiers(
    f_pt: FrontierParams, f_cpt: FrontierParams, L: float
) -> float:
    """Fraction of compute CPT avoids at loss L, from two zero-offset frontiers."""
    if f_pt.offset != 0.0 or f_cpt.offset != 0.0:
        raise DomainError("savings require zero-offset frontiers")
    if f_pt.exponent <= 0 or f_cpt.exponent <= 0:
        raise DomainError("savings require strictly decreasing frontiers")
    if L <= 0 or L >= min(f_pt.coefficient, f_cpt.coefficient):
        raise DomainError(
            f"loss must lie in (0, {min(f_pt.coefficient, f_cpt.coefficient)!r}), got {L!r}"
        )
    log_c_pt = (math.log(f_pt.coefficient) - math.log(L)) / f_pt.exponent
    log_c_cpt = (math.log(f_cpt.coefficient) - math.log(L)) / f_cpt.exponent
    return 1.0 - math.exp(log_c_cpt - log_c_pt)


@dataclass(frozen=True)
class ForgettingCurve:
    """Per-language (FLOPs, loss) series for one replay run.

    Each point's FLOPs are the run's total compute at that record multiplied
    by the language's share of the data mix.
    """

    run_id: str
    replay_ratio: float
    target_language: str
    source_language: str | None
    source_points: tuple[tuple[float, float], ...]
    target_points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not 0.0 <= self.replay_ratio <= 1.0:
            raise ValidationError(f"replay_ratio must lie in [0, 1], got {self.replay_ratio!r}")


def forgetting_curves(runs: RunSet) -> list[ForgettingCurve]:
    """Build per-language forgetting datasets from validation-tagged runs."""
    curves = []
    for run in runs:
        tagged = [rec for rec in run.records if rec.val_language is not None]
        if not tagged:
            raise ValidationError(
                f"run {run.id!r} has no records tagged with a validation language"
            )
        other = {rec.val_language for rec in tagged} - {run.language}
        if len(other) > 1:
            raise ValidationError(
                f"run {run.id!r} mixes several source languages: {sorted(other)}"
            )
        source_language = other.pop() if other else None

        source_points, target_points = [], []
        for rec in tagged:
            total = FLOPS_PER_PARAM_TOKEN * run.param_count * rec.tokens
            source_share, target_share = attribute_flops_by_language(total, run.replay_ratio)
            if rec.val_language == run.language:
                if run.replay_ratio < 1.0:
                    target_points.append((target_share, rec.loss))
            elif run.replay_ratio > 0.0:
                source_points.append((source_share, rec.loss))
        curves.append(
            ForgettingCurve(
                run_id=run.id,
                replay_ratio=run.replay_ratio,
                target_language=run.language,
                source_language=source_language,
                source_points=tuple(sorted(source_points)),
                target_points=tuple(sorted(target_points)),
            )
        )
    return curves


def transfer_report_to_dict(report: TransferReport) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "transfer_report",
        "loss_levels": list(report.loss_levels),
        "d_pt": list(report.d_pt),
        "d_cpt": list(report.d_cpt),
        "transferred_tokens": list(report.transferred_tokens),
        "flops_saved_fraction": list(report.flops_saved_fraction),
    }


def export_transfer_csv(report: TransferReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["loss_level", "d_pt", "d_cpt", "transferred_tokens", "flops_saved_fraction"]
        )
        for row in zip(
            report.loss_levels,
            report.d_pt,
            report.d_cpt,
            report.transferred_tokens,
            report.flops_saved_fraction,
        ):
            writer.writerow([f"{value:.9g}" for value in row])


def forgetting_curves_to_dict(curves: list[ForgettingCurve]) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "forgetting_curves",
        "curves": [
            {
                "run_id": curve.run_id,
                "replay_ratio": curve.replay_ratio,
                "target_language": curve.target_language,
                "source_language": curve.source_language,
                "source_points": [list(p) for p in curve.source_points],
                "target_points": [list(p) for p in curve.target_points],
            }
            for curve in curves
        ],
    }


def export_forgetting_csv(curves: list[ForgettingCurve], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replay_ratio", "language", "flops", "loss"])
        for curve in curves:
            for flops, loss in curve.source_points:
                writer.writerow(
                    [curve.replay_ratio, curve.source_language, f"{flops:.9g}", f"{loss:.9g}"]
                )
            for flops, loss in curve.target_points:
                writer.writerow(
                    [curve.replay_ratio, curve.target_language, f"{flops:.9g}", f"{loss:.9g}"]
                )
