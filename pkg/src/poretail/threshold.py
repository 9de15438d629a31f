"""Threshold selection diagnostics: mean excess and parameter stability.

The mean excess of an exact Generalized Pareto tail is linear in the
threshold with slope shape/(1-shape); the modified scale
(scale - shape * threshold) is constant across valid thresholds. Both are
scanned over a candidate grid, and the automated policy picks the smallest
candidate whose forward-window parameter changes stay inside a tolerance
measured in standard errors. Manual override is first-class.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
import numpy as np

from .geometry import SpecimenDataset
from .gpd import MIN_TAIL_COUNT, FitError, GpdParams, TailFit, select_estimator

DEFAULT_STABILITY_TOLERANCE = 0.5
DEFAULT_STABILITY_WINDOW = 3

SCAN_COLUMNS = (
    "threshold_um",
    "n_exceed",
    "mean_excess_um",
    "sigma_hat_um",
    "xi_hat",
    "sigma_star_um",
    "stability_score",
    "passes",
)


class ThresholdSelectionError(RuntimeError):
    """No candidate threshold satisfied the stability policy."""


def theoretical_mean_excess(params: GpdParams, threshold_um: float) -> float:
    """Mean excess of an exact tail evaluated at a higher threshold.

    Only defined for shape <= 1 (the tail mean is infinite otherwise);
    evaluation above that is refused.
    """
    if params.shape > 1.0:
        raise ValueError(
            f"mean excess is only defined for shape <= 1, got {params.shape}"
        )
    if params.shape == 1.0:
        return np.inf
    excess = threshold_um - params.threshold_um
    return (params.scale_um + params.shape * excess) / (1.0 - params.shape)


def modified_scale(scale_um: float, shape: float, threshold_um: float) -> float:
    """Threshold-compensated scale; constant in the threshold for an exact tail."""
    return scale_um - shape * threshold_um


def modified_scale_se(fit: TailFit) -> float | None:
    """Delta-method standard error of the modified scale at the fit threshold."""
    if fit.covariance is None:
        return None
    mu = fit.params.threshold_um
    cov = fit.covariance
    var = cov[0, 0] + mu * mu * cov[1, 1] - 2.0 * mu * cov[0, 1]
    return float(np.sqrt(max(var, 0.0)))


@dataclass
class CandidateDiagnostics:
    """Per-candidate scan results; NaN marks quantities that could not be computed."""

    threshold_um: float
    n_exceed: int
    mean_excess_um: float = np.nan
    sigma_hat_um: float = np.nan
    xi_hat: float = np.nan
    sigma_star_um: float = np.nan
    sigma_star_se: float = np.nan
    xi_se: float = np.nan
    stability_score: float = np.nan
    usable: bool = False
    passes: bool = False


@dataclass
class ThresholdScan:
    """Diagnostics over an ascending candidate grid plus the selection."""

    candidates: list[CandidateDiagnostics]
    min_tail_count: int = MIN_TAIL_COUNT
    stability_tolerance: float = DEFAULT_STABILITY_TOLERANCE
    stability_window: int = DEFAULT_STABILITY_WINDOW
    selected_um: float | None = None
    selected_mode: str | None = None

    def table_rows(self) -> list[tuple]:
        """Rows matching SCAN_COLUMNS, for comma-separated export."""
        return [
            (
                c.threshold_um,
                c.n_exceed,
                c.mean_excess_um,
                c.sigma_hat_um,
                c.xi_hat,
                c.sigma_star_um,
                c.stability_score,
                c.passes,
            )
            for c in self.candidates
        ]


def _as_diameters(data) -> np.ndarray:
    if isinstance(data, SpecimenDataset):
        return np.asarray(data.diameters_um, dtype=float)
    return np.asarray(data, dtype=float).ravel()


def default_candidate_grid(data) -> np.ndarray:
    """Empirical quantiles of the diameters from 50% to 99% in 1% steps."""
    d = _as_diameters(data)
    if d.size == 0:
        raise ValueError("cannot build a candidate grid from an empty dataset")
    qs = np.arange(0.50, 0.9901, 0.01)
    return np.unique(np.quantile(d, qs))


def mean_excess_curve(data, candidates) -> ThresholdScan:
    """Empirical mean excess over the candidate grid.

    Candidates retaining fewer than two exceedances (including any above
    the largest pore) are excluded with a warning.
    """
    d = _as_diameters(data)
    scan = ThresholdScan(candidates=[])
    for mu in np.sort(np.asarray(candidates, dtype=float)):
        excess = d[d > mu] - mu
        if excess.size < 2:
            warnings.warn(
                f"candidate {mu} retains {excess.size} exceedance(s); excluded",
                stacklevel=2,
            )
            continue
        scan.candidates.append(
            CandidateDiagnostics(
                threshold_um=float(mu),
                n_exceed=int(excess.size),
                mean_excess_um=float(np.mean(excess)),
            )
        )
    return scan


def stability_scan(
    data,
    candidates,
    *,
    min_tail_count: int = MIN_TAIL_COUNT,
    tolerance: float = DEFAULT_STABILITY_TOLERANCE,
    window: int = DEFAULT_STABILITY_WINDOW,
) -> ThresholdScan:
    """Fit the tail at every candidate and score forward-window stability.

    The score at a candidate is the largest change of the shape estimate
    and of the modified scale over the next `window` candidates, measured
    in that candidate's standard errors; a candidate passes when the score
    is at most `tolerance`. Candidates whose fit fails are kept but marked
    unusable.
    """
    d = _as_diameters(data)
    scan = ThresholdScan(
        candidates=[],
        min_tail_count=min_tail_count,
        stability_tolerance=tolerance,
        stability_window=window,
    )
    for mu in np.sort(np.asarray(candidates, dtype=float)):
        exceed = d[d > mu]
        if exceed.size < min_tail_count:
            warnings.warn(
                f"candidate {mu} retains {exceed.size} < {min_tail_count} "
                "exceedances; excluded",
                stacklevel=2,
            )
            continue
        entry = CandidateDiagnostics(threshold_um=float(mu), n_exceed=int(exceed.size))
        entry.mean_excess_um = float(np.mean(exceed - mu))
        try:
            fit = select_estimator(exceed, mu, min_tail_count=min_tail_count)
        except FitError:
            scan.candidates.append(entry)
            continue
        entry.usable = True
        entry.sigma_hat_um = fit.params.scale_um
        entry.xi_hat = fit.params.shape
        entry.sigma_star_um = modified_scale(fit.params.scale_um, fit.params.shape, mu)
        if fit.covariance is not None:
            # The modified-scale change is normalized by its own delta-method
            # standard error; the raw scale's error underestimates the noise
            # floor away from the origin (it misses the threshold-amplified
            # shape component).
            entry.sigma_star_se = modified_scale_se(fit) or np.nan
            entry.xi_se = float(np.sqrt(fit.covariance[1, 1]))
        scan.candidates.append(entry)

    for k, entry in enumerate(scan.candidates):
        if not entry.usable:
            continue
        if not np.isfinite(entry.sigma_star_se) or not np.isfinite(entry.xi_se):
            continue
        forward = [
            c
            for c in scan.candidates[k + 1 : k + 1 + window]
            if c.usable
        ]
        score = 0.0
        for other in forward:
            score = max(
                score,
                abs(other.xi_hat - entry.xi_hat) / entry.xi_se,
                abs(other.sigma_star_um - entry.sigma_star_um) / entry.sigma_star_se,
            )
        entry.stability_score = score
        entry.passes = score <= tolerance and entry.n_exceed >= min_tail_count
    return scan


def select_threshold(
    scan: ThresholdScan,
    mode: str = "auto",
    manual_value: float | None = None,
) -> float:
    """Pick the threshold from a completed scan.

    Auto mode returns the smallest passing candidate; manual mode returns
    the supplied value verbatim (the chosen threshold is treated as exact).
    """
    if mode == "manual":
        if manual_value is None:
            raise ValueError("manual mode requires a threshold value")
        scan.selected_um = float(manual_value)
        scan.selected_mode = "manual"
        return float(manual_value)
    if mode != "auto":
        raise ValueError(f"unknown selection mode {mode!r}")
    for entry in scan.candidates:
        if entry.passes:
            scan.selected_um = entry.threshold_um
            scan.selected_mode = "auto"
            return entry.threshold_um
    scored = [c for c in scan.candidates if np.isfinite(c.stability_score)]
    scored.sort(key=lambda c: c.stability_score)
    near_misses = ", ".join(
        f"{c.threshold_um:.6g} (score {c.stability_score:.3g}, n {c.n_exceed})"
        for c in scored[:3]
    )
    raise ThresholdSelectionError(
        "no candidate threshold passed the stability policy"
        + (f"; best near-misses: {near_misses}" if near_misses else "")
    )
