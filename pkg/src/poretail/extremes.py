"""Largest-pore estimation in a volume of interest.

Closed-form largest-pore CDF/quantiles for a known exceedance count, the
Poisson exceedance-rate model, and the Monte Carlo engine that propagates
count and parameter uncertainty into the distribution of the largest
equivalent diameter. The engine folds a product grid of sampled counts,
(scale, shape) pairs and uniform probabilities into a streaming histogram:
memory stays constant in the total sample count, and the count axis can be
partitioned across workers with per-slice derived seed streams so the
result is bit-identical for any worker count.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .geometry import SpecimenDataset
from .gpd import (
    XI_SWITCH,
    FitError,
    GpdParams,
    MIN_TAIL_COUNT,
    TailFit,
    gpd_cdf,
    select_estimator,
)

UNCERTAINTY_MODES = ("none", "poisson_only", "all")

# Seed-stream tags; per-slice fallback streams are keyed (seed, tag, slice).
_TAG_COUNT = 1
_TAG_PARAM = 2
_TAG_P = 3
_TAG_FALLBACK = 4
_TAG_PILOT = 5

_PILOT_SAMPLES = 65536
_PILOT_QUANTILE = 0.99999
_PARAM_REJECTION_ROUNDS = 100

FLAG_EMPTY_FALLBACK = "zero exceedance count sampled with empty sub-threshold record"
FLAG_NO_EXCEEDANCES = "no pores above threshold"
FLAG_DEGENERATE_PILOT = "histogram range from degenerate pilot run"


class CovarianceUnavailableError(RuntimeError):
    """Full uncertainty propagation requested but the fit has no covariance."""


@dataclass(frozen=True)
class VolumeOfInterest:
    """Volume (mm^3) the largest-pore distribution is estimated for."""

    volume_mm3: float

    def __post_init__(self) -> None:
        if not self.volume_mm3 > 0:
            raise ValueError(f"volume must be positive, got {self.volume_mm3}")


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo sampling plan.

    The engine evaluates every combination of n_count_samples exceedance
    counts, n_param_samples (scale, shape) pairs and n_p_samples uniform
    probabilities. uncertainty_mode selects what is actually sampled:
    "none" pins the count at rate*volume and the parameters at their point
    estimates, "poisson_only" samples counts but pins parameters, and
    "all" samples both.
    """

    seed: int
    n_count_samples: int = 1000
    n_param_samples: int = 1000
    n_p_samples: int = 1000
    histogram_bins: int = 2048
    uncertainty_mode: str = "all"

    def __post_init__(self) -> None:
        for name in ("n_count_samples", "n_param_samples", "n_p_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.histogram_bins < 16:
            raise ValueError("histogram_bins must be >= 16")
        if self.uncertainty_mode not in UNCERTAINTY_MODES:
            raise ValueError(
                f"uncertainty_mode must be one of {UNCERTAINTY_MODES}, "
                f"got {self.uncertainty_mode!r}"
            )

    @property
    def total_samples(self) -> int:
        return self.n_count_samples * self.n_param_samples * self.n_p_samples


@dataclass(frozen=True)
class RateEstimate:
    rate_per_mm3: float
    se: float
    count: int


@dataclass(frozen=True)
class RateEstimates:
    above: RateEstimate
    below: RateEstimate
    flags: tuple[str, ...] = ()


def estimate_rates(dataset: SpecimenDataset, threshold_um: float) -> RateEstimates:
    """Poisson rate estimates on each side of the threshold.

    The rate is the pore count divided by the scanned volume; its variance
    is rate/count (zero by convention when no pores were observed, which is
    flagged because uncertainty propagation then degenerates to the
    sub-threshold fallback only).
    """
    d = dataset.diameters_um
    volume = dataset.scanned_volume_mm3
    n_above = int(np.count_nonzero(d > threshold_um))
    n_below = int(d.size - n_above)

    def one(count: int) -> RateEstimate:
        rate = count / volume
        se = float(np.sqrt(rate / count)) if count > 0 else 0.0
        return RateEstimate(rate_per_mm3=rate, se=se, count=count)

    flags: tuple[str, ...] = ()
    if n_above == 0:
        flags = (FLAG_NO_EXCEEDANCES,)
    return RateEstimates(above=one(n_above), below=one(n_below), flags=flags)


def fit_tail(
    dataset: SpecimenDataset,
    threshold_um: float,
    *,
    min_tail_count: int = MIN_TAIL_COUNT,
    fit_id: str | None = None,
) -> TailFit:
    """Fit the tail of a specimen and attach rates and the sub-threshold sample."""
    d = dataset.diameters_um
    exceed = d[d > threshold_um]
    below = np.sort(d[d <= threshold_um])
    fit = select_estimator(exceed, threshold_um, min_tail_count=min_tail_count)
    rates = estimate_rates(dataset, threshold_um)
    return replace(
        fit,
        fit_id=fit_id or f"{dataset.specimen_id}@{threshold_um:g}um",
        flags=fit.flags + rates.flags,
        lambda_above_per_mm3=rates.above.rate_per_mm3,
        lambda_above_se=rates.above.se,
        lambda_below_per_mm3=rates.below.rate_per_mm3,
        lambda_below_se=rates.below.se,
        empirical_below_um=below,
    )


def largest_cdf_closed(params: GpdParams, n_pores, d) -> np.ndarray | float:
    """Probability that the largest of n_pores tail pores is at most d."""
    n_arr = np.asarray(n_pores, dtype=float)
    if np.any(n_arr <= 0):
        raise ValueError("n_pores must be positive (zero-count case is the fallback)")
    base = np.asarray(gpd_cdf(params, d), dtype=float)
    out = base**n_arr
    if np.ndim(d) == 0 and np.ndim(n_pores) == 0:
        return float(out)
    return out


def largest_quantile_closed(params: GpdParams, n_pores, p) -> np.ndarray | float:
    """Inverse of the largest-pore CDF for a known count of tail pores.

    Evaluates the tail quantile at p**(1/n); for negative shape, p = 1 maps
    to the support bound, while for shape >= 0 it is unbounded and refused.
    """
    n_arr = np.asarray(n_pores, dtype=float)
    p_arr = np.asarray(p, dtype=float)
    if np.any(n_arr <= 0):
        raise ValueError("n_pores must be positive (zero-count case is the fallback)")
    if np.any(p_arr < 0) or np.any(p_arr > 1):
        raise ValueError("p must lie in [0, 1]")
    if params.shape >= 0 and np.any(p_arr == 1.0):
        raise ValueError("quantile at p = 1 is unbounded for shape >= 0")
    with np.errstate(divide="ignore"):
        one_minus_q = -np.expm1(np.log(p_arr) / n_arr)
        log_omq = np.log(one_minus_q)
    out = _eval_largest(
        params.threshold_um,
        np.asarray(params.scale_um, dtype=float),
        np.asarray(params.shape, dtype=float),
        log_omq,
    )
    if np.ndim(p) == 0 and np.ndim(n_pores) == 0:
        return float(out)
    return out


def _eval_largest(mu: float, sigma, xi, log_omq) -> np.ndarray:
    """Largest-pore values from log(1 - p**(1/N)), broadcasting over params."""
    small = np.abs(xi) < XI_SWITCH
    xi_safe = np.where(small, 1.0, xi)
    out = mu + (sigma / xi_safe) * np.expm1(-xi * log_omq)
    if np.any(small):
        limit = mu - sigma * log_omq
        out = np.where(np.broadcast_to(small, out.shape), limit, out)
    return np.asarray(out, dtype=float)


@dataclass(frozen=True, eq=False)
class LargestPoreDistribution:
    """Histogram approximation of the largest-pore distribution.

    Carries the binned probability mass, the numerically integrated CDF at
    the bin edges, the point mass at "no pores" (diameter 0), the residual
    mass beyond the top edge, and summary statistics. The mean is the exact
    streaming mean of all sampled values (overflow included, "no pores"
    counted as 0).
    """

    bin_edges_um: np.ndarray
    pdf_mass: np.ndarray
    cdf_at_edges: np.ndarray
    no_pore_mass: float
    overflow_mass: float
    mean_um: float
    p2_5_um: float
    p50_um: float
    p97_5_um: float
    n_samples_total: int
    provenance: dict = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        edges = np.asarray(self.bin_edges_um, dtype=float)
        pdf = np.asarray(self.pdf_mass, dtype=float)
        cdf = np.asarray(self.cdf_at_edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if pdf.size != edges.size - 1 or cdf.size != edges.size:
            raise ValueError("pdf/cdf sizes inconsistent with edges")
        if np.any(pdf < -1e-15):
            raise ValueError("pdf mass must be nonnegative")
        if np.any(np.diff(cdf) < -1e-12):
            raise ValueError("cdf must be nondecreasing")
        if abs(cdf[-1] + self.overflow_mass - 1.0) > 1e-6:
            raise ValueError("cdf at last edge plus residual tail mass must be 1")
        if abs(pdf.sum() + self.overflow_mass - (1.0 - self.no_pore_mass)) > 1e-6:
            raise ValueError("pdf mass must sum to 1 minus the no-pore mass")
        for name, value in (("bin_edges_um", edges), ("pdf_mass", pdf), ("cdf_at_edges", cdf)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def from_masses(
        cls,
        bin_edges_um,
        pdf_mass,
        *,
        no_pore_mass: float = 0.0,
        overflow_mass: float = 0.0,
        mean_um: float | None = None,
        n_samples_total: int = 0,
        provenance: dict | None = None,
        flags: tuple[str, ...] = (),
    ) -> "LargestPoreDistribution":
        """Build a distribution directly from bin masses (tests, file IO)."""
        edges = np.asarray(bin_edges_um, dtype=float)
        pdf = np.asarray(pdf_mass, dtype=float)
        cdf = np.concatenate([[no_pore_mass], no_pore_mass + np.cumsum(pdf)])
        mids = 0.5 * (edges[:-1] + edges[1:])
        if mean_um is None:
            mean_um = float(pdf @ mids + overflow_mass * edges[-1])
        dist = cls(
            bin_edges_um=edges,
            pdf_mass=pdf,
            cdf_at_edges=cdf,
            no_pore_mass=float(no_pore_mass),
            overflow_mass=float(overflow_mass),
            mean_um=float(mean_um),
            p2_5_um=np.nan,
            p50_um=np.nan,
            p97_5_um=np.nan,
            n_samples_total=n_samples_total,
            provenance=provenance or {},
            flags=flags,
        )
        object.__setattr__(dist, "p2_5_um", dist.quantile(0.025))
        object.__setattr__(dist, "p50_um", dist.quantile(0.5))
        object.__setattr__(dist, "p97_5_um", dist.quantile(0.975))
        return dist

    @property
    def midpoints_um(self) -> np.ndarray:
        return 0.5 * (self.bin_edges_um[:-1] + self.bin_edges_um[1:])

    def knots(self) -> np.ndarray:
        return np.unique(np.concatenate([[0.0], self.bin_edges_um]))

    def cdf(self, x) -> np.ndarray | float:
        """CDF with the no-pore atom at 0 and linear interpolation in bins.

        Beyond the top edge the overflow location is unknown, so the CDF
        plateaus at 1 - overflow_mass there.
        """
        x_arr = np.asarray(x, dtype=float)
        out = np.interp(x_arr, self.bin_edges_um, self.cdf_at_edges)
        out = np.where(x_arr < 0.0, 0.0, out)
        if np.ndim(x) == 0:
            return float(out)
        return out

    def cdf_left(self, x) -> np.ndarray | float:
        """Left limit of the CDF (differs from cdf only at the atom at 0)."""
        x_arr = np.asarray(x, dtype=float)
        out = np.interp(x_arr, self.bin_edges_um, self.cdf_at_edges)
        out = np.where(x_arr <= 0.0, 0.0, out)
        if np.ndim(x) == 0:
            return float(out)
        return out

    def quantile(self, t: float) -> float:
        """Inverse CDF; fractions inside the no-pore atom map to 0."""
        if not 0.0 <= t <= 1.0:
            raise ValueError("t must lie in [0, 1]")
        cdf = self.cdf_at_edges
        if t <= self.no_pore_mass:
            return 0.0
        if t > cdf[-1]:
            return float(self.bin_edges_um[-1])
        j = int(np.searchsorted(cdf, t, side="left"))
        j = max(j, 1)
        denom = cdf[j] - cdf[j - 1]
        frac = (t - cdf[j - 1]) / denom if denom > 0 else 1.0
        width = self.bin_edges_um[j] - self.bin_edges_um[j - 1]
        return float(self.bin_edges_um[j - 1] + frac * width)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Inverse-CDF draws; overflow mass collapses to the top edge."""
        u = rng.random(n)
        cdf = self.cdf_at_edges
        edges = self.bin_edges_um
        j = np.clip(np.searchsorted(cdf, u, side="left"), 1, edges.size - 1)
        denom = cdf[j] - cdf[j - 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(denom > 0, (u - cdf[j - 1]) / denom, 1.0)
        frac = np.clip(frac, 0.0, 1.0)
        out = edges[j - 1] + frac * (edges[j] - edges[j - 1])
        return np.where(u <= self.no_pore_mass, 0.0, out)

    def summary(self) -> dict:
        return {
            "mean_um": self.mean_um,
            "p2_5_um": self.p2_5_um,
            "p50_um": self.p50_um,
            "p97_5_um": self.p97_5_um,
            "no_pore_mass": self.no_pore_mass,
            "overflow_mass": self.overflow_mass,
        }


def _stream(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, tags)]))


def _draw_param_samples(
    fit: TailFit, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Bivariate-normal (scale, shape) draws; non-positive scales are redrawn."""
    if fit.covariance is None:
        raise CovarianceUnavailableError(
            "fit covariance unavailable (estimate outside asymptotic-normality "
            "domain); full uncertainty propagation refuses to run"
        )
    mean = np.array([fit.params.scale_um, fit.params.shape])
    chol = np.linalg.cholesky(fit.covariance)
    draws = mean + rng.standard_normal((n, 2)) @ chol.T
    for _ in range(_PARAM_REJECTION_ROUNDS):
        bad = draws[:, 0] <= 0.0
        n_bad = int(bad.sum())
        if n_bad == 0:
            break
        draws[bad] = mean + rng.standard_normal((n_bad, 2)) @ chol.T
    else:
        raise FitError(
            f"could not draw positive scales in {_PARAM_REJECTION_ROUNDS} rounds"
        )
    return draws[:, 0].copy(), draws[:, 1].copy()


def _empirical_inverse(values_asc: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Right-continuous inverse of the empirical step CDF."""
    m = values_asc.size
    idx = np.ceil(u * m).astype(np.int64) - 1
    np.clip(idx, 0, m - 1, out=idx)
    return values_asc[idx]


def _pilot_high(fit: TailFit, volume: float, config: McConfig) -> float | None:
    """Upper histogram edge from a small independent pilot of the same model."""
    rng = _stream(config.seed, _TAG_PILOT)
    k = _PILOT_SAMPLES
    lam_above = fit.lambda_above_per_mm3 or 0.0
    se_above = fit.lambda_above_se or 0.0
    lam_below = fit.lambda_below_per_mm3 or 0.0
    emp = fit.empirical_below_um
    emp = np.asarray(emp, dtype=float) if emp is not None else np.empty(0)

    if config.uncertainty_mode == "none":
        counts = np.full(k, lam_above * volume)
    else:
        rates = np.maximum(lam_above + se_above * rng.standard_normal(k), 0.0)
        counts = rng.poisson(rates * volume).astype(float)
    if config.uncertainty_mode == "all":
        sigma, xi = _draw_param_samples(fit, k, rng)
    else:
        sigma = np.full(k, fit.params.scale_um)
        xi = np.full(k, fit.params.shape)
    p = rng.random(k)

    values = []
    pos = counts > 0
    if np.any(pos):
        with np.errstate(divide="ignore"):
            omq = -np.expm1(np.log(p[pos]) / counts[pos])
            log_omq = np.log(omq)
        values.append(
            _eval_largest(fit.params.threshold_um, sigma[pos], xi[pos], log_omq)
        )
    n_zero = int(np.count_nonzero(~pos))
    if n_zero and emp.size:
        if config.uncertainty_mode == "none":
            m_counts = np.full(n_zero, lam_below * volume)
        else:
            m_counts = rng.poisson(lam_below * volume, n_zero).astype(float)
        m_pos = m_counts > 0
        if np.any(m_pos):
            u = p[~pos][m_pos] ** (1.0 / m_counts[m_pos])
            values.append(_empirical_inverse(emp, u))
    if not values:
        return None
    stacked = np.concatenate(values)
    return float(np.quantile(stacked, _PILOT_QUANTILE))


@dataclass
class _ChunkSpec:
    """One worker's share of the count axis plus the shared sample arrays."""

    start: int
    counts: np.ndarray
    sigma: np.ndarray
    xi: np.ndarray
    p: np.ndarray
    threshold_um: float
    lo: float
    inv_width: float
    n_bins: int
    seed: int
    param_mult: int
    n_param_total: int
    lam_below_volume: float
    pinned_fallback: bool
    empirical_below: np.ndarray


def _run_chunk(spec: _ChunkSpec) -> tuple[np.ndarray, int, int, np.ndarray, bool]:
    """Fold one contiguous range of count slices into a histogram.

    Returns (bin counts, overflow count, no-pore count, per-slice value
    sums, empty-fallback-hit flag). Only per-slice buffers are held, so
    memory is constant in the number of slices.
    """
    n_p = spec.p.size
    n_param = spec.sigma.size
    counts = np.zeros(spec.n_bins, dtype=np.int64)
    overflow = 0
    no_pore = 0
    sums = np.zeros(spec.counts.size)
    empty_fallback = False

    neg_xi = -spec.xi[:, None]
    small = np.abs(spec.xi) < XI_SWITCH
    xi_safe = np.where(small, 1.0, spec.xi)
    coef = (spec.sigma / xi_safe)[:, None]
    emp = spec.empirical_below
    work = np.empty((n_param, n_p))

    def bin_values(values: np.ndarray, weight: int) -> tuple[int, float]:
        total = float(values.sum()) * weight
        scaled = (values - spec.lo) * spec.inv_width
        idx = scaled.astype(np.int64)
        np.clip(idx, 0, spec.n_bins, out=idx)
        binned = np.bincount(idx.ravel(), minlength=spec.n_bins + 1)
        counts[:] += binned[: spec.n_bins] * weight
        return int(binned[spec.n_bins]) * weight, total

    for k in range(spec.counts.size):
        n_i = float(spec.counts[k])
        if n_i > 0.0:
            with np.errstate(divide="ignore"):
                omq = -np.expm1(np.log(spec.p) / n_i)
                log_omq = np.log(omq)
            np.multiply(neg_xi, log_omq[None, :], out=work)
            np.expm1(work, out=work)
            np.multiply(work, coef, out=work)
            work += spec.threshold_um
            if np.any(small):
                work[small] = spec.threshold_um - spec.sigma[small, None] * log_omq[None, :]
            over, total = bin_values(work, spec.param_mult)
            overflow += over
            sums[k] = total
            continue

        # Zero exceedance count: invert the sub-threshold empirical CDF at
        # p**(1/M) with M Poisson per combination (pinned in mode "none").
        if emp.size == 0:
            no_pore += spec.n_param_total * n_p
            empty_fallback = True
            continue
        if spec.pinned_fallback:
            m_pinned = spec.lam_below_volume
            if m_pinned <= 0.0:
                no_pore += spec.n_param_total * n_p
                continue
            u = spec.p ** (1.0 / m_pinned)
            values = _empirical_inverse(emp, u)
            over, total = bin_values(values, spec.n_param_total)
            overflow += over
            sums[k] = total
            continue
        rng = _stream(spec.seed, _TAG_FALLBACK, spec.start + k)
        m = rng.poisson(spec.lam_below_volume, (spec.n_param_total, n_p))
        pos = m > 0
        n_zero = int(m.size - np.count_nonzero(pos))
        no_pore += n_zero
        if n_zero < m.size:
            u = np.broadcast_to(spec.p, m.shape)[pos] ** (1.0 / m[pos])
            values = _empirical_inverse(emp, u)
            over, total = bin_values(values, 1)
            overflow += over
            sums[k] = total

    return counts, overflow, no_pore, sums, empty_fallback


def sample_largest(
    fit: TailFit,
    voi: VolumeOfInterest,
    config: McConfig,
    *,
    workers: int = 1,
) -> LargestPoreDistribution:
    """Monte Carlo largest-pore distribution for a volume of interest.

    Exceedance counts are Poisson draws with the rate itself drawn from its
    Gaussian estimate (clamped at zero); (scale, shape) pairs come from the
    estimator's asymptotic bivariate normal; probabilities are standard
    uniform. Every grid combination with a positive count is pushed through
    the closed-form largest-pore quantile; zero-count combinations fall
    back to the sub-threshold empirical distribution, and an empty draw
    contributes to the "no pores" mass at diameter 0.

    The result is independent of `workers` for a fixed seed.
    """
    if fit.lambda_above_per_mm3 is None or fit.lambda_below_per_mm3 is None:
        raise ValueError("fit lacks rate estimates; build it with fit_tail()")
    mode = config.uncertainty_mode
    volume = voi.volume_mm3
    lam_above = fit.lambda_above_per_mm3
    lam_below = fit.lambda_below_per_mm3
    emp = fit.empirical_below_um
    emp = np.asarray(emp, dtype=float) if emp is not None else np.empty(0)
    flags: list[str] = []

    # Count axis. In mode "none" every slice is the pinned value, so the
    # axis collapses to one slice carried with multiplicity.
    if mode == "none":
        count_values = np.array([lam_above * volume])
        count_mult = config.n_count_samples
    else:
        rng_count = _stream(config.seed, _TAG_COUNT)
        z = rng_count.standard_normal(config.n_count_samples)
        rates = np.maximum(lam_above + (fit.lambda_above_se or 0.0) * z, 0.0)
        count_values = rng_count.poisson(rates * volume).astype(float)
        count_mult = 1

    # Parameter axis; pinned modes carry the point estimate with multiplicity.
    if mode == "all":
        sigma, xi = _draw_param_samples(
            fit, config.n_param_samples, _stream(config.seed, _TAG_PARAM)
        )
        param_mult = 1
    else:
        sigma = np.array([fit.params.scale_um])
        xi = np.array([fit.params.shape])
        param_mult = config.n_param_samples

    p = _stream(config.seed, _TAG_P).random(config.n_p_samples)

    lo = fit.params.threshold_um
    fallback_possible = mode != "none" or lam_above * volume == 0.0
    if emp.size and fallback_possible:
        lo = min(lo, float(emp[0]))
    hi = _pilot_high(fit, volume, config)
    if hi is None or hi <= lo:
        hi = lo + max(abs(lo), 1.0)
        flags.append(FLAG_DEGENERATE_PILOT)
    edges = np.linspace(lo, hi, config.histogram_bins + 1)
    inv_width = config.histogram_bins / (hi - lo)

    n_slices = count_values.size
    n_workers = max(1, min(int(workers), n_slices))
    bounds = np.linspace(0, n_slices, n_workers + 1).astype(int)
    chunks = [
        _ChunkSpec(
            start=int(bounds[w]),
            counts=count_values[bounds[w] : bounds[w + 1]],
            sigma=sigma,
            xi=xi,
            p=p,
            threshold_um=fit.params.threshold_um,
            lo=lo,
            inv_width=inv_width,
            n_bins=config.histogram_bins,
            seed=config.seed,
            param_mult=param_mult,
            n_param_total=config.n_param_samples,
            lam_below_volume=lam_below * volume,
            pinned_fallback=mode == "none",
            empirical_below=emp,
        )
        for w in range(n_workers)
        if bounds[w] < bounds[w + 1]
    ]

    if len(chunks) == 1:
        results = [_run_chunk(chunks[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(_run_chunk, chunks))

    counts = np.zeros(config.histogram_bins, dtype=np.int64)
    overflow = 0
    no_pore = 0
    slice_sums = np.zeros(n_slices)
    empty_fallback = False
    for chunk, (c, over, npore, sums, hit) in zip(chunks, results):
        counts += c
        overflow += over
        no_pore += npore
        slice_sums[chunk.start : chunk.start + sums.size] = sums
        empty_fallback = empty_fallback or hit

    total = config.total_samples
    counts = counts * count_mult
    overflow *= count_mult
    no_pore *= count_mult
    total_sum = float(np.sum(slice_sums)) * count_mult

    if empty_fallback:
        flags.append(FLAG_EMPTY_FALLBACK)
        warnings.warn(FLAG_EMPTY_FALLBACK, stacklevel=2)

    pdf = counts / total
    no_pore_mass = no_pore / total
    overflow_mass = overflow / total
    cdf = np.concatenate([[no_pore_mass], no_pore_mass + np.cumsum(pdf)])
    dist = LargestPoreDistribution(
        bin_edges_um=edges,
        pdf_mass=pdf,
        cdf_at_edges=cdf,
        no_pore_mass=no_pore_mass,
        overflow_mass=overflow_mass,
        mean_um=total_sum / total,
        p2_5_um=np.nan,
        p50_um=np.nan,
        p97_5_um=np.nan,
        n_samples_total=total,
        provenance={
            "fit_id": fit.fit_id,
            "volume_mm3": volume,
            "uncertainty_mode": mode,
            "n_count_samples": config.n_count_samples,
            "n_param_samples": config.n_param_samples,
            "n_p_samples": config.n_p_samples,
            "histogram_bins": config.histogram_bins,
            "seed": config.seed,
        },
        flags=tuple(flags),
    )
    object.__setattr__(dist, "p2_5_um", dist.quantile(0.025))
    object.__setattr__(dist, "p50_um", dist.quantile(0.5))
    object.__setattr__(dist, "p97_5_um", dist.quantile(0.975))
    return dist


@dataclass(frozen=True)
class VolumePoint:
    """Largest-pore summary at one volume of a sweep."""

    volume_mm3: float
    mean_um: float
    p2_5_um: float
    p50_um: float
    p97_5_um: float
    no_pore_mass: float


def volume_sweep(
    fit: TailFit,
    volumes_mm3: Sequence[float],
    config: McConfig,
    *,
    workers: int = 1,
) -> list[VolumePoint]:
    """Largest-pore summaries over an ascending ladder of volumes.

    Every volume is sampled with the same seed (common random numbers), so
    a single-volume sweep reproduces sample_largest exactly.
    """
    vols = list(volumes_mm3)
    if not vols:
        raise ValueError("volume list must not be empty")
    if any(v <= 0 for v in vols):
        raise ValueError("volumes must be positive")
    if any(b <= a for a, b in zip(vols, vols[1:])):
        raise ValueError("volumes must be strictly ascending")
    points = []
    for volume in vols:
        dist = sample_largest(fit, VolumeOfInterest(volume), config, workers=workers)
        points.append(
            VolumePoint(
                volume_mm3=volume,
                mean_um=dist.mean_um,
                p2_5_um=dist.p2_5_um,
                p50_um=dist.p50_um,
                p97_5_um=dist.p97_5_um,
                no_pore_mass=dist.no_pore_mass,
            )
        )
    return points
