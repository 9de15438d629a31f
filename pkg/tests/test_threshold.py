import warnings

import numpy as np
import pytest
from scipy.special import ndtr, ndtri
from scipy.stats import genpareto

from poretail.gpd import GpdParams, TailFit, mle_covariance
from poretail.threshold import (
    CandidateDiagnostics,
    ThresholdScan,
    ThresholdSelectionError,
    default_candidate_grid,
    mean_excess_curve,
    modified_scale,
    modified_scale_se,
    select_threshold,
    stability_scan,
    theoretical_mean_excess,
)


def gpd_sample(shape, n, seed, scale=1.0, threshold=0.0):
    rng = np.random.default_rng(seed)
    return genpareto.rvs(c=shape, loc=threshold, scale=scale, size=n, random_state=rng)


class TestMeanExcess:
    def test_hand_arithmetic(self):
        scan = mean_excess_curve(np.array([1.0, 2.0, 3.0]), [0.5])
        assert scan.candidates[0].mean_excess_um == pytest.approx(1.5)
        assert scan.candidates[0].n_exceed == 3

    def test_exponential_data_flat_at_scale(self):
        # shape 0 tail: mean excess equals the scale at every threshold
        x = gpd_sample(0.0, 20_000, 8)
        scan = mean_excess_curve(x, np.quantile(x, [0.2, 0.5, 0.8]))
        for cand in scan.candidates:
            excess = x[x > cand.threshold_um] - cand.threshold_um
            tol = 3.0 * np.std(excess) / np.sqrt(cand.n_exceed)
            assert abs(cand.mean_excess_um - 1.0) < tol

    def test_slope_matches_shape_over_one_minus_shape(self):
        x = gpd_sample(0.5, 10_000, 2)
        grid = np.unique(np.quantile(x, np.arange(0.01, 0.8501, 0.01)))
        scan = mean_excess_curve(x, grid)
        mus = np.array([c.threshold_um for c in scan.candidates])
        mes = np.array([c.mean_excess_um for c in scan.candidates])
        slope = np.polyfit(mus, mes, 1)[0]
        assert abs(slope - 1.0) < 0.1

    def test_candidate_above_max_excluded_with_warning(self):
        with pytest.warns(UserWarning, match="excluded"):
            scan = mean_excess_curve(np.array([1.0, 2.0, 3.0]), [0.5, 10.0])
        assert len(scan.candidates) == 1

    def test_theoretical_line(self):
        params = GpdParams(0.0, 2.0, 0.5)
        # intercept scale/(1-shape), slope shape/(1-shape)
        assert theoretical_mean_excess(params, 0.0) == pytest.approx(4.0)
        assert theoretical_mean_excess(params, 3.0) == pytest.approx(4.0 + 3.0)

    def test_theoretical_refused_above_one(self):
        with pytest.raises(ValueError, match="shape <= 1"):
            theoretical_mean_excess(GpdParams(0.0, 1.0, 1.2), 1.0)

    def test_theoretical_infinite_at_one(self):
        assert np.isinf(theoretical_mean_excess(GpdParams(0.0, 1.0, 1.0), 1.0))


class TestModifiedScale:
    def test_hand_arithmetic(self):
        assert modified_scale(2.0, 0.25, 4.0) == pytest.approx(1.0)

    def test_se_from_covariance(self):
        fit = TailFit(GpdParams(4.0, 2.0, 0.1), mle_covariance(2.0, 0.1, 400),
                      "MLE", 400)
        se = modified_scale_se(fit)
        cov = fit.covariance
        expected = np.sqrt(cov[0, 0] + 16.0 * cov[1, 1] - 8.0 * cov[0, 1])
        assert se == pytest.approx(expected)

    def test_constant_across_thresholds_for_exact_tail(self):
        # fitted sigma* at two passing thresholds should agree within two
        # pooled standard errors
        x = gpd_sample(0.2, 8000, 3, scale=2.0, threshold=15.0)
        candidates = np.quantile(x, np.arange(0.001, 0.40, 0.02))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            scan = stability_scan(x, candidates)
        passing = [c for c in scan.candidates if c.passes]
        assert len(passing) >= 2
        a, b = passing[0], passing[-1]
        pooled = np.hypot(a.sigma_star_se, b.sigma_star_se)
        assert abs(a.sigma_star_um - b.sigma_star_um) < 2.0 * pooled


class TestStabilityScan:
    def test_exact_gpd_first_candidate_passes(self):
        x = gpd_sample(0.2, 8000, 0, scale=2.0, threshold=15.0)
        candidates = np.quantile(x, np.arange(0.001, 0.90, 0.01))
        scan = stability_scan(x, candidates)
        assert scan.candidates[0].passes

    def test_low_count_candidates_dropped_with_warning(self):
        x = gpd_sample(0.0, 200, 5)
        with pytest.warns(UserWarning, match="excluded"):
            scan = stability_scan(x, np.quantile(x, [0.1, 0.99]), min_tail_count=30)
        assert len(scan.candidates) == 1

    def test_exceedance_counts_nonincreasing(self):
        x = gpd_sample(0.3, 5000, 9)
        scan = stability_scan(x, default_candidate_grid(x))
        counts = [c.n_exceed for c in scan.candidates]
        assert all(a >= b for a, b in zip(counts, counts[1:]))

    def test_mixture_passes_only_past_crossover(self):
        # sharply peaked bulk below 20um, exact tail above; the stability
        # policy should not accept any candidate inside the bulk
        rng = np.random.default_rng(0)
        log_med, log_sig, crossover = np.log(17.0), 0.10, 20.0
        cap = ndtr((np.log(crossover) - log_med) / log_sig)
        bulk = np.exp(log_med + log_sig * ndtri(rng.random(6000) * cap))
        tail = genpareto.rvs(c=0.1, loc=crossover, scale=3.0, size=6000,
                             random_state=rng)
        data = np.concatenate([bulk, tail])
        scan = stability_scan(data, default_candidate_grid(data))
        passing = [c.threshold_um for c in scan.candidates if c.passes]
        assert passing, "no candidate passed at all"
        assert min(passing) > crossover - 0.5
        selected = select_threshold(scan, "auto")
        assert abs(selected - crossover) < 0.5

    def test_deterministic(self):
        x = gpd_sample(0.1, 3000, 13)
        grid = default_candidate_grid(x)
        one = stability_scan(x, grid)
        two = stability_scan(x, grid)
        for a, b in zip(one.candidates, two.candidates):
            assert a.threshold_um == b.threshold_um
            assert (a.stability_score == b.stability_score) or (
                np.isnan(a.stability_score) and np.isnan(b.stability_score)
            )
            assert a.passes == b.passes


class TestSelectThreshold:
    def scan_with_passes(self, passes):
        candidates = [
            CandidateDiagnostics(threshold_um=float(i), n_exceed=100,
                                 stability_score=0.1 if p else 5.0,
                                 usable=True, passes=p)
            for i, p in enumerate(passes)
        ]
        return ThresholdScan(candidates=candidates)

    def test_first_passing_returned(self):
        scan = self.scan_with_passes([False, False, True, True])
        assert select_threshold(scan, "auto") == 2.0
        assert scan.selected_um == 2.0
        assert scan.selected_mode == "auto"

    def test_manual_verbatim(self):
        scan = self.scan_with_passes([False, False, False])
        assert select_threshold(scan, "manual", manual_value=20.0) == 20.0
        assert scan.selected_mode == "manual"

    def test_no_pass_raises_with_near_misses(self):
        scan = self.scan_with_passes([False, False, False])
        with pytest.raises(ThresholdSelectionError, match="near-miss"):
            select_threshold(scan, "auto")

    def test_exact_gpd_selects_within_one_step(self):
        x = gpd_sample(0.2, 8000, 1, scale=2.0, threshold=15.0)
        candidates = np.quantile(x, np.arange(0.001, 0.90, 0.01))
        scan = stability_scan(x, candidates)
        selected = select_threshold(scan, "auto")
        assert selected <= candidates[1]

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            select_threshold(self.scan_with_passes([True]), "magic")


def test_default_grid_spans_50_to_99_percent():
    x = np.linspace(1.0, 100.0, 1000)
    grid = default_candidate_grid(x)
    assert grid[0] == pytest.approx(np.quantile(x, 0.50))
    assert grid[-1] == pytest.approx(np.quantile(x, 0.99))
    assert np.all(np.diff(grid) > 0)


def test_scan_table_rows_match_columns():
    x = gpd_sample(0.1, 2000, 17)
    scan = stability_scan(x, np.quantile(x, [0.3, 0.5, 0.7]))
    rows = scan.table_rows()
    assert len(rows) == len(scan.candidates)
    assert len(rows[0]) == 8
