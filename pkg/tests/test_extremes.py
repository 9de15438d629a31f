from dataclasses import replace

import numpy as np
import pytest

from poretail.equivalence import ks_statistic
from poretail.extremes import (
    CovarianceUnavailableError,
    LargestPoreDistribution,
    McConfig,
    VolumeOfInterest,
    estimate_rates,
    fit_tail,
    largest_cdf_closed,
    largest_quantile_closed,
    sample_largest,
    volume_sweep,
)
from poretail.geometry import SpecimenDataset, make_pore_record, sphere_surface_area
from poretail.gpd import GpdParams

from conftest import synthetic_fit


class TestClosedForms:
    def test_n_one_reduces_to_tail_cdf(self):
        from poretail.gpd import gpd_cdf

        params = GpdParams(0.0, 1.0, 0.5)
        assert largest_cdf_closed(params, 1, 1.0) == pytest.approx(gpd_cdf(params, 1.0))

    def test_power_arithmetic(self):
        params = GpdParams(0.0, 1.0, 0.5)
        assert largest_cdf_closed(params, 2, 1.0) == pytest.approx((1 - 1.5**-2) ** 2, rel=1e-12)
        assert largest_cdf_closed(params, 2, 1.0) == pytest.approx(0.3087, abs=1e-4)

    def test_monotone_in_count(self):
        params = GpdParams(10.0, 2.0, 0.2)
        d = np.linspace(10.5, 40.0, 50)
        for n in (1, 2, 5, 50):
            upper = np.asarray(largest_cdf_closed(params, n, d))
            lower = np.asarray(largest_cdf_closed(params, n + 1, d))
            assert np.all(lower <= upper + 1e-15)

    def test_monotone_in_diameter(self):
        params = GpdParams(10.0, 2.0, -0.3)
        d = np.linspace(10.0 + 1e-9, params.upper_support_um + 2.0, 300)
        f = np.asarray(largest_cdf_closed(params, 7, d))
        assert np.all(np.diff(f) >= -1e-15)
        assert f[-1] == pytest.approx(1.0)

    def test_quantile_matches_single_pore(self):
        from poretail.gpd import gpd_quantile

        params = GpdParams(0.0, 1.0, 1.0)
        assert largest_quantile_closed(params, 1, 0.5) == pytest.approx(
            gpd_quantile(params, 0.5), rel=1e-12
        )

    def test_round_trip_random_pairs(self):
        rng = np.random.default_rng(77)
        params = GpdParams(5.0, 2.0, 0.3)
        p = rng.random(100)
        n = rng.integers(1, 300, 100).astype(float)
        d = np.asarray(largest_quantile_closed(params, n, p))
        back = np.asarray(largest_cdf_closed(params, n, d))
        assert np.max(np.abs(back - p)) < 1e-10

    def test_p_zero_is_threshold(self):
        params = GpdParams(7.0, 2.0, -0.2)
        assert largest_quantile_closed(params, 10, 0.0) == pytest.approx(7.0)

    def test_p_one_unbounded_for_nonnegative_shape(self):
        with pytest.raises(ValueError, match="unbounded"):
            largest_quantile_closed(GpdParams(0.0, 1.0, 0.1), 5, 1.0)

    def test_zero_count_is_fallback_not_here(self):
        with pytest.raises(ValueError, match="fallback"):
            largest_cdf_closed(GpdParams(0.0, 1.0, 0.1), 0, 1.0)

    def test_doubling_volume_shifts_median_like_doubled_count(self):
        params = GpdParams(10.0, 2.0, 0.2)
        one = largest_quantile_closed(params, 40.0, 0.5)
        two = largest_quantile_closed(params, 80.0, 0.5)
        assert two == pytest.approx(
            largest_quantile_closed(params, 40.0, np.sqrt(0.5)), rel=1e-12
        )
        assert two > one


def make_dataset(diameters, volume=100.0):
    records = [
        make_pore_record(
            f"p{i}",
            np.pi / 6.0 * d**3,
            sphere_surface_area(np.pi / 6.0 * d**3),
            d,
            d,
        )
        for i, d in enumerate(diameters)
    ]
    return SpecimenDataset(
        specimen_id="S", geometry_label="", scan_velocity_mm_s=0.0,
        scanned_volume_mm3=volume, pores=tuple(records),
    )


class TestRates:
    def test_direct_arithmetic(self):
        rng = np.random.default_rng(0)
        d = np.concatenate([rng.uniform(30, 60, 200), rng.uniform(1, 20, 300)])
        rates = estimate_rates(make_dataset(d, volume=100.0), 25.0)
        assert rates.above.rate_per_mm3 == pytest.approx(2.0)
        assert rates.above.se**2 == pytest.approx(0.01)
        assert rates.below.rate_per_mm3 == pytest.approx(3.0)

    def test_conservation_exact(self):
        rng = np.random.default_rng(1)
        d = rng.uniform(1, 50, 137)
        ds = make_dataset(d, volume=7.3)
        rates = estimate_rates(ds, 20.0)
        assert rates.above.rate_per_mm3 + rates.below.rate_per_mm3 == pytest.approx(
            137 / 7.3, rel=1e-15
        )
        assert rates.above.count + rates.below.count == 137

    def test_zero_above_flagged(self):
        rates = estimate_rates(make_dataset([1.0, 2.0]), 10.0)
        assert rates.above.rate_per_mm3 == 0.0
        assert rates.flags


class TestFitTail:
    def test_attaches_rates_and_empirical(self):
        rng = np.random.default_rng(3)
        from scipy.stats import genpareto

        tail = genpareto.rvs(c=0.1, loc=20.0, scale=3.0, size=500, random_state=rng)
        bulk = rng.uniform(2.0, 20.0, 1500)
        ds = make_dataset(np.concatenate([tail, bulk]), volume=250.0)
        fit = fit_tail(ds, 20.0)
        assert fit.lambda_above_per_mm3 == pytest.approx(500 / 250.0)
        assert fit.empirical_below_um.size == 1500
        assert np.all(np.diff(fit.empirical_below_um) >= 0)
        assert fit.fit_id.startswith("S@")


class TestSampleLargest:
    def test_mode_none_matches_closed_form(self, basic_fit):
        voi = VolumeOfInterest(50.0)  # pinned count = 50
        cfg = McConfig(seed=7, n_count_samples=1, n_param_samples=1,
                       n_p_samples=200_000, uncertainty_mode="none")
        dist = sample_largest(basic_fit, voi, cfg)
        closed = np.asarray(
            largest_cdf_closed(basic_fit.params, 50.0, dist.bin_edges_um)
        )
        assert np.max(np.abs(dist.cdf_at_edges - closed)) < 0.01

    def test_masses_total_one(self, basic_fit):
        cfg = McConfig(seed=9, n_count_samples=50, n_param_samples=20,
                       n_p_samples=100, uncertainty_mode="all")
        dist = sample_largest(basic_fit, VolumeOfInterest(2.0), cfg)
        total = dist.no_pore_mass + dist.pdf_mass.sum() + dist.overflow_mass
        assert total == pytest.approx(1.0, abs=1e-6)
        assert dist.cdf_at_edges[-1] + dist.overflow_mass == pytest.approx(1.0, abs=1e-6)
        assert np.all(np.diff(dist.cdf_at_edges) >= 0)

    def test_bit_identical_across_worker_counts(self, basic_fit):
        cfg = McConfig(seed=11, n_count_samples=60, n_param_samples=30,
                       n_p_samples=200, uncertainty_mode="all")
        voi = VolumeOfInterest(0.5)  # low count: exercises the fallback path
        results = [sample_largest(basic_fit, voi, cfg, workers=w) for w in (1, 2, 5)]
        ref = results[0]
        for other in results[1:]:
            assert np.array_equal(ref.pdf_mass, other.pdf_mass)
            assert np.array_equal(ref.cdf_at_edges, other.cdf_at_edges)
            assert ref.mean_um == other.mean_um
            assert ref.no_pore_mass == other.no_pore_mass
            assert ref.overflow_mass == other.overflow_mass

    def test_deterministic_given_seed(self, basic_fit):
        cfg = McConfig(seed=13, n_count_samples=40, n_param_samples=10,
                       n_p_samples=100, uncertainty_mode="poisson_only")
        one = sample_largest(basic_fit, VolumeOfInterest(10.0), cfg)
        two = sample_largest(basic_fit, VolumeOfInterest(10.0), cfg)
        assert np.array_equal(one.pdf_mass, two.pdf_mass)
        assert one.mean_um == two.mean_um

    def test_fallback_only_matches_poisson_compound_closed_form(self):
        # rate above threshold is zero, so every draw goes through the
        # sub-threshold fallback; marginalizing the Poisson count gives
        # CDF(x) = exp(-lam*V*(1 - F_emp(x)))
        fit = synthetic_fit(lam_above=0.0, lam_below=3.0, n_below=400, emp_seed=5)
        fit = replace(fit, lambda_above_se=0.0)
        volume = 2.0
        cfg = McConfig(seed=23, n_count_samples=100, n_param_samples=5,
                       n_p_samples=20_000, uncertainty_mode="poisson_only")
        dist = sample_largest(fit, VolumeOfInterest(volume), cfg)
        emp = fit.empirical_below_um
        grid = dist.bin_edges_um
        f_emp = np.searchsorted(emp, grid, side="right") / emp.size
        closed = np.exp(-3.0 * volume * (1.0 - f_emp))
        assert np.max(np.abs(dist.cdf_at_edges - closed)) < 0.01

    def test_degenerate_point_mass_at_no_pores(self):
        fit = synthetic_fit(lam_above=0.0, lam_below=0.0, n_below=0)
        fit = replace(fit, lambda_above_se=0.0, lambda_below_se=0.0)
        cfg = McConfig(seed=3, n_count_samples=10, n_param_samples=5,
                       n_p_samples=10, uncertainty_mode="poisson_only")
        with pytest.warns(UserWarning):
            dist = sample_largest(fit, VolumeOfInterest(1.0), cfg)
        assert dist.no_pore_mass == 1.0
        assert dist.mean_um == 0.0
        assert dist.quantile(0.99) == 0.0

    def test_covariance_required_for_full_uncertainty(self):
        fit = synthetic_fit(with_covariance=False)
        cfg = McConfig(seed=5, n_count_samples=10, n_param_samples=10,
                       n_p_samples=10, uncertainty_mode="all")
        with pytest.raises(CovarianceUnavailableError):
            sample_largest(fit, VolumeOfInterest(10.0), cfg)

    def test_missing_rates_rejected(self):
        fit = synthetic_fit()
        fit = replace(fit, lambda_above_per_mm3=None)
        cfg = McConfig(seed=5, uncertainty_mode="none")
        with pytest.raises(ValueError, match="rate"):
            sample_largest(fit, VolumeOfInterest(10.0), cfg)

    def test_stochastic_dominance_in_volume(self, basic_fit):
        cfg = McConfig(seed=17, n_count_samples=1, n_param_samples=1,
                       n_p_samples=50_000, uncertainty_mode="none")
        small = sample_largest(basic_fit, VolumeOfInterest(20.0), cfg)
        large = sample_largest(basic_fit, VolumeOfInterest(80.0), cfg)
        grid = np.linspace(21.0, 60.0, 200)
        assert np.all(np.asarray(large.cdf(grid)) <= np.asarray(small.cdf(grid)) + 0.01)

    def test_provenance_echo(self, basic_fit):
        cfg = McConfig(seed=19, n_count_samples=4, n_param_samples=4,
                       n_p_samples=4, uncertainty_mode="poisson_only")
        dist = sample_largest(basic_fit, VolumeOfInterest(5.0), cfg)
        assert dist.provenance["seed"] == 19
        assert dist.provenance["volume_mm3"] == 5.0
        assert dist.provenance["fit_id"] == basic_fit.fit_id
        assert dist.n_samples_total == 64


class TestDistributionObject:
    def test_quantile_cdf_consistency(self, basic_fit):
        cfg = McConfig(seed=29, n_count_samples=1, n_param_samples=1,
                       n_p_samples=50_000, uncertainty_mode="none")
        dist = sample_largest(basic_fit, VolumeOfInterest(30.0), cfg)
        for t in (0.1, 0.5, 0.9, 0.975):
            x = dist.quantile(t)
            assert dist.cdf(x) == pytest.approx(t, abs=1e-9)

    def test_sample_respects_distribution(self, basic_fit):
        cfg = McConfig(seed=31, n_count_samples=1, n_param_samples=1,
                       n_p_samples=100_000, uncertainty_mode="none")
        dist = sample_largest(basic_fit, VolumeOfInterest(30.0), cfg)
        rng = np.random.default_rng(0)
        draws = dist.sample(20_000, rng)
        from poretail.equivalence import EmpiricalCdf

        assert ks_statistic(dist, EmpiricalCdf(draws)) < 0.015

    def test_from_masses_validates(self):
        with pytest.raises(ValueError, match="must"):
            LargestPoreDistribution.from_masses(
                [0.0, 1.0, 2.0], [0.5, 0.4], no_pore_mass=0.5
            )

    def test_invariant_validation_rejects_bad_cdf(self):
        with pytest.raises(ValueError):
            LargestPoreDistribution(
                bin_edges_um=np.array([0.0, 1.0]),
                pdf_mass=np.array([1.0]),
                cdf_at_edges=np.array([0.5, 0.2]),
                no_pore_mass=0.0,
                overflow_mass=0.0,
                mean_um=0.5,
                p2_5_um=0.1,
                p50_um=0.5,
                p97_5_um=0.9,
                n_samples_total=10,
            )


class TestVolumeSweep:
    def test_single_volume_matches_sample_largest(self, basic_fit):
        cfg = McConfig(seed=37, n_count_samples=50, n_param_samples=10,
                       n_p_samples=50, uncertainty_mode="poisson_only")
        points = volume_sweep(basic_fit, [25.0], cfg)
        direct = sample_largest(basic_fit, VolumeOfInterest(25.0), cfg)
        assert points[0].mean_um == direct.mean_um
        assert points[0].p97_5_um == direct.p97_5_um

    def test_negative_shape_bounded_by_support(self):
        fit = synthetic_fit(shape=-0.3)
        cfg = McConfig(seed=41, n_count_samples=100, n_param_samples=1,
                       n_p_samples=500, uncertainty_mode="poisson_only")
        points = volume_sweep(fit, [5.0, 10.0, 20.0, 40.0], cfg)
        bound = fit.params.upper_support_um
        for point in points:
            assert point.p97_5_um <= bound + 1e-9

    def test_requires_ascending_positive_nonempty(self, basic_fit):
        cfg = McConfig(seed=1, n_count_samples=2, n_param_samples=2,
                       n_p_samples=2, uncertainty_mode="none")
        with pytest.raises(ValueError):
            volume_sweep(basic_fit, [], cfg)
        with pytest.raises(ValueError):
            volume_sweep(basic_fit, [10.0, 5.0], cfg)
        with pytest.raises(ValueError):
            volume_sweep(basic_fit, [-1.0], cfg)


def test_volume_of_interest_validation():
    with pytest.raises(ValueError):
        VolumeOfInterest(0.0)
    with pytest.raises(ValueError):
        VolumeOfInterest(-5.0)


def test_mc_config_validation():
    with pytest.raises(ValueError):
        McConfig(seed=1, n_count_samples=0)
    with pytest.raises(ValueError):
        McConfig(seed=1, histogram_bins=4)
    with pytest.raises(ValueError):
        McConfig(seed=1, uncertainty_mode="sometimes")
