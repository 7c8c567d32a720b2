import numpy as np
import pytest

from garde import (
    DataError,
    GardeConfig,
    Geometry,
    NoiseModel,
    NumericalError,
    Scenario,
    generate_scenario,
    pairwise_distances,
    run_montecarlo,
    synthesize_observations,
)
from garde.simulate import RUN_COLUMNS


@pytest.fixture(scope="module")
def small_result():
    scenario = Scenario(6.0, 5.0, 4, 20, min_separation=0.3, rng_seed=31)
    noise = NoiseModel(sigma_d=0.05)
    config = GardeConfig(num_iterations=10, num_annealing=5)
    return run_montecarlo(
        scenario, noise, config, trials=3,
        variants=("with_annealing", "without_annealing"),
    )


class TestScenario:
    def test_invariants_hold(self):
        s = Scenario(6.0, 5.0, 4, 500, margin=0.5, min_separation=0.1, rng_seed=1)
        geo = generate_scenario(s)
        pts = geo.all_points()
        assert pts.shape == (504, 2)
        assert pts[:, 0].min() >= 0.5 and pts[:, 0].max() <= 5.5
        assert pts[:, 1].min() >= 0.5 and pts[:, 1].max() <= 4.5
        d = pairwise_distances(pts, pts)
        off = d[~np.eye(504, dtype=bool)]
        assert off.min() >= 0.1

    def test_infeasible_separation_errors(self):
        with pytest.raises(NumericalError):
            generate_scenario(Scenario(6.0, 5.0, 4, 4, margin=0.5, min_separation=10.0))

    def test_same_seed_identical(self):
        s = Scenario(6.0, 5.0, 4, 30, rng_seed=7)
        a = generate_scenario(s)
        b = generate_scenario(s)
        assert np.array_equal(a.nodes, b.nodes)
        assert np.array_equal(a.sources, b.sources)

    def test_bad_parameters_rejected(self):
        with pytest.raises(DataError):
            Scenario(1.0, 5.0, 4, 4, margin=0.5)
        with pytest.raises(DataError):
            Scenario(6.0, 5.0, 0, 4)


class TestNoiseModel:
    def test_zero_noise_limit(self, rng):
        geo = generate_scenario(Scenario(6.0, 5.0, 4, 50, rng_seed=2))
        obs = synthesize_observations(geo, NoiseModel(sigma_d=1e-12), 5)
        true = pairwise_distances(geo.nodes, geo.sources)
        assert np.abs(obs.distances - true).max() < 1e-9
        assert obs.valid.all()

    def test_gaussian_sample_statistics(self):
        # 80 nodes x 1000 sources = 80000 samples, echoing the pooled histogram
        rng = np.random.default_rng(3)
        nodes = rng.uniform(0.5, 5.5, size=(80, 2))
        sources = rng.uniform(0.5, 4.5, size=(1000, 2))
        geo = Geometry(nodes, sources)
        obs = synthesize_observations(geo, NoiseModel(sigma_d=0.1), 11)
        resid = obs.distances - pairwise_distances(nodes, sources)
        clipped = resid[obs.distances > 1e-3 + 1e-12]  # ignore floor-clamped draws
        assert abs(clipped.std() - 0.1) < 0.002
        assert abs(clipped.mean()) < 0.002
        # symmetric model: skewness within +/- 0.05
        z = (clipped - clipped.mean()) / clipped.std()
        assert abs((z**3).mean()) < 0.05

    def test_heteroscedastic_scales_with_distance(self):
        near = Geometry([[0.0, 0.0]], np.column_stack([np.full(20000, 1.0), np.zeros(20000)]))
        far = Geometry([[0.0, 0.0]], np.column_stack([np.full(20000, 5.0), np.zeros(20000)]))
        noise = NoiseModel(kind="heteroscedastic", sigma_d=0.05, slope=0.02)
        rn = synthesize_observations(near, noise, 1).distances - 1.0
        rf = synthesize_observations(far, noise, 1).distances - 5.0
        assert abs(rn.std() - 0.07) < 0.002  # 0.05 + 0.02 * 1
        assert abs(rf.std() - 0.15) < 0.003  # 0.05 + 0.02 * 5

    def test_out_of_range_mask_matches_threshold(self):
        geo = generate_scenario(Scenario(6.0, 5.0, 4, 100, rng_seed=5))
        obs = synthesize_observations(geo, NoiseModel(sigma_d=0.01, oor_threshold=3.0), 6)
        true = pairwise_distances(geo.nodes, geo.sources)
        assert np.array_equal(obs.valid, true <= 3.0)

    def test_outlier_contamination_rate(self):
        geo = generate_scenario(Scenario(10.0, 10.0, 40, 500, margin=0.5,
                                         min_separation=0.05, rng_seed=6))
        noise = NoiseModel(kind="outlier-contaminated", sigma_d=0.01,
                           outlier_rate=0.05, outlier_shift=5.0)
        obs = synthesize_observations(geo, noise, 7)
        resid = obs.distances - pairwise_distances(geo.nodes, geo.sources)
        rate = (resid > 2.5).mean()
        assert abs(rate - 0.05) < 0.005

    def test_distances_clamped_positive(self):
        geo = Geometry([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]], [[0.05, 0.05]])
        obs = synthesize_observations(geo, NoiseModel(sigma_d=5.0), 8)
        assert (obs.distances >= 1e-3).all()

    def test_invalid_model_rejected(self):
        with pytest.raises(DataError):
            NoiseModel(kind="cauchy")
        with pytest.raises(DataError):
            NoiseModel(sigma_d=0.0)
        with pytest.raises(DataError):
            NoiseModel(outlier_rate=1.0)


class TestMonteCarlo:
    def test_row_structure(self, small_result):
        assert len(small_result.runs) == 6
        for row in small_result.runs:
            assert set(RUN_COLUMNS) >= set(row)
            assert row["status"] == "ok"
        assert len(small_result.positions) == 6 * 24

    def test_zero_noise_trial_is_exact(self):
        scenario = Scenario(6.0, 5.0, 4, 20, min_separation=0.3, rng_seed=32)
        result = run_montecarlo(
            scenario, NoiseModel(sigma_d=1e-12), GardeConfig(), trials=1
        )
        assert result.runs[0]["calibration_error_nodes_m"] < 1e-6
        assert result.summary["failed_runs"] == 0

    def test_iteration_sweep_zero_matches_init(self):
        scenario = Scenario(6.0, 5.0, 4, 30, min_separation=0.2, rng_seed=33)
        noise = NoiseModel(sigma_d=0.1)
        result = run_montecarlo(
            scenario, noise, GardeConfig(), trials=2,
            variants=("iteration_sweep",), iteration_counts=(0, 5),
        )
        from garde.mds import classical_mds, complete_distances
        from garde.wls import localize_all_sources
        from garde.geometry import calibration_error, Geometry
        from garde.simulate import _trial_seeds
        from dataclasses import replace

        # the plain 0-iteration arm reflects the raw MDS + WLS initialization
        for trial in (0, 1):
            geom_seed, noise_seed, _ = _trial_seeds(scenario.rng_seed, trial)
            geo = generate_scenario(replace(scenario, rng_seed=geom_seed))
            obs = synthesize_observations(geo, noise, noise_seed)
            nodes0 = classical_mds(complete_distances(obs).d_hat)
            init_err = calibration_error(nodes0, geo.nodes)
            row = [
                r for r in result.runs
                if r["trial"] == trial and r["iterations"] == 0 and r["annealing"] == 0
            ][0]
            assert row["calibration_error_nodes_m"] == pytest.approx(init_err, abs=1e-12)

        curves = result.curves
        assert "error_vs_iterations_plain" in curves
        assert "error_vs_iterations_annealed" in curves
        assert [x for x, _ in curves["error_vs_iterations_plain"]] == [0.0, 5.0]

    def test_determinism_and_parallel_equivalence(self):
        scenario = Scenario(6.0, 5.0, 4, 15, min_separation=0.3, rng_seed=34)
        noise = NoiseModel(sigma_d=0.08)
        config = GardeConfig(num_iterations=8, num_annealing=4)
        a = run_montecarlo(scenario, noise, config, trials=4, workers=1)
        b = run_montecarlo(scenario, noise, config, trials=4, workers=1)
        assert a.runs == b.runs and a.summary == b.summary
        c = run_montecarlo(scenario, noise, config, trials=4, workers=2)
        assert a.runs == c.runs and a.positions == c.positions

    def test_annealing_benefit_summary_present(self, small_result):
        benefit = small_result.summary["annealing_benefit"]
        assert benefit["paired_trials"] == 3
        assert "median_improvement_m" in benefit

    def test_cdf_curves_are_nondecreasing(self, small_result):
        for name in ("cdf_max_residual_full", "cdf_max_residual_selected"):
            pts = small_result.curves[name]
            xs = [x for x, _ in pts]
            ys = [y for _, y in pts]
            assert xs == sorted(xs)
            assert ys == sorted(ys)
            assert ys[-1] == pytest.approx(1.0)

    def test_failed_trials_recorded_not_fatal(self):
        # min_fit_sources > K makes every calibration fail fast
        scenario = Scenario(6.0, 5.0, 4, 5, min_separation=0.3, rng_seed=35)
        result = run_montecarlo(
            scenario, NoiseModel(sigma_d=0.05),
            GardeConfig(min_fit_sources=6), trials=2,
        )
        assert result.summary["failed_runs"] == 2
        assert result.summary["completed_runs"] == 0
        assert all(r["status"].startswith("error") for r in result.runs)

    def test_unknown_variant_rejected(self):
        with pytest.raises(DataError):
            run_montecarlo(
                Scenario(6.0, 5.0, 4, 10, rng_seed=1), NoiseModel(sigma_d=0.1),
                GardeConfig(), trials=1, variants=("bogus",),
            )
