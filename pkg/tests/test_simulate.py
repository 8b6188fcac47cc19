import numpy as np
import pytest

from loopsim.chain import build_transition, stationary
from loopsim.fock_core import make_unitary, unitarity_residual
from loopsim.info import correlation_exact, event_entropy_series
from loopsim.simulate import (
    EnsembleSpec,
    ensemble_entropy_stats,
    estimate_correlation,
    haar_unitary,
    make_rng,
    sample_occupancy_path,
    sample_trajectory,
)

from conftest import ks_uniform_pvalue


@pytest.fixture(scope="module")
def long_run(bs5050):
    return sample_trajectory(bs5050, "pnrd", 100_000, seed=1)


class TestHaar:
    def test_unitary(self):
        for i in range(200):
            U = haar_unitary(make_rng(3, i))
            assert unitarity_residual(U.as_array()) < 1e-12

    def test_deterministic(self):
        assert haar_unitary(make_rng(42)) == haar_unitary(make_rng(42))
        assert haar_unitary(make_rng(42, 0)) != haar_unitary(make_rng(42, 1))

    def test_u11_uniform(self):
        r = np.array([abs(haar_unitary(make_rng(7, i)).u11) ** 2 for i in range(10_000)])
        assert r.mean() == pytest.approx(0.5, abs=0.02)
        assert ks_uniform_pvalue(r) > 0.01


class TestSampleTrajectory:
    def test_identity(self, identity):
        assert sample_trajectory(identity, "pnrd", 50, seed=0).outcomes == (1,) * 50

    def test_deterministic(self, bs5050):
        a = sample_trajectory(bs5050, "pnrd", 500, seed=9, stream=2)
        b = sample_trajectory(bs5050, "pnrd", 500, seed=9, stream=2)
        assert a.outcomes == b.outcomes

    def test_occupancy_consistent(self, bs5050):
        rec = sample_trajectory(bs5050, "pnrd", 1000, seed=4)
        m = np.array(rec.occupancy)
        x = np.array(rec.outcomes)
        assert m[0] == 0
        assert np.all(m >= 0)
        assert np.array_equal(m[1:], m[:-1] + 1 - x)

    def test_threshold_clicks(self, bs5050):
        pn = sample_trajectory(bs5050, "pnrd", 300, seed=8)
        th = sample_trajectory(bs5050, "threshold", 300, seed=8)
        assert th.outcomes == tuple(int(x > 0) for x in pn.outcomes)

    def test_mean_rate(self, long_run):
        assert np.mean(long_run.outcomes) == pytest.approx(1.0, abs=0.01)

    def test_stationary_frequencies(self, bs5050):
        model = build_transition(bs5050, cutoff=60)
        p_st = model.observation @ stationary(model).pi
        # thin one long run; correlations decay within a few steps, so
        # every 20th outcome is effectively independent
        xs, _ = sample_occupancy_path(bs5050, 400_050, make_rng(21))
        obs = xs[50::20]
        n = len(obs)
        freq = np.bincount(obs, minlength=len(p_st))[: len(p_st)] / n
        sigma = np.sqrt(p_st * (1 - p_st) / n)
        mask = p_st > 1e-4
        assert np.all(np.abs(freq - p_st)[mask] < 3 * sigma[mask] + 1e-12)

    def test_rejects_zero_steps(self, bs5050):
        with pytest.raises(ValueError):
            sample_trajectory(bs5050, "pnrd", 0)


class TestEnsemble:
    def test_deterministic(self):
        spec = EnsembleSpec(count=20, seed=5, steps=8)
        a = ensemble_entropy_stats(spec)
        b = ensemble_entropy_stats(spec)
        assert np.array_equal(a.values, b.values)

    def test_threads_match_serial(self):
        spec = EnsembleSpec(count=12, seed=6, steps=6)
        assert np.array_equal(ensemble_entropy_stats(spec).values, ensemble_entropy_stats(spec, threads=2).values)

    def test_injected_preset(self, bs5050):
        stats = ensemble_entropy_stats(EnsembleSpec(1, 0, 12), unitaries=[bs5050])
        assert np.allclose(stats.mean, event_entropy_series(bs5050, "pnrd", 12))
        assert np.all(stats.std == 0)

    def test_sem(self):
        stats = ensemble_entropy_stats(EnsembleSpec(16, 1, 4))
        assert np.allclose(stats.sem, stats.std / 4)


class TestEstimateCorrelation:
    @pytest.mark.parametrize("k", [1, 30])
    def test_within_four_se(self, bs5050, k):
        exact = correlation_exact(bs5050, 200, k).value
        for s in range(20):
            traj = sample_trajectory(bs5050, "pnrd", 100_000, seed=100 + s)
            est = estimate_correlation(traj, k, 30_000, seed=s)
            assert abs(est.value - exact) < 4 * est.stderr

    def test_identity_zero(self, identity):
        est = estimate_correlation(sample_trajectory(identity, "pnrd", 500), 3, 1000)
        assert est.value == 0.0

    def test_deterministic(self, long_run):
        assert estimate_correlation(long_run, 5, 1000, seed=2) == estimate_correlation(long_run, 5, 1000, seed=2)

    def test_too_short(self):
        with pytest.raises(ValueError):
            estimate_correlation([1, 0, 2], 3, 10)

    def test_from_file(self, tmp_path, long_run):
        from loopsim.io import write_trajectories

        path = tmp_path / "run.txt"
        write_trajectories(path, [long_run.outcomes], "pnrd", "5050", 1)
        assert estimate_correlation(path, 2, 500, seed=1) == estimate_correlation(long_run, 2, 500, seed=1)
