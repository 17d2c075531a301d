import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from helpers import make_catalog, uniform_points
from subgp import ensemble as en
from subgp import gp
from subgp import partition as pt
from subgp import sampler as sm
from subgp.errors import ConfigError


def random_mixture(rng, max_components=8, sd_lo=0.4, sd_hi=1.2):
    k = int(rng.integers(1, max_components + 1))
    return en.MixturePredictive(
        means=rng.uniform(-2.5, 2.5, size=k),
        variances=rng.uniform(sd_lo**2, sd_hi**2, size=k),
    )


def mc_sample(mp, n, seed):
    rng = np.random.default_rng(seed)
    comp = rng.integers(mp.n_components, size=n)
    return rng.normal(mp.means[comp], np.sqrt(mp.variances[comp]))


@pytest.fixture(scope="module")
def small_ensemble():
    cat = make_catalog(uniform_points(800, 2, seed=0), y=None, seed=0)
    rng = np.random.default_rng(0)
    cat.y[:] = np.sin(4 * cat.X[:, 0]) + 0.2 * rng.normal(size=cat.n)
    cat.y[:] = (cat.y - cat.y.mean()) / cat.y.std()
    part, graph = pt.partition_pipeline(cat, 25, 75)
    model = en.train_ensemble(cat, part, graph, n_m=3, sampler_cfg=sm.SamplerConfig(seed=0))
    return cat, part, graph, model


class TestTrainEnsemble:
    def test_single_member_equals_single_gp(self, small_ensemble):
        cat, part, graph, _ = small_ensemble
        model = en.train_ensemble(cat, part, graph, n_m=1, sampler_cfg=sm.SamplerConfig(seed=0))
        draw = sm.draw_subsample(part, graph, sm.SamplerConfig(seed=0))
        direct = gp.fit(part.X[draw.indices], part.y[draw.indices])
        x = np.array([0.3, 0.6])
        mp = en.predictive(model, x)
        single = gp.predict(direct, x)
        assert mp.n_components == 1
        assert mp.means[0] == pytest.approx(single.mean, abs=1e-12)
        assert mp.variances[0] == pytest.approx(single.variance, abs=1e-12)

    def test_members_are_distinct_surfaces(self, small_ensemble):
        # ten members on 2-D data, each trained on one point per cell
        cat, part, graph, _ = small_ensemble
        model = en.train_ensemble(cat, part, graph, n_m=10, sampler_cfg=sm.SamplerConfig(seed=1))
        grid = np.column_stack([np.linspace(0, 1, 25), np.full(25, 0.5)])
        means, _ = en.mixture_components(model, grid)
        surfaces = {tuple(np.round(means[:, j], 10)) for j in range(10)}
        assert len(surfaces) == 10
        for member in model.members:
            assert member.X_train.shape[0] == part.n_cells

    def test_bit_stable_across_worker_counts(self, small_ensemble):
        cat, part, graph, _ = small_ensemble
        a = en.train_ensemble(cat, part, graph, n_m=2, sampler_cfg=sm.SamplerConfig(seed=3), n_jobs=1)
        b = en.train_ensemble(cat, part, graph, n_m=2, sampler_cfg=sm.SamplerConfig(seed=3), n_jobs=2)
        for ma, mb in zip(a.members, b.members):
            assert json.dumps(gp.model_to_dict(ma), sort_keys=True) == json.dumps(
                gp.model_to_dict(mb), sort_keys=True
            )

    def test_invalid_size(self, small_ensemble):
        cat, part, graph, _ = small_ensemble
        with pytest.raises(ConfigError):
            en.train_ensemble(cat, part, graph, n_m=0)

    def test_config_snapshot(self, small_ensemble):
        _, part, _, model = small_ensemble
        cfg = model.config
        assert cfg.n_min == part.n_min and cfg.n_max == part.n_max
        assert cfg.member_seeds == [0 ^ i for i in range(cfg.n_m)]

    def test_member_fit_retries_once_then_aborts(self, small_ensemble, monkeypatch):
        from subgp.errors import NumericalError

        cat, part, graph, _ = small_ensemble
        real_fit = gp.fit
        calls = {"n": 0}

        def flaky(X, y, opts=None):
            calls["n"] += 1
            if calls["n"] == 1:
                raise NumericalError("synthetic failure")
            return real_fit(X, y, opts)

        monkeypatch.setattr(gp, "fit", flaky)
        model = en.train_ensemble(cat, part, graph, n_m=1, sampler_cfg=sm.SamplerConfig(seed=0))
        assert calls["n"] == 2 and model.n_m == 1

        def always_fails(X, y, opts=None):
            raise NumericalError("synthetic failure")

        monkeypatch.setattr(gp, "fit", always_fails)
        with pytest.raises(NumericalError, match="member 0"):
            en.train_ensemble(cat, part, graph, n_m=1, sampler_cfg=sm.SamplerConfig(seed=0))


class TestMixtureMath:
    def test_symmetric_two_component(self):
        mp = en.MixturePredictive(means=np.array([0.0, 4.0]), variances=np.array([1.0, 1.0]))
        assert en.mixture_cdf(mp, np.array([2.0]))[0] == pytest.approx(0.5, abs=1e-12)
        assert en.mixture_quantile(mp, 0.5) == pytest.approx(2.0, abs=1e-7)

    def test_density_value(self):
        mp = en.MixturePredictive(means=np.array([0.0, 4.0]), variances=np.array([1.0, 1.0]))
        assert en.mixture_pdf(mp, np.array([2.0]))[0] == pytest.approx(norm.pdf(2.0), rel=1e-10)

    def test_single_component_gaussian_identity(self):
        mp = en.MixturePredictive(means=np.array([1.5]), variances=np.array([4.0]))
        for q in (0.05, 0.25, 0.5, 0.9):
            assert en.mixture_quantile(mp, q) == pytest.approx(1.5 + 2.0 * norm.ppf(q), abs=1e-6)

    def test_three_component_quantiles_vs_monte_carlo(self):
        mp = en.MixturePredictive(
            means=np.array([-1.0, 0.5, 2.0]), variances=np.array([0.25, 0.5, 1.0])
        )
        samples = mc_sample(mp, 10**6, seed=0)
        for q in (0.05, 0.25, 0.5, 0.75, 0.95):
            assert en.mixture_quantile(mp, q) == pytest.approx(
                np.quantile(samples, q), abs=5e-3
            )

    def test_quantile_requires_open_interval(self):
        mp = en.MixturePredictive(means=np.array([0.0]), variances=np.array([1.0]))
        with pytest.raises(ConfigError):
            en.mixture_quantile(mp, 1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6))
    def test_cdf_monotone_and_quantile_inverse(self, seed):
        rng = np.random.default_rng(seed)
        mp = random_mixture(rng)
        ys = np.linspace(mp.means.min() - 6, mp.means.max() + 6, 200)
        cdf = en.mixture_cdf(mp, ys)
        assert (np.diff(cdf) >= -1e-12).all()
        assert cdf[0] < 1e-6 and cdf[-1] > 1 - 1e-6
        for q in (0.1, 0.5, 0.9):
            y_q = en.mixture_quantile(mp, q)
            assert en.mixture_cdf(mp, np.array([y_q]))[0] == pytest.approx(q, abs=1e-6)

    def test_mixture_mean_linearity(self):
        rng = np.random.default_rng(10)
        mp = random_mixture(rng)
        samples = mc_sample(mp, 10**6, seed=1)
        assert samples.mean() == pytest.approx(mp.means.mean(), abs=5e-3)

    def test_density_integrates_to_one(self):
        rng = np.random.default_rng(13)
        mp = random_mixture(rng)
        sd = np.sqrt(mp.variances)
        grid = np.linspace((mp.means - 9 * sd).min(), (mp.means + 9 * sd).max(), 20_001)
        total = np.trapezoid(en.mixture_pdf(mp, grid), grid)
        assert total == pytest.approx(1.0, abs=1e-6)


class TestHpdRegion:
    def test_single_gaussian_90(self):
        mp = en.MixturePredictive(means=np.array([0.0]), variances=np.array([1.0]))
        region = en.hpd_region(mp, 0.9)
        assert len(region) == 1
        lo, hi = region[0]
        assert lo == pytest.approx(-1.6449, abs=1e-3)
        assert hi == pytest.approx(1.6449, abs=1e-3)

    def test_separated_bimodal_is_disjoint(self):
        mp = en.MixturePredictive(means=np.array([0.0, 8.0]), variances=np.array([1.0, 1.0]))
        region = en.hpd_region(mp, 0.9)
        assert len(region) == 2
        assert region[0][1] < region[1][0]

    def test_region_probability_vs_monte_carlo(self):
        rng = np.random.default_rng(11)
        for _ in range(3):
            mp = random_mixture(rng, max_components=4)
            region = en.hpd_region(mp, 0.9)
            samples = mc_sample(mp, 10**6, seed=int(rng.integers(10**6)))
            inside = np.zeros(samples.size, dtype=bool)
            for lo, hi in region:
                inside |= (samples >= lo) & (samples <= hi)
            assert inside.mean() == pytest.approx(0.9, abs=5e-3)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6), st.sampled_from([0.5, 0.8, 0.9, 0.95]))
    def test_region_probability_analytic(self, seed, level):
        mp = random_mixture(np.random.default_rng(seed))
        region = en.hpd_region(mp, level)
        prob = sum(
            en.mixture_cdf(mp, np.array([hi]))[0] - en.mixture_cdf(mp, np.array([lo]))[0]
            for lo, hi in region
        )
        assert prob == pytest.approx(level, abs=1e-3)


class TestSamplePredictive:
    def test_two_component_mean(self):
        mp = en.MixturePredictive(means=np.array([0.0, 4.0]), variances=np.array([1.0, 1.0]))
        ys = en.sample_predictive(mp, 10**6, np.random.default_rng(0))
        assert ys.mean() == pytest.approx(2.0, abs=0.01)

    def test_reproducible(self):
        mp = en.MixturePredictive(means=np.array([0.0, 4.0]), variances=np.array([1.0, 1.0]))
        a = en.sample_predictive(mp, 100, np.random.default_rng(5))
        b = en.sample_predictive(mp, 100, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_empirical_cdf_converges(self):
        rng = np.random.default_rng(12)
        mp = random_mixture(rng)
        ys = en.sample_predictive(mp, 10**6, np.random.default_rng(3))
        grid = np.linspace(mp.means.min() - 4, mp.means.max() + 4, 50)
        emp = np.searchsorted(np.sort(ys), grid) / ys.size
        np.testing.assert_allclose(emp, en.mixture_cdf(mp, grid), atol=5e-3)


class TestSerialization:
    def test_round_trip_and_stable_hashes(self, tmp_path, small_ensemble):
        _, _, _, model = small_ensemble
        d1 = tmp_path / "e1"
        d2 = tmp_path / "e2"
        m1 = en.save_ensemble(model, d1)
        m2 = en.save_ensemble(model, d2)
        assert [e["sha256"] for e in m1["members"]] == [e["sha256"] for e in m2["members"]]
        back = en.load_ensemble(d1)
        assert back.n_m == model.n_m
        assert back.config.to_dict() == model.config.to_dict()
        x = np.array([0.25, 0.75])
        np.testing.assert_allclose(
            en.predictive(back, x).means, en.predictive(model, x).means, atol=1e-12
        )
        for ma, mb in zip(model.members, back.members):
            assert mb.nll == pytest.approx(ma.nll, abs=1e-10)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ConfigError, match="manifest"):
            en.load_ensemble(tmp_path)


class TestVarianceDominance:
    def test_disagreeing_members_inflate_variance(self):
        # when member means disagree by > 2 pooled sd, the mixture variance
        # exceeds any single member's variance
        mp = en.MixturePredictive(means=np.array([0.0, 3.0]), variances=np.array([0.5, 0.7]))
        mix_var = float(np.var(mc_sample(mp, 10**6, seed=4)))
        pooled_sd = np.sqrt(mp.variances.mean())
        assert abs(mp.means[0] - mp.means[1]) > 2 * pooled_sd
        assert mix_var > mp.variances.max()
