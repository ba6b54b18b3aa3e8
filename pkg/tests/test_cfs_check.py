import numpy as np
import pytest

import cpslab as cl
from oracles import band_stay_probability


def absorbed_fixture(s0, sigma, barrier, grid, n, seed):
    """Martingale-like paths frozen at a barrier once it is hit: a model
    whose conditional support collapses after absorption."""
    out = []
    for p in cl.sample_gbm(0.0, sigma, s0, grid, n, seed):
        v = p.values[:, 0].copy()
        hit = np.flatnonzero(v >= barrier)
        if len(hit):
            v[hit[0]:] = barrier
        out.append(cl.SamplePath(grid, v[:, None], path_id=p.path_id))
    return out


class TestTubeProbability:
    def test_wide_tube_near_certain(self):
        model = cl.GfbmModel(cl.FbmSpec(hurst=0.5, sigma=0.1, s0=100.0))
        grid = cl.TimeGrid.uniform(1.0, 100)
        base = model.sample(grid, 1, seed=0)[0]
        n_obs = 51
        prefix = cl.SamplePath(cl.TimeGrid(grid.times[:n_obs]), base.values[:n_obs])
        s_v = float(prefix.values[-1, 0])
        # Median continuation with a tube of 3.5 remaining standard
        # deviations (price units) stays inside with high probability.
        remaining_sd = 0.1 * np.sqrt(0.5)
        query = cl.TubeQuery(target=lambda t: np.full_like(t, s_v),
                             eta=3.5 * remaining_sd * s_v, n_samples=2000)
        est = cl.tube_probability(model, prefix, grid, query, seed=1)
        assert est.estimate > 0.9
        assert est.lower_confidence(0.99) > 0.5

    def test_shrinking_tube_vanishes(self):
        model = cl.GfbmModel(cl.FbmSpec(hurst=0.5, sigma=0.2, s0=100.0))
        grid = cl.TimeGrid.uniform(1.0, 200)
        prefix = cl.SamplePath(cl.TimeGrid(np.array([0.0])), np.array([[100.0]]))
        query = cl.TubeQuery(target=lambda t: np.full_like(t, 100.0),
                             eta=0.05, n_samples=500)
        est = cl.tube_probability(model, prefix, grid, query, seed=2)
        assert est.estimate <= 0.01

    def test_brownian_band_against_propagation_oracle(self):
        sigma, s0, eta = 0.2, 100.0, 15.0
        model = cl.GfbmModel(cl.FbmSpec(hurst=0.5, sigma=sigma, s0=s0))
        grid = cl.TimeGrid.uniform(1.0, 250)
        prefix = cl.SamplePath(cl.TimeGrid(np.array([0.0])), np.array([[s0]]))
        n = 8000
        query = cl.TubeQuery(target=lambda t: np.full_like(t, s0), eta=eta,
                             n_samples=n)
        est = cl.tube_probability(model, prefix, grid, query, seed=3)
        lo = np.log(1.0 - eta / s0) / sigma
        hi = np.log(1.0 + eta / s0) / sigma
        oracle = band_stay_probability(lo, hi, 1.0)
        se = max(est.stderr, 1e-4)
        # Grid sampling sees strictly fewer exits than continuous time, so
        # allow the discretization bias on top of the Monte Carlo error.
        assert est.estimate >= oracle - 3 * se
        assert est.estimate - oracle <= 0.04 + 3 * se

    def test_target_must_match_history(self):
        model = cl.GfbmModel(cl.FbmSpec(hurst=0.5, sigma=0.2, s0=100.0))
        grid = cl.TimeGrid.uniform(1.0, 50)
        base = model.sample(grid, 1, seed=4)[0]
        prefix = cl.SamplePath(cl.TimeGrid(grid.times[:26]), base.values[:26])
        query = cl.TubeQuery(target=lambda t: np.full_like(t, 1.0), eta=1.0,
                             n_samples=10)
        with pytest.raises(cl.ValidationError):
            cl.tube_probability(model, prefix, grid, query, seed=5)

    def test_gbm_markov_restart(self):
        model = cl.GbmModel(mu=0.0, sigma=0.2, s0=100.0)
        grid = cl.TimeGrid.uniform(1.0, 100)
        base = model.sample(grid, 1, seed=6)[0]
        prefix = cl.SamplePath(cl.TimeGrid(grid.times[:51]), base.values[:51])
        s_v = float(prefix.values[-1, 0])
        query = cl.TubeQuery(target=lambda t: np.full_like(t, s_v),
                             eta=0.6 * s_v, n_samples=1000)
        est = cl.tube_probability(model, prefix, grid, query, seed=7)
        assert est.estimate > 0.9


class TestMarkPositivity:
    def test_gfbm_all_marks_present(self):
        grid = cl.TimeGrid.uniform(1.0, 400)
        model = cl.GfbmModel(cl.FbmSpec(hurst=0.7, sigma=0.25, s0=100.0))
        paths = model.sample(grid, 3000, seed=8)
        table = cl.mark_positivity(paths, eps=0.1, n_stops=3, min_count=200)
        assert table.passed
        populated = [c for _, _, c in table.rows if c.sum() >= 200]
        assert populated
        for c in populated:
            assert np.all(c > 0)

    def test_deterministic_monotone_flagged(self):
        grid = cl.TimeGrid.uniform(1.0, 500)
        drift = [cl.SamplePath(grid, (100.0 * np.exp(0.5 * grid.times))[:, None],
                               path_id=i) for i in range(300)]
        table = cl.mark_positivity(drift, eps=0.1, n_stops=2, min_count=200)
        assert not table.passed
        missing = {m for _, _, ms in table.flagged for m in ms}
        assert "down" in missing

    def test_eps_larger_than_range_flagged(self):
        grid = cl.TimeGrid.uniform(1.0, 100)
        paths = cl.sample_gbm(0.0, 0.05, 100.0, grid, 300, seed=9)
        table = cl.mark_positivity(paths, eps=2.0, n_stops=2, min_count=200)
        assert not table.passed
        stop, level, missing = table.flagged[0]
        assert set(missing) == {"down", "up"}

    def test_integrated_model_smooth_paths_keep_support(self):
        # Running integration preserves the support property: the smooth
        # model still exhibits all three marks in populated buckets.
        grid = cl.TimeGrid.uniform(1.0, 400)
        model = cl.IntegratedModel(hurst=0.6, sigma=1.2, s0=100.0)
        paths = model.sample(grid, 2000, seed=41)
        table = cl.mark_positivity(paths, eps=0.1, n_stops=2, min_count=200)
        assert table.passed
        populated = [c for _, _, c in table.rows if c.sum() >= 200]
        assert populated and all(np.all(c > 0) for c in populated)

    def test_absorbed_martingale_flagged(self):
        grid = cl.TimeGrid.uniform(1.0, 300)
        paths = absorbed_fixture(100.0, 0.35, 115.0, grid, 2000, seed=10)
        table = cl.mark_positivity(paths, eps=0.1, n_stops=3, min_count=200)
        assert not table.passed

    def test_csv_format(self, tmp_path):
        grid = cl.TimeGrid.uniform(1.0, 200)
        paths = cl.sample_gbm(0.0, 0.3, 100.0, grid, 100, seed=11)
        table = cl.mark_positivity(paths, eps=0.1, n_stops=2, min_count=20)
        out = tmp_path / "marks.csv"
        table.to_csv(out)
        assert out.read_text().splitlines()[0] == \
            "stop,level,count_down,count_retire,count_up"


class TestInteriorHullAudit:
    def test_independent_assets_pass(self):
        grid = cl.TimeGrid.uniform(0.25, 300)
        model = cl.GbmModel(mu=[0.0, 0.0], sigma=[0.15, 0.15], s0=[100.0, 100.0])
        paths = model.sample(grid, 3000, seed=0)
        skels = [cl.extract_ladder(p, 0.1) for p in paths]
        report = cl.interior_hull_audit(skels)
        assert report.passed

    def test_correlated_assets_fail(self):
        grid = cl.TimeGrid.uniform(0.5, 300)
        ones = cl.sample_gbm(0.0, 0.2, 100.0, grid, 400, seed=12)
        paths = [cl.SamplePath(grid, np.column_stack([p.values[:, 0],
                                                      3.0 * p.values[:, 0]]),
                               path_id=p.path_id) for p in ones]
        skels = [cl.extract_ladder(p, 0.1) for p in paths]
        report = cl.interior_hull_audit(skels)
        assert not report.passed

    def test_report_serialization(self, tmp_path):
        grid = cl.TimeGrid.uniform(0.25, 200)
        model = cl.GbmModel(mu=[0.0, 0.0], sigma=[0.12, 0.12], s0=[50.0, 80.0])
        paths = model.sample(grid, 800, seed=13)
        skels = [cl.extract_ladder(p, 0.1) for p in paths]
        report = cl.interior_hull_audit(skels)
        out = tmp_path / "hull.json"
        report.to_json(out)
        assert "interior_ok" in out.read_text()
