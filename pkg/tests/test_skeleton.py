import numpy as np
import pytest

import cpslab as cl


def price_path(times, values):
    return cl.SamplePath(cl.TimeGrid(np.asarray(times, dtype=float)),
                         np.asarray(values, dtype=float))


def brownian_refinement(times, w, rng):
    mid_t = 0.5 * (times[1:] + times[:-1])
    mid_w = 0.5 * (w[1:] + w[:-1]) + np.sqrt(np.diff(times) / 4.0) * rng.standard_normal(len(mid_t))
    t2 = np.empty(len(times) + len(mid_t))
    w2 = np.empty_like(t2)
    t2[0::2], t2[1::2] = times, mid_t
    w2[0::2], w2[1::2] = w, mid_w
    return t2, w2


class TestExtractLadder:
    def test_constant_path(self):
        grid = cl.TimeGrid.uniform(1.0, 100)
        p = cl.SamplePath(grid, np.full((101, 1), 7.0))
        sk = cl.extract_ladder(p, 0.1)
        assert sk.n_stops == 1
        assert sk.retired_at == 1
        assert list(sk.marks) == [0]
        assert sk.times[0] == 0.0 and sk.times[1] == 1.0
        assert np.allclose(sk.anchors.ravel(), [7.0, 7.0])

    def test_exponential_first_crossing(self):
        grid = cl.TimeGrid.uniform(1.0, 20_000)
        p = cl.SamplePath(grid, (100.0 * np.exp(grid.times))[:, None])
        sk = cl.extract_ladder(p, 0.1)
        assert sk.marks[0] == 1
        assert abs(sk.times[1] - np.log(1.1)) <= grid.times[1]
        assert sk.anchors[1, 0] == pytest.approx(110.0, abs=1e-9)

    def test_rise_then_fall_marks(self):
        times = np.linspace(0.0, 1.0, 2001)
        up = np.linspace(100.0, 112.0, 800)
        down = np.linspace(112.0, 98.0, 700)
        flat = np.full(501, 98.0)
        p = price_path(times, np.concatenate([up, down, flat])[:, None])
        sk = cl.extract_ladder(p, 0.1)
        assert sk.marks[0] == 1
        assert sk.anchors[1, 0] == pytest.approx(110.0)
        assert sk.marks[1] == -1
        assert sk.anchors[2, 0] == pytest.approx(100.0)

    def test_band_property_between_stops(self):
        grid = cl.TimeGrid.uniform(1.0, 800)
        for p in cl.sample_gbm(0.0, 0.3, 100.0, grid, 30, seed=1):
            sk = cl.extract_ladder(p, 0.08)
            for n in range(sk.n_stops):
                lo, hi = sk.grid_indices[n], sk.grid_indices[n + 1]
                seg = p.values[lo + 1:hi, 0]
                anchor = sk.anchors[n, 0]
                assert np.all(seg / anchor > 1.0 / 1.08)
                assert np.all(seg / anchor < 1.08)

    def test_two_step_bound(self):
        grid = cl.TimeGrid.uniform(1.0, 800)
        eps = 0.08
        for p in cl.sample_gbm(0.0, 0.3, 100.0, grid, 20, seed=2):
            sk = cl.extract_ladder(p, eps)
            tol = np.exp(sk.max_step_log)
            for n in range(sk.n_stops):
                lo, hi = sk.grid_indices[n], sk.grid_indices[n + 1]
                ratio = p.values[hi, 0] / p.values[lo:hi, 0]
                assert np.all(ratio <= (1 + eps) ** 2 * tol)
                assert np.all(ratio >= (1 + eps) ** -2 / tol)

    def test_snapped_anchors_on_geometric_grid(self):
        grid = cl.TimeGrid.uniform(1.0, 500)
        eps = 0.1
        p = cl.sample_gbm(0.0, 0.4, 100.0, grid, 1, seed=3)[0]
        sk = cl.extract_ladder(p, eps)
        for n in range(sk.n_stops):
            if sk.marks[n] != 0:
                expected = 100.0 * (1.0 + eps) ** sk.levels[n + 1]
                assert sk.anchors[n + 1, 0] == pytest.approx(expected, rel=1e-12)

    def test_monotone_refinement(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            times = np.linspace(0.0, 1.0, 65)
            w = np.concatenate([[0.0], np.cumsum(np.sqrt(np.diff(times)) * rng.standard_normal(64))])
            counts = []
            for _ in range(4):
                p = price_path(times, (100.0 * np.exp(0.3 * w))[:, None])
                counts.append(cl.extract_ladder(p, 0.05).n_stops)
                times, w = brownian_refinement(times, w, rng)
            assert all(b >= a for a, b in zip(counts, counts[1:])), (seed, counts)

    def test_additive_mode(self):
        times = np.linspace(0.0, 1.0, 2001)
        p = price_path(times, (100.0 + 5.0 * times)[:, None])
        sk = cl.extract_ladder(p, 2.0, mode="additive")
        assert sk.marks[0] == 1
        assert sk.anchors[1, 0] == pytest.approx(102.0)
        assert sk.anchors[2, 0] == pytest.approx(104.0)
        assert list(sk.marks[-1:]) == [0]

    def test_overflow_error(self):
        grid = cl.TimeGrid.uniform(1.0, 2000)
        p = cl.sample_gbm(0.0, 0.5, 100.0, grid, 1, seed=4)[0]
        with pytest.raises(cl.LadderOverflowError) as err:
            cl.extract_ladder(p, 1e-4, max_stops=10)
        assert err.value.count == 10
        assert "10" in str(err.value)

    def test_custom_anchor_inside_band(self):
        grid = cl.TimeGrid.uniform(1.0, 100)
        p = cl.SamplePath(grid, np.full((101, 1), 100.0))
        sk = cl.extract_ladder(p, 0.05, anchor0=np.array([102.0]))
        assert sk.anchors[0, 0] == 102.0
        with pytest.raises(cl.ValidationError):
            cl.extract_ladder(p, 0.05, anchor0=np.array([130.0]))

    def test_multi_asset_any_coordinate_exit(self):
        times = np.linspace(0.0, 1.0, 1001)
        a0 = np.full(1001, 100.0)
        a1 = 50.0 * np.exp(0.3 * times)
        p = price_path(times, np.column_stack([a0, a1]))
        sk = cl.extract_ladder(p, 0.1)
        assert sk.d == 2
        assert not sk.snap
        assert sk.marks[0] == 1
        # anchors are raw path values for several assets
        g = sk.grid_indices[1]
        assert np.array_equal(sk.anchors[1], p.values[g])


class TestLadderIncrements:
    def test_retired_only(self):
        sk = cl.LadderSkeleton.from_marks([0], 0.1, 100.0)
        inc = cl.ladder_increments(sk)
        assert inc.shape == (1, 1)
        assert np.all(inc == 0.0)

    def test_one_dimensional_subtraction(self):
        sk = cl.LadderSkeleton.from_marks([1, 0], 0.1, 100.0)
        inc = cl.ladder_increments(sk)
        assert inc[0, 0] == pytest.approx(10.0)
        assert inc[1, 0] == 0.0

    def test_two_dimensional_subtraction(self):
        times = np.array([0.0, 0.5, 1.0])
        anchors = np.array([[100.0, 50.0], [110.0, 48.0], [110.5, 47.0]])
        sk = cl.LadderSkeleton(eps=0.1, mode="multiplicative",
                               grid_indices=np.array([0, 1, 2]), times=times,
                               anchors=anchors, marks=np.array([1, 0]),
                               snap=False, overshoots=np.zeros(2))
        inc = cl.ladder_increments(sk)
        assert np.allclose(inc[0], [10.0, -2.0])
        assert np.allclose(inc[1], [0.0, 0.0])

    def test_increment_band_bound(self):
        grid = cl.TimeGrid.uniform(1.0, 600)
        eps = 0.1
        for p in cl.sample_gbm(0.0, 0.3, 100.0, grid, 20, seed=5):
            sk = cl.extract_ladder(p, eps)
            inc = cl.ladder_increments(sk)
            tol = np.exp(sk.max_step_log)
            for n in range(sk.n_stops):
                bound = eps * (1 + eps) * sk.anchors[n, 0] * tol
                assert abs(inc[n, 0]) <= bound


class TestSkeletonSerialization:
    def test_roundtrip(self, tmp_path):
        grid = cl.TimeGrid.uniform(1.0, 300)
        paths = cl.sample_gbm(0.0, 0.3, 100.0, grid, 5, seed=6)
        skels = [cl.extract_ladder(p, 0.1) for p in paths]
        csv_path = tmp_path / "sk.csv"
        side = tmp_path / "sk.json"
        cl.skeleton.write_skeletons_csv(skels, csv_path, side)
        back = cl.skeleton.read_skeletons_csv(csv_path, side)
        for a, b in zip(skels, back):
            assert np.array_equal(a.marks, b.marks)
            assert np.allclose(a.anchors, b.anchors)
            assert np.allclose(a.times, b.times)
            assert np.array_equal(a.levels, b.levels)

    def test_marks_validation(self):
        with pytest.raises(cl.ValidationError):
            cl.LadderSkeleton.from_marks([1, 0, 1, 0], 0.1, 100.0)
        with pytest.raises(cl.ValidationError):
            cl.LadderSkeleton.from_marks([1, -1], 0.1, 100.0)
