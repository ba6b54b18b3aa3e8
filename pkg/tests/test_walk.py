import numpy as np
import pytest

import cpslab as cl


class TestStepMeasure:
    def test_full_retirement(self):
        sm = cl.step_measure(1.0, 0.37)
        assert (sm.alpha, sm.lam, sm.mu) == (1.0, 0.0, 0.0)

    def test_half_retirement_against_linear_solve(self):
        sm = cl.step_measure(0.5, 0.1)
        a = np.array([[1.0, 1.0], [1.0 / 1.1, 1.1]])
        b = np.array([0.5, 0.5])
        lam, mu = np.linalg.solve(a, b)
        assert sm.lam == pytest.approx(lam, abs=1e-12)
        assert sm.mu == pytest.approx(mu, abs=1e-12)
        assert sm.lam == pytest.approx(0.261905, abs=1e-6)
        assert sm.mu == pytest.approx(0.238095, abs=1e-6)

    def test_no_retirement(self):
        sm = cl.step_measure(0.0, 0.1)
        assert sm.lam == pytest.approx(1.1 / 2.1, abs=1e-12)
        assert sm.mu == pytest.approx(1.0 / 2.1, abs=1e-12)
        assert sm.lam / 1.1 + sm.mu * 1.1 == pytest.approx(1.0, abs=1e-12)

    def test_invariants_on_sweep(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            sm = cl.step_measure(rng.uniform(0, 1), rng.uniform(0.01, 1.5))
            total, mart = sm.residuals()
            assert abs(total) <= 1e-12
            assert abs(mart) <= 1e-12
            assert sm.lam >= 0 and sm.mu >= 0

    def test_domain_errors(self):
        with pytest.raises(cl.ValidationError):
            cl.step_measure(1.5, 0.1)
        with pytest.raises(cl.ValidationError):
            cl.step_measure(0.5, 0.0)


class TestDensityIncrement:
    def test_after_retirement_is_one(self):
        sm = cl.step_measure(0.5, 0.1)
        assert cl.density_increment(1, sm, (0.1, 0.1, 0.8), already_retired=True) == 1.0

    def test_retirement_ratio(self):
        sm = cl.step_measure(0.5, 0.1)
        assert cl.density_increment(0, sm, (0.25, 0.25, 0.5)) == pytest.approx(2.0)

    def test_up_ratio(self):
        sm = cl.step_measure(0.5, 0.1)
        z = cl.density_increment(1, sm, (1 / 3, 1 / 3, 1 / 3))
        assert z == pytest.approx(0.714286, abs=1e-6)

    def test_zero_reference_rejected(self):
        sm = cl.step_measure(0.5, 0.1)
        with pytest.raises(cl.ValidationError):
            cl.density_increment(0, sm, (0.5, 0.0, 0.5))


class TestRetiredWalk:
    def test_values_on_geometric_grid(self):
        w = cl.RetiredWalk(x0=100.0, eps=0.1, marks=np.array([1, 1, -1, 0]))
        assert np.allclose(w.values, [100.0, 110.0, 121.0, 110.0, 110.0])

    def test_absorption_enforced(self):
        with pytest.raises(cl.ValidationError):
            cl.RetiredWalk(x0=1.0, eps=0.1, marks=np.array([0, 1, 0]))

    def test_simulated_walks_absorb(self):
        sched = cl.ConstantSchedule(0.3)
        for w in cl.simulate_walk(sched, 0.1, 1.0, 50, seed=1):
            assert w.marks[-1] == 0
            zero = np.flatnonzero(w.marks == 0)
            assert len(zero) == 1


class TestNormalization:
    def test_constant_half(self):
        rep = cl.verify_density_normalizes(cl.ConstantSchedule(0.5), 0.1)
        assert rep.passed
        assert np.allclose(rep.residuals[:5], 0.5 ** np.arange(1, 6))

    def test_constant_one(self):
        rep = cl.verify_density_normalizes(cl.ConstantSchedule(1.0), 0.1)
        assert rep.passed
        assert rep.horizon == 1
        assert rep.residuals[0] == 0.0

    def test_constant_zero_fails(self):
        rep = cl.verify_density_normalizes(cl.ConstantSchedule(0.0), 0.1, max_horizon=200)
        assert not rep.passed
        assert rep.final_residual == pytest.approx(1.0)

    def test_integrability_schedule_passes(self):
        sched = cl.integrability_schedule(lambda x: x, 100.0, 0.1)
        rep = cl.verify_density_normalizes(sched, 0.1)
        assert rep.passed

    def test_tree_residual_matches_constant_product(self):
        sched = cl.ConstantSchedule(0.3)
        rep = cl.verify_density_normalizes(sched, 0.2, max_horizon=12, tol=0.0)
        assert np.allclose(rep.residuals, 0.7 ** np.arange(1, 13), atol=1e-12)


class TestIntegrabilitySchedule:
    def test_flat_function_keeps_base_alpha(self):
        sched = cl.integrability_schedule(lambda x: 0.0, 1.0, 0.1)
        state = sched.initial_state()
        assert sched.alpha(1, state) == pytest.approx(0.5)
        state = sched.advance(state, 1)
        assert sched.alpha(2, state) == pytest.approx(0.5)

    def test_bounded_function_mc_bound(self):
        # sup f(X) <= 1 by construction, so the expectation is bounded by
        # s0 + sum of the budget; Monte Carlo under the schedule's measure.
        f = lambda x: min(x, 1.0)
        sched = cl.integrability_schedule(f, 1.0, 0.1, budget=lambda m: 2.0 ** (-m))
        walks = cl.simulate_walk(sched, 0.1, 1.0, 4000, seed=2)
        sups = np.array([max(f(v) for v in w.values) for w in walks])
        se = sups.std(ddof=1) / np.sqrt(len(sups))
        assert sups.mean() <= f(1.0) + 1.0 + 3 * se

    def test_identity_function_sup_bound(self):
        sched = cl.integrability_schedule(lambda x: x, 1.0, 0.1,
                                          budget=lambda m: 2.0 ** (-m))
        walks = cl.simulate_walk(sched, 0.1, 1.0, 6000, seed=3)
        sups = np.array([w.values.max() for w in walks])
        se = sups.std(ddof=1) / np.sqrt(len(sups))
        assert sups.mean() <= 1.0 + 1.0 + 3 * se

    def test_record_tail_bound(self):
        # Reaching record level m happens with probability at most the
        # product of the granted survival probabilities.
        sched = cl.integrability_schedule(lambda x: x, 1.0, 0.1,
                                          budget=lambda m: 2.0 ** (-m))
        walks = cl.simulate_walk(sched, 0.1, 1.0, 6000, seed=4)
        for m in (1, 2, 3):
            eta_m = np.prod([sched.delta(k) for k in range(1, m + 1)])
            reached = np.array([np.max(np.abs(np.cumsum(w.marks))) >= m for w in walks])
            se = np.sqrt(reached.mean() * (1 - reached.mean()) / len(reached) + 1e-12)
            assert reached.mean() <= eta_m + 3 * se


class TestTwoPoint:
    def test_grid_fit_reference_case(self):
        tpm = cl.two_point_measure(100.0, 80.0, 120.0, 0.05)
        assert tpm.eps_prime == pytest.approx(1.5 ** (1.0 / 9.0) - 1.0, abs=1e-15)
        assert tpm.eps_prime == pytest.approx(0.046082, abs=1e-6)
        assert (tpm.j, tpm.k) == (-5, 4)
        assert tpm.x0 == pytest.approx(80.0 * (1 + tpm.eps_prime) ** 5, rel=1e-12)
        assert tpm.x0 == pytest.approx(100.2117, abs=1e-3)
        assert tpm.q_v == pytest.approx((tpm.x0 - 80.0) / 40.0, abs=1e-15)
        assert 100.0 / (1 + tpm.eps_prime) < tpm.x0 < 100.0 * (1 + tpm.eps_prime)

    def test_grid_endpoints_recovered(self):
        tpm = cl.two_point_measure(100.0, 80.0, 120.0, 0.05)
        assert tpm.x0 * (1 + tpm.eps_prime) ** tpm.j == pytest.approx(80.0, rel=1e-10)
        assert tpm.x0 * (1 + tpm.eps_prime) ** tpm.k == pytest.approx(120.0, rel=1e-10)

    def test_degenerate_start_near_u(self):
        # As the start collapses onto u the v-probability vanishes.
        previous = 1.0
        for eps in (0.05, 0.02, 0.005, 0.001):
            tpm = cl.two_point_measure(80.05, 80.0, 120.0, eps)
            assert tpm.j < 0 < tpm.k
            assert tpm.q_v <= previous + 1e-12
            assert tpm.q_v <= 80.0 * ((1 + tpm.eps_prime) ** 2 - 1) / 40.0
            previous = tpm.q_v
        assert previous < 0.005

    def test_optional_sampling_identity(self):
        tpm = cl.two_point_measure(100.0, 70.0, 130.0, 0.08)
        assert tpm.q_u * tpm.u + tpm.q_v * tpm.v == pytest.approx(tpm.x0, rel=1e-12)

    def test_terminal_law_matches_formula(self):
        tpm = cl.two_point_measure(100.0, 80.0, 120.0, 0.05)
        q_u, q_v, resid = cl.two_point_terminal_law(tpm.eps_prime, tpm.j, tpm.k)
        assert resid < 1e-12
        assert abs(q_v - tpm.q_v) <= 1e-9
        assert abs(q_u - tpm.q_u) <= 1e-9

    def test_validation(self):
        with pytest.raises(cl.ValidationError):
            cl.two_point_measure(100.0, 120.0, 80.0, 0.05)


class TestExactTree:
    def test_martingale_at_every_node(self):
        tree = cl.enumerate_tree(cl.ConstantSchedule(0.5), 0.1, 1.0, 12)
        assert tree.martingale_residuals() <= 1e-12
        assert abs(tree.leaf_mass() - 1.0) <= 1e-10

    def test_integrability_schedule_tree(self):
        sched = cl.integrability_schedule(lambda x: x, 1.0, 0.1)
        tree = cl.enumerate_tree(sched, 0.1, 1.0, 10)
        assert tree.martingale_residuals() <= 1e-12
        assert abs(tree.leaf_mass() - 1.0) <= 1e-10

    def test_two_point_tree_absorbs(self):
        tpm = cl.two_point_measure(100.0, 90.0, 112.0, 0.08)
        tree = cl.enumerate_tree(tpm.schedule(), tpm.eps_prime, tpm.x0, 60)
        assert tree.martingale_residuals() <= 1e-10
        law = tree.terminal_law()
        p_v = sum(m for x, m in law.items() if abs(x - tpm.v) < 1e-6)
        assert p_v == pytest.approx(tpm.q_v, abs=1e-6)

    def test_density_chain_reproduces_tree(self):
        # Reference trinomial with exact conditional probabilities; the
        # product of step likelihood ratios must convert reference path
        # masses into the target tree masses exactly.
        eps, depth = 0.1, 7
        ref = (0.45, 0.1, 0.45)
        sched = cl.ConstantSchedule(0.3)
        step = cl.step_measure(0.3, eps)
        tree = cl.enumerate_tree(sched, eps, 1.0, depth)

        target_retired = {}
        for (state, retired), mass in tree.nodes[depth].items():
            if retired:
                key = state[0]
                target_retired[key] = target_retired.get(key, 0.0) + mass

        empirical = {}

        def recurse(marks, prob):
            if marks and marks[-1] == 0:
                level = int(np.sum(marks))
                like = np.prod([cl.density_increment(m, step, ref) for m in marks])
                empirical[level] = empirical.get(level, 0.0) + prob * like
                return
            if len(marks) == depth:
                return
            for mark, p in ((-1, ref[0]), (0, ref[1]), (1, ref[2])):
                recurse(marks + [mark], prob * p)

        recurse([], 1.0)
        assert set(empirical) == set(target_retired)
        for level, mass in target_retired.items():
            assert empirical[level] == pytest.approx(mass, abs=1e-12)

    def test_tree_csv_dump(self, tmp_path):
        tree = cl.enumerate_tree(cl.ConstantSchedule(0.5), 0.1, 1.0, 3)
        out = tmp_path / "tree.csv"
        tree.to_csv(out)
        header = out.read_text().splitlines()[0]
        assert header == "n,level,prob_down,prob_retire,prob_up,X"


class TestEmpiricalWeights:
    def test_exact_reference_gives_unit_expectation(self):
        # With exact reference probabilities the per-step ratios average
        # to one under the reference law by construction.
        eps = 0.1
        sched = cl.ConstantSchedule(0.4)
        step = cl.step_measure(0.4, eps)
        ref = (0.3, 0.2, 0.5)
        expect = ref[0] * step.lam / ref[0] + ref[1] * step.alpha / ref[1] \
            + ref[2] * step.mu / ref[2]
        assert expect == pytest.approx(1.0, abs=1e-15)

    def test_weights_positive_for_equivalent_schedule(self):
        grid = cl.TimeGrid.uniform(1.0, 300)
        paths = cl.sample_gbm(0.0, 0.3, 100.0, grid, 50, seed=7)
        skels = [cl.extract_ladder(p, 0.1) for p in paths]
        sched = cl.ConstantSchedule(0.5)
        w = cl.empirical_mark_weights(skels, sched)
        assert np.all(w.likelihood > 0)
