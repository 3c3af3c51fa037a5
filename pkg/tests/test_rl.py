import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plsgd.oracle import substream
from plsgd.rl import (
    SoftmaxPolicy,
    StochasticGradientSampler,
    TabularMdp,
    bandit,
    chain3,
    close_bandit,
    discounted_state_distribution,
    evaluate_policy,
    exact_gradient,
    load_mdp,
    local_radius,
    optimal_value,
    pl_constant,
    policy_probs,
    reward_gap,
    run_policy_gradient,
    save_mdp,
    stochastic_gradient,
    sublevel_setup,
    values_batch,
)
from plsgd.schedules import StepSchedule


def fd_grad(mdp, w, lam, h=1e-6):
    out = np.empty_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        out[i] = (evaluate_policy(mdp, w + e, lam).value - evaluate_policy(mdp, w - e, lam).value) / (2 * h)
    return out


def two_state(rho=0.9):
    p = np.zeros((2, 2, 2))
    p[0, 0] = [0.7, 0.3]
    p[0, 1] = [0.2, 0.8]
    p[1, 0] = [0.5, 0.5]
    p[1, 1] = [0.1, 0.9]
    return TabularMdp(p, np.array([[0.1, 0.4], [0.9, 0.3]]), rho, np.array([0.25, 0.75]))


class TestMdp:
    def test_validation(self):
        with pytest.raises(ValueError):
            TabularMdp(np.full((1, 2, 1), 0.5), np.zeros((1, 2)), 0.5, np.ones(1))
        with pytest.raises(ValueError):
            TabularMdp(np.ones((1, 2, 1)), np.array([[1.5, 0.0]]), 0.5, np.ones(1))
        with pytest.raises(ValueError):
            TabularMdp(np.ones((2, 1, 2)) / 2, np.zeros((2, 1)), 0.5, np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            TabularMdp(np.ones((1, 2, 1)), np.zeros((1, 2)), 1.0, np.ones(1))

    def test_immutable(self):
        m = chain3()
        with pytest.raises(ValueError):
            m.rewards[0, 0] = 0.5

    @pytest.mark.parametrize("factory", [bandit, chain3, two_state, close_bandit])
    def test_roundtrip(self, factory, tmp_path):
        m = factory()
        save_mdp(m, tmp_path / "m.json")
        back = load_mdp(tmp_path / "m.json")
        for name in ("transitions", "rewards", "mu"):
            np.testing.assert_array_equal(getattr(back, name), getattr(m, name))
        assert back.rho == m.rho

    def test_unknown_keys(self):
        data = bandit().to_dict()
        data["extra"] = 1
        with pytest.raises(ValueError):
            TabularMdp.from_dict(data)


class TestPolicy:
    @given(st.lists(st.floats(-30, 30), min_size=6, max_size=6))
    def test_rows_are_distributions(self, w):
        pi = policy_probs(chain3(), np.array(w))
        np.testing.assert_allclose(pi.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(pi >= 0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            policy_probs(chain3(), np.zeros(5))


class TestEvaluate:
    def test_uniform_bandit(self):
        val = evaluate_policy(bandit(), np.zeros(2))
        assert val.value == pytest.approx(1.0)
        np.testing.assert_allclose(val.q[0], [1.5, 0.5])

    def test_greedy_limit(self):
        assert evaluate_policy(bandit(), np.array([60.0, 0.0])).value == pytest.approx(2.0)

    @pytest.mark.parametrize("k, lam", [(2, 0.1), (3, 1.0), (5, 0.3)])
    def test_entropy_only(self, k, lam):
        m = TabularMdp(np.ones((1, k, 1)), np.zeros((1, k)), 0.5, np.ones(1))
        assert evaluate_policy(m, np.zeros(k), lam).value == pytest.approx(lam * np.log(k) / 0.5)

    def test_value_consistency(self, rng):
        m = chain3()
        w = rng.uniform(-3, 3, 6)
        for lam in (0.0, 0.3):
            val = evaluate_policy(m, SoftmaxPolicy(w), lam)
            pi = val.pi
            log_pi = np.log(pi)
            np.testing.assert_allclose(val.v, np.sum(pi * (val.q - lam * log_pi), axis=-1), rtol=1e-12)

    def test_batch_matches_single(self, rng):
        m = chain3()
        w = rng.uniform(-3, 3, (7, 6))
        single = [evaluate_policy(m, x, 0.1).value for x in w]
        np.testing.assert_allclose(values_batch(m, w, 0.1), single, rtol=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 5])
    def test_batch_single_state(self, rng, n):
        m = bandit()
        w = rng.uniform(-3, 3, (n, m.n_params))
        single = [evaluate_policy(m, x, 0.1).value for x in w]
        out = values_batch(m, w, 0.1)
        assert out.shape == (n,)
        np.testing.assert_allclose(out, single, rtol=1e-12)


class TestOptimalValue:
    def test_bandit(self):
        opt = optimal_value(bandit())
        assert opt.value == pytest.approx(2.0, abs=1e-12)
        np.testing.assert_array_equal(opt.pi[0], [1.0, 0.0])

    def test_soft_limit(self):
        for m in (bandit(), chain3()):
            assert optimal_value(m, 1e-6).value == pytest.approx(optimal_value(m, 0.0).value, abs=1e-4)

    @pytest.mark.parametrize("lam", [0.1, 0.5, 1.0])
    def test_min_policy_floor(self, lam):
        for m in (bandit(), chain3(), two_state()):
            assert optimal_value(m, lam).pi.min() >= np.exp(-1 / ((1 - m.rho) * lam))

    @pytest.mark.parametrize("lam", [0.0, 0.1])
    def test_dominates_random_policies(self, lam, rng):
        m = chain3()
        best = optimal_value(m, lam).value
        assert np.all(values_batch(m, rng.uniform(-3, 3, (200, 6)), lam) <= best + 1e-10)

    def test_soft_optimum_is_stationary(self):
        for m in (chain3(), two_state()):
            w = np.log(optimal_value(m, 0.1).pi).reshape(-1)
            assert np.linalg.norm(exact_gradient(m, w, 0.1)) <= 1e-8
            assert evaluate_policy(m, w, 0.1).value == pytest.approx(optimal_value(m, 0.1).value, abs=1e-10)


class TestStateDistribution:
    def test_single_state(self):
        assert discounted_state_distribution(bandit(), np.zeros(2)) == pytest.approx([1.0])

    def test_no_discount(self):
        m = two_state(rho=0.0)
        np.testing.assert_allclose(discounted_state_distribution(m, np.zeros(4)), m.mu)

    def test_power_series(self, rng):
        m = two_state()
        w = rng.uniform(-1, 1, 4)
        pi = policy_probs(m, w)
        p_pi = np.einsum("sa,sat->st", pi, m.transitions)
        term, total = m.mu.copy(), np.zeros(2)
        for _ in range(2000):
            total += term
            term = m.rho * term @ p_pi
        np.testing.assert_allclose(discounted_state_distribution(m, w), (1 - m.rho) * total, atol=1e-9)

    @given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
    def test_normalized_and_bounded_below(self, w):
        m = chain3()
        d = discounted_state_distribution(m, np.array(w))
        assert d.sum() == pytest.approx(1.0, abs=1e-10)
        assert np.all(d >= (1 - m.rho) * m.mu - 1e-12)


class TestExactGradient:
    def test_uniform_bandit(self):
        np.testing.assert_allclose(exact_gradient(bandit(), np.zeros(2)), [0.5, -0.5], atol=1e-14)

    def test_vanishes_near_greedy(self):
        assert np.linalg.norm(exact_gradient(bandit(), np.array([40.0, 0.0]))) < 1e-12

    @pytest.mark.parametrize("lam", [0.0, 0.1, 1.0])
    @pytest.mark.parametrize("factory", [bandit, chain3, two_state])
    def test_matches_finite_differences(self, factory, lam, rng):
        m = factory()
        for w in rng.uniform(-3, 3, (20, m.n_params)):
            g = exact_gradient(m, w, lam)
            assert np.linalg.norm(g - fd_grad(m, w, lam)) <= 1e-6 * (1 + np.linalg.norm(g))


class TestStochasticGradient:
    @pytest.mark.parametrize("baseline", ["none", "value"])
    @pytest.mark.parametrize("lam", [0.0, 0.1])
    @pytest.mark.parametrize("factory", [bandit, chain3])
    def test_unbiased(self, factory, lam, baseline):
        m = factory()
        w = np.linspace(-1, 1, m.n_params)
        n = 10**5
        gens = [substream(17, i) for i in range(n)]
        g = StochasticGradientSampler(m, lam, gens, baseline, chunk=64).sample(np.broadcast_to(w, (n, m.n_params)))
        z = (g.mean(0) - exact_gradient(m, w, lam)) / (g.std(0, ddof=1) / np.sqrt(n) + 1e-300)
        assert np.all(np.abs(z) <= 4)

    def test_single_action_is_exact(self):
        m = TabularMdp(np.ones((1, 1, 1)), np.array([[0.5]]), 0.7, np.ones(1))
        g = stochastic_gradient(m, np.zeros(1), 0.0, substream(0))
        np.testing.assert_array_equal(g, exact_gradient(m, np.zeros(1)))

    def test_reproducible(self):
        a = stochastic_gradient(chain3(), np.zeros(6), 0.1, substream(4))
        b = stochastic_gradient(chain3(), np.zeros(6), 0.1, substream(4))
        np.testing.assert_array_equal(a, b)

    def test_second_moment_bound(self):
        m = chain3()
        bound = 2 * (1 + m.rho) / (1 - m.rho) ** 4
        n = 20000
        for k, w in enumerate(np.random.default_rng(5).uniform(-3, 3, (5, 6))):
            gens = [substream(100 + k, i) for i in range(n)]
            g = StochasticGradientSampler(m, 0.0, gens, chunk=64).sample(np.broadcast_to(w, (n, 6)))
            sq = np.sum(g**2, axis=1)
            assert np.isfinite(sq).all()
            assert sq.mean() <= bound

    def test_bad_baseline(self):
        with pytest.raises(ValueError):
            StochasticGradientSampler(bandit(), 0.0, [substream(0)], "critic")


class TestRewardGap:
    def test_bandit(self):
        gap = reward_gap(bandit())
        assert gap.delta[0] == pytest.approx(1.0)
        assert gap.best_action[0] == 0 and not gap.degenerate

    def test_identical_actions(self):
        m = TabularMdp(np.ones((1, 2, 1)), np.array([[0.3, 0.3]]), 0.5, np.ones(1))
        gap = reward_gap(m)
        assert gap.degenerate and gap.best_action[0] == 0

    def test_no_discount(self):
        m = TabularMdp(np.ones((1, 3, 1)), np.array([[0.2, 0.9, 0.5]]), 0.0, np.ones(1))
        assert reward_gap(m).delta[0] == pytest.approx(0.4)

    def test_single_action(self):
        m = TabularMdp(np.ones((1, 1, 1)), np.array([[0.5]]), 0.5, np.ones(1))
        assert reward_gap(m).delta[0] == np.inf


class TestPlConstant:
    def test_bandit_uniform(self):
        chk = pl_constant(bandit(), np.zeros(2), 0.0)
        assert chk.c_value == pytest.approx(0.25)
        assert chk.inequality_holds
        assert chk.grad_norm == pytest.approx(np.sqrt(0.5))
        assert pl_constant(bandit(), np.zeros(2), 0.0, paper_scaling=True).c_value == pytest.approx(1.0)

    def test_vanishing_best_action(self):
        assert pl_constant(bandit(), np.array([-40.0, 0.0]), 0.0).c_value < 1e-15

    @pytest.mark.parametrize("lam", [0.0, 0.1])
    @pytest.mark.parametrize("factory", [bandit, chain3])
    def test_random_sweep(self, factory, lam, rng):
        m = factory()
        for w in rng.uniform(-3, 3, (300, m.n_params)):
            chk = pl_constant(m, w, lam)
            assert chk.inequality_holds
            assert chk.exponent == (1.0 if lam == 0 else 0.5)

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            pl_constant(bandit(), np.zeros(2), -0.1)


class TestLocalRadius:
    def test_bandit_unregularized(self):
        assert local_radius(bandit(), 0.0, 0.5, paper_scaling=True) == pytest.approx((0.5, 1.0))
        assert local_radius(bandit(), 0.0, 0.5) == pytest.approx((0.5, 0.25))

    def test_regularized_single_state(self):
        r, c = local_radius(bandit(), 1.0, 0.5)
        assert r == pytest.approx(0.25 * np.exp(-4) / (2 * np.log(2)), rel=1e-12)
        assert r == pytest.approx(3.303e-3, rel=1e-3)
        assert c > 0

    def test_exact_min_policy_is_larger(self):
        r0, c0 = local_radius(chain3(), 0.1, 0.5)
        r1, c1 = local_radius(chain3(), 0.1, 0.5, exact_min_policy=True)
        assert r1 > r0 and c1 == c0

    def test_alpha_limits(self):
        r, c = local_radius(bandit(), 0.0, 1 - 1e-9)
        assert r < 1e-8
        assert c == pytest.approx(0.25 / 0.5, rel=1e-8)
        for alpha in (0.0, 1.0):
            with pytest.raises(ValueError):
                local_radius(bandit(), 0.0, alpha)

    def test_degenerate_rejected(self):
        m = TabularMdp(np.ones((1, 2, 1)), np.array([[0.3, 0.3]]), 0.5, np.ones(1))
        with pytest.raises(ValueError):
            local_radius(m, 0.0, 0.5)


class TestPolicyGradient:
    def test_setup_starts_inside(self):
        for lam in (0.0, 0.1):
            region, w1 = sublevel_setup(close_bandit(), lam, 0.9)
            gap = optimal_value(close_bandit(), lam).value - evaluate_policy(close_bandit(), w1, lam).value
            assert gap == pytest.approx(region.epsilon / 4, rel=1e-9)

    def test_short_run(self):
        m = close_bandit()
        region, w1 = sublevel_setup(m, 0.1, 0.9)
        run = run_policy_gradient(m, 0.1, StepSchedule(0.3, 2 / 3), w1, 500, 8, 0, region)
        assert run.gaps.shape == (8, len(run.n))
        assert np.all(run.gaps > -1e-12)
        for rep, s in zip(run.stay_reports(), run.stayed):
            assert rep.stayed == s

    def test_runs_independent_of_grouping(self):
        m = chain3()
        sched = StepSchedule(0.5, 2 / 3)
        w1 = np.zeros(6)
        full = run_policy_gradient(m, 0.1, sched, w1, 200, 5, 3)
        part = run_policy_gradient(m, 0.1, sched, w1, 200, base_seed=3, run_indices=[2, 4])
        np.testing.assert_array_equal(part.gaps, full.gaps[[2, 4]])
