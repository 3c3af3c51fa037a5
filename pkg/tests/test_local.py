import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plsgd.local import (
    BallRegion,
    InvalidRegionError,
    RunRecord,
    StayReport,
    SublevelRegion,
    choose_epsilon,
    compute_s,
    double_well_setup,
    jump_budget,
    proof_statistics,
    region_contains,
    required_budget,
    run_with_tracking,
    track_ensemble,
)
from plsgd.objectives import double_well, quadratic
from plsgd.optimizers import Method, run_ensemble
from plsgd.oracle import NoiseModel
from plsgd.schedules import StepSchedule


@pytest.fixture(scope="module")
def dw():
    return double_well()


@pytest.fixture(scope="module")
def setup():
    return double_well_setup()


class TestRegions:
    def test_ball_membership(self, dw):
        region = BallRegion(dw.minima, 0.5)
        assert region_contains(region, dw, [1.1])
        assert region_contains(region, dw, [-0.9])
        assert not region_contains(region, dw, [0.0])
        np.testing.assert_array_equal(region_contains(region, dw, [[1.1], [0.0], [1.3]]), [True, False, False])

    def test_inner_region(self, dw):
        region = BallRegion(dw.minima, 0.5, 0.0, 0.04)
        assert region_contains(region, dw, [1.05], inner=True)
        assert not region_contains(region, dw, [1.2], inner=True)
        with pytest.raises(InvalidRegionError):
            region_contains(BallRegion(dw.minima, 0.5), dw, [1.0], inner=True)

    def test_sublevel_examples(self):
        q = quadratic(1)
        region = SublevelRegion(0.0, 1.0, 0.04)
        assert region_contains(region, q, [np.sqrt(0.02)], inner=True)
        assert region_contains(region, q, [np.sqrt(2 * 0.28)])
        assert not region_contains(region, q, [np.sqrt(2 * 0.281)])

    def test_sublevel_requires_relation(self):
        with pytest.raises(InvalidRegionError):
            SublevelRegion(0.0, 0.28, 0.04)
        SublevelRegion(0.0, 0.2801, 0.04)

    def test_ball_validation(self):
        with pytest.raises(InvalidRegionError):
            BallRegion([[0.0]], 0.0)
        with pytest.raises(InvalidRegionError):
            BallRegion([[0.0]], 1.0, epsilon=0.0)

    def test_dimension_check(self, dw):
        with pytest.raises(ValueError):
            region_contains(BallRegion(dw.minima, 0.5), dw, [1.0, 2.0])


class TestShell:
    def test_double_well(self, dw):
        assert compute_s(dw, BallRegion(dw.minima, 0.5)) == pytest.approx((0.75**2 - 1) ** 2, rel=1e-12)

    def test_quadratic(self):
        assert compute_s(quadratic(1), BallRegion([[0.0]], 1.0)) == pytest.approx(0.125, rel=1e-12)

    def test_second_well_rejected(self, dw):
        with pytest.raises(InvalidRegionError):
            compute_s(dw, BallRegion([[1.0]], 4.0))

    def test_needs_ball(self, dw):
        with pytest.raises(TypeError):
            compute_s(dw, SublevelRegion(0.0, 1.0, 0.01))


class TestEpsilon:
    @given(st.floats(1e-8, 10.0))
    def test_strict_and_near_maximal(self, s):
        eps = choose_epsilon(s)
        assert 2 * eps + np.sqrt(eps) < s
        big = 2 * eps
        assert 2 * big + np.sqrt(big) == pytest.approx(s, rel=1e-9)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            choose_epsilon(0.0)


class TestBudget:
    def test_example(self):
        assert required_budget(0.1, 0.04, 1.0, 1.0) == pytest.approx(0.004 / 6, rel=1e-14)

    def test_linear_in_delta(self):
        assert required_budget(0.999, 0.1, 2, 1) / required_budget(0.4995, 0.1, 2, 1) == pytest.approx(2.0)

    def test_noise_free(self):
        assert required_budget(0.2, 0.1, 1.0, 0.0) == pytest.approx(0.01)

    def test_monotone_grid(self):
        d = np.linspace(0.05, 0.95, 10)
        assert np.all(np.diff([required_budget(x, 0.1, 2, 1) for x in d]) > 0)
        assert np.all(np.diff([required_budget(0.1, x, 2, 1) for x in d]) > 0)
        assert np.all(np.diff([required_budget(0.1, 0.1, x + 0.5, 1) for x in d]) < 0)
        assert np.all(np.diff([required_budget(0.1, 0.1, 2, x) for x in d]) < 0)

    def test_validation(self):
        with pytest.raises(ValueError):
            required_budget(1.0, 0.1, 1, 1)
        with pytest.raises(ValueError):
            required_budget(0.5, 0.0, 1, 1)

    def test_jump_budget(self):
        assert jump_budget(0.1, 1.0, 0.5) == pytest.approx(0.1 * 0.25 / 8)
        assert jump_budget(0.1, 0.0, 0.5) == np.inf


class TestSetup:
    def test_double_well_numbers(self, setup):
        assert setup.s == pytest.approx(0.19140625, rel=1e-12)
        assert 2 * setup.epsilon + np.sqrt(setup.epsilon) < setup.s
        assert setup.c_noise == 1.0
        assert setup.lipschitz_value == pytest.approx(2.8125, rel=1e-6)
        assert setup.sched.theta == 0.75
        g1 = setup.sched.gamma1
        from scipy.special import zeta

        assert g1**2 * zeta(1.5) < setup.budget
        assert g1**2 * zeta(1.5) == pytest.approx(setup.budget, rel=1e-8)

    def test_start_in_inner_region(self, setup):
        assert region_contains(setup.region, setup.obj, setup.x1, inner=True)
        assert setup.obj.gap(setup.x1) == pytest.approx(setup.epsilon / 4, rel=1e-12)


class TestStayReport:
    def test_invariant(self):
        StayReport(True)
        StayReport(False, 7)
        with pytest.raises(ValueError):
            StayReport(True, 3)
        with pytest.raises(ValueError):
            StayReport(False)


class TestTracking:
    def test_noise_free_descent_stays(self, setup):
        t, stay = run_with_tracking(setup.obj, NoiseModel(), StepSchedule(0.01, 0.75), setup.region, setup.x1, 2000)
        assert stay.stayed and stay.first_exit is None
        assert np.all(np.diff(t.gaps) <= 0)
        np.testing.assert_allclose(stay.r_statistic_path["m"], 0.0)

    def test_large_noise_exits(self, setup):
        tracked = track_ensemble(setup.obj, NoiseModel.gaussian(10.0), StepSchedule(0.05, 0.75), setup.region,
                                 setup.x1, 200, n_runs=100)
        assert tracked.exit_fraction > 0.9
        assert all(s.first_exit >= 2 for s in tracked.stays if not s.stayed)

    def test_start_outside_rejected(self, setup):
        with pytest.raises(ValueError):
            run_with_tracking(setup.obj, NoiseModel(), setup.sched, setup.region, [1.3], 10)

    def test_paths_match_plain_sgd(self, setup):
        tracked = track_ensemble(setup.obj, setup.noise, setup.sched, setup.region, setup.x1, 3000, 5, 7)
        plain = run_ensemble(setup.obj, setup.noise, Method.sgd(), setup.sched, 3000, 5, 7, x1=setup.x1)
        np.testing.assert_array_equal(tracked.ensemble.gaps, plain.gaps)

    def test_budget_compliant_runs(self, setup):
        tracked = track_ensemble(setup.obj, setup.noise, setup.sched, setup.region, setup.x1, 5000, 100, 3)
        assert tracked.lemma_violations == 0
        assert tracked.bound_violations == 0
        assert tracked.exit_fraction <= 0.1 + 3 * np.sqrt(0.09 / 100)


class TestProofStatistics:
    def _record(self, setup, noise, n=300, runs=3):
        ens = run_ensemble(setup.obj, noise, Method.sgd(), setup.sched, n, runs, 5, x1=setup.x1, record=True)
        return RunRecord(ens.paths["x"], ens.paths["v"])

    def test_noise_free_has_no_martingale(self, setup):
        rec = self._record(setup, NoiseModel())
        tr = proof_statistics(setup.obj, rec, setup.region, setup.epsilon, setup.sched, 0.5, setup.c, setup.lipschitz_grad)
        np.testing.assert_allclose(tr.m, 0.0)
        np.testing.assert_allclose(tr.r, tr.s)

    def test_first_step(self, setup):
        rec = self._record(setup, setup.noise)
        tr = proof_statistics(setup.obj, rec, setup.region, setup.epsilon, setup.sched, 0.5, setup.c,
                              setup.lipschitz_grad, checkpoints=[1, 2])
        g1 = setup.sched.gamma1
        expected = 0.5 * setup.lipschitz_grad * g1**2 * np.sum(rec.v[0] ** 2, axis=-1)
        np.testing.assert_allclose(tr.s[0], expected, rtol=1e-14)

    def test_martingale_recursion(self, setup):
        rec = self._record(setup, setup.noise, n=50, runs=1)
        ck = np.arange(1, 50)
        tr = proof_statistics(setup.obj, rec, setup.region, setup.epsilon, setup.sched, 0.5, setup.c,
                              setup.lipschitz_grad, checkpoints=ck)
        x, v = rec.x[:, 0, :], rec.v[:, 0, :]
        m = 0.0
        for n in ck:
            gam = setup.sched(n)
            g = setup.obj.grad(x[n - 1])
            xi = -float(g @ (v[n - 1] - g))
            m = (1 - gam * setup.c**2) * m + gam * xi
            assert tr.m[n - 1, 0] == pytest.approx(m, rel=1e-10, abs=1e-15)

    def test_matches_online_tracker(self, setup):
        rec = self._record(setup, setup.noise, n=400, runs=4)
        ck = [1, 10, 100, 399]
        tr = proof_statistics(setup.obj, rec, setup.region, setup.epsilon, setup.sched, 0.5, setup.c,
                              setup.lipschitz_grad, checkpoints=ck)
        tracked = track_ensemble(setup.obj, setup.noise, setup.sched, setup.region, setup.x1, 400, 4, 5, checkpoints=ck + [400])
        np.testing.assert_allclose(tr.r, tracked.trace.r, rtol=1e-12)
        np.testing.assert_array_equal(tr.in_omega, tracked.trace.in_omega)

    def test_weak_domination_variant_runs(self, setup):
        rec = self._record(setup, setup.noise)
        tr = proof_statistics(setup.obj, rec, setup.region, setup.epsilon, setup.sched, 0.75, 1.0, setup.lipschitz_grad)
        assert np.all(np.isfinite(tr.r))

    def test_missing_gradients(self, setup):
        with pytest.raises(ValueError):
            proof_statistics(setup.obj, RunRecord(np.zeros((3, 1, 1)), None), setup.region, setup.epsilon,
                             setup.sched, 0.5, setup.c, setup.lipschitz_grad)
