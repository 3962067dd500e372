import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reshuffle_opt import (
    ConfigurationError,
    EpochRecord,
    RngStream,
    ScheduleParams,
    bernstein_bound,
    empirical_partial_sum_tail,
    epoch_error_certificate,
    gradient_error_certificate,
    make_mean_quadratic,
    partial_sum_tail_sweep,
    run_rr,
    wilson_interval,
)

UNIT_CROSS = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


class TestWilsonInterval:
    def test_published_reference_values(self):
        # 95% Wilson bounds: 0/10 -> upper 0.2775, 5/10 -> [0.2366, 0.7634]
        center, halfwidth = wilson_interval(0, 10)
        assert center + halfwidth == pytest.approx(0.27753, abs=2e-4)
        assert center - halfwidth == pytest.approx(0.0, abs=1e-12)
        center, halfwidth = wilson_interval(5, 10)
        assert center == pytest.approx(0.5)
        assert halfwidth == pytest.approx(0.2634, abs=2e-4)

    def test_more_draws_shrink_the_interval(self):
        _, wide = wilson_interval(5, 10)
        _, narrow = wilson_interval(500, 1000)
        assert narrow < wide

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            wilson_interval(5, 0)
        with pytest.raises(ConfigurationError):
            wilson_interval(11, 10)


class TestBernsteinBound:
    def test_small_s_clamps_to_one(self):
        assert bernstein_bound(1e-9, 2, 4, 1.0, 1.0, 2.0) == 1.0

    def test_solved_threshold_meets_delta(self):
        # at s = 2b*log(4*d_tilde/delta) the tail bound drops below delta
        delta, d_tilde, b = 0.05, 2.0, 1.0
        s = 2.0 * b * math.log(4.0 * d_tilde / delta)
        assert bernstein_bound(s, 5, 10, b, b * b, d_tilde) <= delta

    def test_zero_variance_family(self):
        assert bernstein_bound(0.5, 2, 4, 0.0, 0.0, 2.0) == 0.0

    @settings(deadline=None, max_examples=60)
    @given(
        s=st.floats(0.01, 50.0),
        factor=st.floats(1.01, 10.0),
        b=st.floats(0.1, 5.0),
    )
    def test_monotone_decreasing_in_s(self, s, factor, b):
        small = bernstein_bound(s * factor, 2, 4, b, b * b, 2.0)
        large = bernstein_bound(s, 2, 4, b, b * b, 2.0)
        assert small <= large + 1e-15

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            bernstein_bound(1.0, 5, 4, 1.0, 1.0, 2.0)
        with pytest.raises(ConfigurationError):
            bernstein_bound(1.0, 2, 4, 1.0, 1.0, 0.5)
        with pytest.raises(ConfigurationError):
            bernstein_bound(0.0, 2, 4, 1.0, 1.0, 2.0)


class TestPartialSumTails:
    def test_zero_vectors_have_zero_tail(self):
        est = empirical_partial_sum_tail(
            np.zeros((4, 2)), 2, 0.5, 1000, RngStream(0, 0)
        )
        assert est.empirical_tail == 0.0
        assert est.exact_tail == 0.0
        assert est.bound_value == 0.0

    def test_unit_cross_exact_enumeration(self):
        # two draws from (+-e1, +-e2): the sum is 0 for the 8 opposite
        # ordered pairs and sqrt(2) for the other 16, so the tail at 1.0 is
        # 2/3 and the tail past sqrt(2) vanishes
        est = empirical_partial_sum_tail(
            UNIT_CROSS, 2, 1.0, 10**5, RngStream(1, 0)
        )
        assert est.exact_tail == pytest.approx(2.0 / 3.0)
        assert abs(est.empirical_tail - est.exact_tail) <= est.wilson_halfwidth
        high = empirical_partial_sum_tail(
            UNIT_CROSS, 2, 1.5, 1000, RngStream(1, 1)
        )
        assert high.exact_tail == 0.0
        assert high.empirical_tail == 0.0

    def test_sweep_shares_draws_and_is_monotone(self):
        grid = np.linspace(0.1, 2.0, 20)
        estimates = partial_sum_tail_sweep(
            UNIT_CROSS, 2, grid, 20000, RngStream(2, 0)
        )
        tails = [est.empirical_tail for est in estimates]
        assert tails == sorted(tails, reverse=True)
        for est in estimates:
            assert 0.0 <= est.empirical_tail <= 1.0
            assert est.bound_value >= 0.0
            assert est.mc_draws == 20000
            assert est.exact_tail <= est.bound_value + 1e-15

    def test_regenerations_agree_with_exact(self):
        # the Wilson interval should cover the exact tail in almost all
        # regenerations; demand 16/20 to keep the test stable
        hits = 0
        for k in range(20):
            est = empirical_partial_sum_tail(
                UNIT_CROSS, 2, 1.0, 2000, RngStream(3, k)
            )
            hits += int(abs(est.empirical_tail - est.exact_tail) <= est.wilson_halfwidth)
        assert hits >= 16

    def test_non_centered_input_rejected(self):
        with pytest.raises(ConfigurationError):
            empirical_partial_sum_tail(
                np.array([[1.0, 0.0], [1.0, 0.0]]), 1, 0.5, 100, RngStream(0, 0)
            )

    def test_m_out_of_range_rejected(self):
        with pytest.raises(ConfigurationError):
            empirical_partial_sum_tail(UNIT_CROSS, 5, 0.5, 100, RngStream(0, 0))


class TestGradientErrorCertificate:
    def test_hand_threshold_and_zero_violations(self):
        problem = make_mean_quadratic([1.0, -1.0])
        certs = gradient_error_certificate(
            problem, np.array([0.0]), 0.1, 10**4, RngStream(5, 0)
        )
        assert len(certs) == 2
        # A = 2, f - f_lower = 0 at the center, B = 1:
        # s^2 = 4*2*(0 + 1)*log(80)^2
        expected_s = math.sqrt(8.0) * math.log(80.0)
        for est in certs:
            assert est.threshold_s == pytest.approx(expected_s, rel=1e-12)
            assert est.empirical_tail == 0.0
            assert est.exact_tail == 0.0
            assert est.bound_value == 0.1

    def test_identical_components_never_violate(self):
        problem = make_mean_quadratic([1.0, 1.0])
        certs = gradient_error_certificate(
            problem, np.array([1.0]), 0.1, 1000, RngStream(6, 0)
        )
        for est in certs:
            assert est.threshold_s == 0.0
            assert est.empirical_tail == 0.0

    def test_threshold_grows_as_delta_shrinks(self):
        problem = make_mean_quadratic([1.0, -1.0])
        x = np.array([0.3])
        tight = gradient_error_certificate(problem, x, 0.01, 100, RngStream(7, 0))
        loose = gradient_error_certificate(problem, x, 0.5, 100, RngStream(7, 1))
        assert tight[0].threshold_s > loose[0].threshold_s

    def test_validation(self):
        problem = make_mean_quadratic([1.0, -1.0])
        with pytest.raises(ConfigurationError):
            gradient_error_certificate(problem, np.zeros(1), 1.5, 100, RngStream(0, 0))
        with pytest.raises(ConfigurationError):
            gradient_error_certificate(problem, np.zeros(1), 0.1, 0, RngStream(0, 0))


class TestEpochErrorCertificate:
    def test_single_component_never_violates(self):
        problem = make_mean_quadratic([0.5])
        schedule = ScheduleParams(alpha=0.2, T=10, delta=0.1)
        trace = run_rr(problem, np.zeros(1), schedule, RngStream(0, 0))
        report = epoch_error_certificate(trace, schedule, problem)
        assert report["epochs_checked"] == 10
        assert report["violations"] == 0
        assert report["violation_rate"] == 0.0
        assert report["per_epoch"] == [(t, False) for t in range(10)]

    def test_zero_step_record_passes(self):
        problem = make_mean_quadratic([1.0, -1.0])
        x = np.array([0.4])
        rec = EpochRecord(
            t=0,
            x_start=x,
            x_end=x,
            g=problem.full_gradient(x),
            f_start=problem.full_value(x),
            permutation_digest="0" * 16,
            step=0.0,
            e=np.zeros(1),
            grad_norm_start=float(np.linalg.norm(problem.full_gradient(x))),
        )
        report = epoch_error_certificate(
            [rec], ScheduleParams(delta=0.1), problem
        )
        assert report["violations"] == 0

    def test_skipped_epochs_are_counted(self):
        problem = make_mean_quadratic([1.0, -1.0])
        schedule = ScheduleParams(alpha=0.05, T=10, delta=0.1)
        trace = run_rr(
            problem, np.array([0.8]), schedule, RngStream(1, 0), full_grad_every=2
        )
        report = epoch_error_certificate(trace, schedule, problem)
        assert report["epochs_checked"] == 5
        assert report["epochs_skipped"] == 5

    def test_pooled_trials_stay_below_tolerance(self):
        problem = make_mean_quadratic([1.0, -1.0])
        schedule = ScheduleParams(alpha=0.01, T=50, delta=0.1)
        checked = 0
        violations = 0
        for trial in range(10):
            trace = run_rr(problem, np.array([0.5]), schedule, RngStream(8, trial))
            report = epoch_error_certificate(trace, schedule, problem)
            checked += report["epochs_checked"]
            violations += report["violations"]
        assert checked == 500
        assert violations / checked <= 0.12

    def test_oversized_step_rejected(self):
        problem = make_mean_quadratic([1.0, -1.0])
        schedule = ScheduleParams(alpha=1.0, T=1, delta=0.1)
        trace = run_rr(problem, np.array([0.1]), schedule, RngStream(0, 0))
        with pytest.raises(ConfigurationError):
            epoch_error_certificate(trace, schedule, problem)

    def test_empty_trace(self):
        problem = make_mean_quadratic([1.0, -1.0])
        report = epoch_error_certificate([], ScheduleParams(delta=0.1), problem)
        assert report["epochs_checked"] == 0
        assert report["violation_rate"] == 0.0
