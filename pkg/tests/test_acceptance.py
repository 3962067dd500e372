"""Acceptance suite: one test per criterion, one printed pass/fail line each.

Run with `python3 -m pytest tests/test_acceptance.py -v -s` to see the
criterion lines on passing runs too (pytest hides stdout otherwise).
Every stochastic criterion uses a frozen seed that was verified to pass
before being written down here; the thresholds themselves leave slack, so
these are not knife-edge seeds.
"""

import math
import time

import numpy as np
from scipy import stats

from reshuffle_opt import (
    IdxError,
    RngStream,
    RunConfig,
    ScheduleParams,
    classify,
    compare_rr_sgd,
    compute_alpha_sc,
    compute_variance_constants,
    escape_demo,
    gradient_error_certificate,
    make_logistic,
    make_mean_quadratic,
    make_quartic_saddle,
    parse_idx_images,
    parse_idx_labels,
    partial_sum_tail_sweep,
    run_experiment,
    run_rr,
    run_rr_sc,
    run_sgd,
    sample_permutations,
    serialize_idx_images,
    serialize_idx_labels,
    solve_T_sc,
)


def _report(number, ok, detail):
    tag = "PASS" if ok else "FAIL"
    print(f"[{tag}] criterion {number:02d}: {detail}")
    assert ok, f"criterion {number:02d}: {detail}"


def _logistic_fixture():
    # 1-d logistic problem with symmetric +-2 features and all-positive
    # labels: the mean loss is minimized at 0 with value log 2 while every
    # component infimum is 0, so the variance constants are nontrivial.
    features = np.array([[2.0], [-2.0]] * 4)
    labels = np.ones(8)
    problem = make_logistic(features, labels)
    x0 = np.array([np.arctanh(0.2)])
    return problem, x0


def _logistic_sc_setup(eta, epsilon, delta):
    problem, x0 = _logistic_fixture()
    consts = compute_variance_constants(problem, x0)
    L = problem.lipschitz_gradient
    T_sc = solve_T_sc(problem.n, L, consts.A, consts.F, eta, epsilon, delta)
    alpha = compute_alpha_sc(
        problem.n, L, consts.A, consts.F, eta, epsilon, T_sc, delta
    )
    schedule = ScheduleParams(
        epsilon=epsilon, delta=delta, eta=eta, alpha=alpha, T_sc=T_sc
    )
    return problem, x0, schedule


def test_single_component_runs_match_gradient_descent():
    start = time.perf_counter()
    problem = make_mean_quadratic([0.7])
    x0 = np.array([-0.3])
    alpha, epochs = 0.1, 100

    reference = []
    x = x0.copy()
    for _ in range(epochs):
        x = x - alpha * problem.full_gradient(x)
        reference.append(x.copy())

    rr_trace = run_rr(
        problem, x0, ScheduleParams(alpha=alpha, T=epochs), RngStream(0, 0)
    )
    sc_schedule = ScheduleParams(
        epsilon=1e-12, delta=0.1, eta=0.5, alpha=alpha, T_sc=epochs
    )
    sc_trace, tau, _ = run_rr_sc(problem, x0, sc_schedule, RngStream(0, 1))
    sgd_trace = run_sgd(
        problem, x0, epochs, ScheduleParams(alpha=alpha), RngStream(0, 2)
    )

    worst = 0.0
    for trace in (rr_trace, sc_trace, sgd_trace):
        assert len(trace) == epochs
        for rec, ref in zip(trace, reference):
            worst = max(worst, float(np.abs(rec.x_end - ref).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and tau is None and elapsed < 1.0
    _report(1, ok, f"n=1 reduction, worst deviation {worst:.3e}, {elapsed:.2f}s")


def test_permutation_sampling_is_uniform():
    start = time.perf_counter()
    draws = 240000
    perms = sample_permutations(RngStream(123, 0), 4, draws)
    codes = (perms - 1) @ np.array([64, 16, 4, 1])
    counts = np.bincount(codes, minlength=256)
    observed = counts[counts > 0]
    expected = draws / 24
    stat = float(((observed - expected) ** 2 / expected).sum())
    pvalue = float(stats.chi2.sf(stat, 23))
    elapsed = time.perf_counter() - start
    ok = observed.size == 24 and pvalue >= 0.001 and elapsed < 5.0
    _report(
        2,
        ok,
        f"chi-square over 24 cells, stat {stat:.2f}, p={pvalue:.4f}, "
        f"{elapsed:.2f}s",
    )


def test_epoch_updates_telescope():
    start = time.perf_counter()
    problem, x0, schedule = _logistic_sc_setup(eta=0.5, epsilon=0.2, delta=0.1)
    worst = 0.0
    for trial in range(100):
        trace, _, _ = run_rr_sc(problem, x0, schedule, RngStream(9, trial))
        for rec in trace:
            predicted = rec.x_start - schedule.alpha * problem.n * rec.g
            scale = max(1.0, float(np.linalg.norm(rec.x_end)))
            resid = float(np.linalg.norm(rec.x_end - predicted)) / scale
            worst = max(worst, resid)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 30.0
    _report(3, ok, f"worst telescoping residual {worst:.3e}, {elapsed:.1f}s")


def test_partial_sum_tails_dominated_by_bound():
    start = time.perf_counter()
    vectors = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    grid = np.linspace(0.1, 2.0, 20)
    estimates = partial_sum_tail_sweep(vectors, 2, grid, 100000, RngStream(0, 0))
    dominated = all(e.exact_tail <= e.bound_value + 1e-15 for e in estimates)
    agree = all(
        abs(e.empirical_tail - e.exact_tail) <= e.wilson_halfwidth
        for e in estimates
    )
    elapsed = time.perf_counter() - start
    ok = dominated and agree and len(estimates) == 20 and elapsed < 10.0
    _report(
        4,
        ok,
        f"exact<=bound at 20/20 thresholds, MC within Wilson: {agree}, "
        f"{elapsed:.2f}s",
    )


def test_gradient_error_certificate_rarely_violated():
    start = time.perf_counter()
    quadratic = make_mean_quadratic([1.0, -1.0])
    quartic = make_quartic_saddle(4, bias_scale=0.1, seed=7)
    cases = [
        (quadratic, [np.array([0.0]), np.array([0.5]), np.array([-1.0])]),
        (
            quartic,
            [np.array([0.5, 0.5]), np.array([1.0, 0.0]), np.array([0.0, 1.0])],
        ),
    ]
    stream = 0
    worst = 0.0
    ok = True
    for problem, points in cases:
        for x in points:
            for delta in (0.05, 0.1):
                certs = gradient_error_certificate(
                    problem, x, delta, 10000, RngStream(4, stream)
                )
                stream += 1
                for est in certs:
                    worst = max(worst, est.empirical_tail)
                    if est.empirical_tail > delta + 3 * est.wilson_halfwidth:
                        ok = False
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 30.0
    _report(
        5,
        ok,
        f"worst violation frequency {worst:.4f} within delta+3 half-widths, "
        f"{elapsed:.1f}s",
    )


def test_mean_square_gradient_bound_holds_in_most_trials():
    start = time.perf_counter()
    config = RunConfig.from_mapping(
        {
            "algorithm": "rr",
            "trials": 100,
            "base_seed": 7,
            "epsilon": 0.1,
            "delta": 0.1,
            "x0": "0.5",
            "problem.kind": "mean_quadratic",
            "problem.anchors": "1;-1",
            "schedule.mode": "formula",
            "schedule.T": 100,
        }
    )
    report = run_experiment(config)
    entry = report["frequencies"]["grad_bound_satisfied"]
    elapsed = time.perf_counter() - start
    ok = entry["draws"] == 100 and entry["frequency"] >= 0.9 and elapsed < 10.0
    _report(
        6,
        ok,
        f"bound satisfied in {entry['count']}/{entry['draws']} trials "
        f"(wilson {entry['wilson_center']:.3f}+-{entry['wilson_halfwidth']:.3f}), "
        f"{elapsed:.1f}s",
    )


def test_stopping_rule_returns_epsilon_stationary_iterates():
    start = time.perf_counter()
    problem, x0, schedule = _logistic_sc_setup(eta=0.5, epsilon=0.05, delta=0.1)
    successes = 0
    for trial in range(100):
        _, tau, x_tau = run_rr_sc(
            problem,
            x0,
            schedule,
            RngStream(0, trial),
            full_grad_every=0,
            record_trace=False,
        )
        if tau is None or tau > schedule.T_sc - 1:
            continue
        if float(np.linalg.norm(problem.full_gradient(x_tau))) <= 0.05:
            successes += 1
    elapsed = time.perf_counter() - start
    ok = successes >= 95 and elapsed < 120.0
    _report(
        7,
        ok,
        f"{successes}/100 trials stopped early with grad norm <= 0.05, "
        f"{elapsed:.1f}s",
    )


def test_conservative_eta_avoids_false_negatives():
    start = time.perf_counter()
    eta = math.sqrt(27 / 8)
    epsilon = 0.05
    problem, x0, schedule = _logistic_sc_setup(eta=eta, epsilon=epsilon, delta=0.1)
    false_negatives = 0
    for trial in range(100):
        trace, _, _ = run_rr_sc(problem, x0, schedule, RngStream(42, trial))
        for rec in trace:
            g_norm = float(np.linalg.norm(rec.g))
            if rec.grad_norm_start <= epsilon and g_norm > eta * epsilon:
                false_negatives += 1
    elapsed = time.perf_counter() - start
    ok = false_negatives == 0 and elapsed < 120.0
    _report(
        8,
        ok,
        f"{false_negatives} epochs had grad norm <= eps without triggering, "
        f"{elapsed:.1f}s",
    )


def test_perturbed_runs_escape_the_saddle_plain_runs_do_not():
    start = time.perf_counter()
    control_moved, successes, details = escape_demo(50, 0)
    elapsed = time.perf_counter() - start
    ok = (
        control_moved == 0.0
        and successes >= 45
        and len(details) == 50
        and elapsed < 300.0
    )
    _report(
        9,
        ok,
        f"control displacement {control_moved!r}, escapes {successes}/50, "
        f"{elapsed:.1f}s",
    )


def test_epoch_error_certificate_violation_rate():
    start = time.perf_counter()
    config = RunConfig.from_mapping(
        {
            "algorithm": "rr-sc",
            "trials": 100,
            "base_seed": 3,
            "epsilon": 0.1,
            "delta": 0.1,
            "x0": "0.5",
            "problem.kind": "mean_quadratic",
            "problem.anchors": "1;-1",
            "schedule.mode": "formula",
            "schedule.T": 300,
        }
    )
    report = run_experiment(config)
    cert = report["certificates"]["epoch_error"]
    elapsed = time.perf_counter() - start
    ok = (
        cert["epochs_checked"] >= 100
        and cert["violation_rate"] <= 0.12
        and elapsed < 30.0
    )
    _report(
        10,
        ok,
        f"pooled violation rate {cert['violation_rate']:.4f} over "
        f"{cert['epochs_checked']} epochs, {elapsed:.1f}s",
    )


def test_reshuffled_runs_concentrate_better_than_sgd():
    start = time.perf_counter()
    common = {
        "trials": 10,
        "base_seed": 11,
        "epsilon": 0.1,
        "delta": 0.1,
        "x0": "per-trial",
        "problem.kind": "blobs_mlp",
        "problem.layers": "20,50,50,10",
        "problem.batch": 8,
        "problem.classes": 10,
        "problem.per_class": 600,
        "problem.dim": 20,
        "problem.separation": 3.0,
        "problem.seed": 0,
        "problem.data_seed": 0,
        "schedule.mode": "decayed",
        "schedule.alpha": 0.05,
        "schedule.decay": 0.7,
        "schedule.T": 15,
    }
    left = RunConfig.from_mapping({**common, "algorithm": "rr"})
    right = RunConfig.from_mapping({**common, "algorithm": "sgd"})
    paired = compare_rr_sgd(left, right)["paired"]
    elapsed = time.perf_counter() - start
    ok = (
        paired["left_median"] <= paired["right_median"]
        and paired["left_iqr"] <= paired["right_iqr"]
        and len(paired["per_trial"]) == 10
        and elapsed < 600.0
    )
    _report(
        11,
        ok,
        f"median {paired['left_median']:.4f} vs {paired['right_median']:.4f}, "
        f"IQR {paired['left_iqr']:.4f} vs {paired['right_iqr']:.4f}, "
        f"{elapsed:.1f}s",
    )


def test_idx_round_trip_and_fuzzed_header_rejection():
    start = time.perf_counter()
    rng = RngStream(99, 0).generator
    pixels = rng.integers(0, 256, size=(4, 25)).astype(float) / 255.0
    labels = rng.integers(0, 10, size=4)
    image_blob = serialize_idx_images(pixels, 5, 5)
    label_blob = serialize_idx_labels(labels)
    decoded, rows, cols = parse_idx_images(image_blob)
    round_trip = (
        np.array_equal(decoded, pixels)
        and (rows, cols) == (5, 5)
        and np.array_equal(parse_idx_labels(label_blob), labels)
        and serialize_idx_images(decoded, rows, cols) == image_blob
        and serialize_idx_labels(parse_idx_labels(label_blob)) == label_blob
    )

    crashes = 0
    parsed = 0
    rejected = 0
    for i in range(100000):
        is_image = i % 2 == 0
        blob = bytearray(image_blob if is_image else label_blob)
        span = min(64, len(blob))
        for _ in range(int(rng.integers(1, 6))):
            blob[int(rng.integers(0, span))] = int(rng.integers(0, 256))
        try:
            if is_image:
                parse_idx_images(bytes(blob))
            else:
                parse_idx_labels(bytes(blob))
            parsed += 1
        except IdxError:
            rejected += 1
        except Exception:
            crashes += 1
    elapsed = time.perf_counter() - start
    ok = round_trip and crashes == 0 and parsed + rejected == 100000
    ok = ok and elapsed < 30.0
    _report(
        12,
        ok,
        f"round-trip exact, fuzz: {rejected} rejected / {parsed} parsed / "
        f"{crashes} crashes, {elapsed:.1f}s",
    )
