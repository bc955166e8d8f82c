import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from plasticity.errors import UsageError
from plasticity.stats import (
    ScoreMatrix,
    best_over_variants,
    final_window_mean,
    iqm,
    norm_ratio_report,
    percent_improvement,
    stratified_bootstrap_ci,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)
samples = st.lists(finite, min_size=1, max_size=40)


def iqm_oracle(xs):
    """Trimmed mean on the 4x-replicated sample: every quartile boundary then
    falls between whole elements, which reproduces fractional trimming."""
    rep = np.sort(np.repeat(np.asarray(xs, dtype=float), 4))
    n = len(xs)
    return rep[n:3 * n].mean()


def test_iqm_examples():
    assert iqm([1, 2, 3, 4, 5, 6, 7, 8]) == 4.5
    assert iqm([0, 0, 0, 100]) == 0.0
    assert iqm([7.25] * 9) == 7.25
    assert iqm([3.0]) == 3.0
    # n=5: weights 0, .75, 1, .75, 0 of 2.5
    assert iqm([10, 1, 2, 3, 4]) == pytest.approx((0.75 * 2 + 3 + 0.75 * 4) / 2.5)
    with pytest.raises(UsageError):
        iqm([])


@given(samples)
def test_iqm_matches_replication_oracle(xs):
    assert iqm(xs) == pytest.approx(iqm_oracle(xs), rel=1e-9, abs=1e-6)


@given(samples, st.randoms(use_true_random=False))
def test_iqm_permutation_invariant(xs, r):
    ys = list(xs)
    r.shuffle(ys)
    assert iqm(ys) == pytest.approx(iqm(xs), rel=1e-12, abs=1e-9)


@given(samples, st.data())
def test_iqm_monotone(xs, data):
    i = data.draw(st.integers(0, len(xs) - 1))
    bump = data.draw(st.floats(0, 1e6))
    ys = list(xs)
    ys[i] += bump
    assert iqm(ys) >= iqm(xs) - 1e-9 * (1 + abs(iqm(xs)))


@given(samples)
def test_iqm_within_range(xs):
    tol = 1e-9 * (1 + max(abs(v) for v in xs))
    assert min(xs) - tol <= iqm(xs) <= max(xs) + tol


def test_ci_constant_matrix():
    sm = ScoreMatrix(np.full((6, 3), 2.5))
    assert stratified_bootstrap_ci(sm, n_boot=5000) == (2.5, 2.5)


def test_ci_deterministic_and_seeded():
    sm = ScoreMatrix(np.random.default_rng(0).standard_normal((8, 4)))
    a = stratified_bootstrap_ci(sm, seed=3)
    assert a == stratified_bootstrap_ci(sm, seed=3)
    assert a != stratified_bootstrap_ci(sm, seed=4)
    assert a[0] <= iqm(sm.values) <= a[1]


def test_ci_single_run_degenerate():
    sm = ScoreMatrix(np.array([[1.0, 4.0, 2.0]]))
    lo, hi = stratified_bootstrap_ci(sm)
    assert lo == hi == iqm([1.0, 4.0, 2.0])


def test_ci_resamples_within_tasks():
    # task columns with disjoint ranges: a stratified resample keeps every
    # column represented, so the mean statistic can never leave this band
    values = np.column_stack([np.linspace(0, 1, 5), np.linspace(100, 101, 5)])
    lo, hi = stratified_bootstrap_ci(ScoreMatrix(values), statistic=lambda s: s.mean(axis=(1, 2)), n_boot=2000)
    assert 50 <= lo <= hi <= 51


def test_ci_errors():
    with pytest.raises(UsageError):
        stratified_bootstrap_ci(ScoreMatrix([[1.0, 2.0]]), n_boot=50)
    with pytest.raises(UsageError):
        ScoreMatrix([[1.0, np.nan]])
    with pytest.raises(UsageError):
        ScoreMatrix(np.zeros((0, 2)))


@pytest.mark.parametrize("runs,tasks", [(10, 5), (20, 5)])
def test_ci_coverage(runs, tasks):
    # scores iid N(0, 1): the population IQM is 0 by symmetry
    rng = np.random.default_rng(2024)
    hits = 0
    for i in range(1000):
        lo, hi = stratified_bootstrap_ci(ScoreMatrix(rng.standard_normal((runs, tasks))), n_boot=1000, seed=i)
        hits += lo <= 0.0 <= hi
    assert abs(hits / 1000 - 0.95) <= 0.03


def test_percent_improvement():
    assert percent_improvement(120, 100) == 20
    assert percent_improvement(7, 7) == 0
    assert percent_improvement(50, -100) == 150
    with pytest.raises(UsageError):
        percent_improvement(1, 0)


@given(finite, finite.filter(lambda b: b > 1e-3))
def test_percent_improvement_sign(a, b):
    assert np.sign(percent_improvement(a, b)) == np.sign(a - b)


def test_final_window_mean():
    assert final_window_mean(list(range(20))) == 18.5
    assert final_window_mean([4.0]) == 4.0
    assert final_window_mean([1, 2, 3], fraction=0.5) == 2.5
    with pytest.raises(UsageError):
        final_window_mean([])


def test_best_over_variants_examples():
    single = {"a": {"t": [1.0, 2.0]}}
    assert best_over_variants(single) == {"t": 2.0}
    three = {"x": {"t": [3.0]}, "y": {"t": [5.0]}, "z": {"t": [4.0]}}
    assert best_over_variants(three) == {"t": 5.0}
    with pytest.raises(UsageError):
        best_over_variants({"x": {"t": [1.0]}, "y": {"u": [1.0]}})
    with pytest.raises(UsageError):
        best_over_variants({})


def test_best_over_variants_brute_force():
    rng = np.random.default_rng(0)
    grid = {v: {t: list(rng.standard_normal(30)) for t in range(4)} for v in ("a", "b", "c")}
    got = best_over_variants(grid)
    for t in range(4):
        brute = -np.inf
        for v in grid:
            brute = max(brute, np.mean(grid[v][t][-3:]))
        assert got[t] == brute


def scan_crossing(samples, factor):
    w0 = samples[0][1]
    for step, w in samples:
        if w > factor * w0:
            return step
    return None


def test_norm_ratio_examples():
    rep = norm_ratio_report({"flat": [(0, 2.0), (10, 2.0)], "grow": [(0, 2.0), (5, 5.0), (10, 7.0)]})
    assert rep["flat"]["ratio"] == 1.0 and not rep["flat"]["crossed"]
    assert rep["grow"]["ratio"] == 3.5
    assert rep["grow"]["crossed"] and rep["grow"]["crossing_step"] == 10
    with pytest.raises(UsageError):
        norm_ratio_report({"late": [(5, 1.0)]})


@settings(max_examples=200)
@given(st.lists(st.floats(0.1, 10.0), min_size=1, max_size=30))
def test_norm_crossing_matches_scan(norms):
    samples = [(10 * i, w) for i, w in enumerate(norms)]
    assume(samples)
    rep = norm_ratio_report({"r": samples})["r"]
    assert rep["crossing_step"] == scan_crossing(samples, 3.0)
    assert rep["ratio"] == norms[-1] / norms[0]


def test_iqm_small_n_weights_exhaustive():
    for n in range(1, 9):
        for perm in itertools.islice(itertools.permutations(range(n)), 50):
            assert iqm(perm) == pytest.approx(iqm_oracle(list(perm)))
