import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vqueue import estimators as est
from vqueue._backend import kernels
from vqueue.intensity import IntensityExpr, IntensityField, lyapunov_text, truncate_text
from vqueue.rng import SeedSpec
from vqueue.simulate import collect_cycles
from vqueue.state import StateX

from conftest import heavy_tail_field, mm1_field, step_field


@pytest.fixture(scope="module")
def mm1_cycles():
    return collect_cycles(mm1_field(), 0, 20000, ("n",), SeedSpec(31))


def test_tv_examples():
    assert est.tv_marginal([0.2, 0.8], [0.2, 0.8]) == 0.0
    assert est.tv_marginal([1.0], [0.0, 1.0]) == 1.0
    assert est.tv_marginal([0.5, 0.5], [0.75, 0.25]) == 0.25


def test_tv_requires_normalised_input():
    with pytest.raises(ValueError):
        est.tv_marginal([0.5, 0.4], [1.0])
    with pytest.raises(ValueError):
        est.tv_marginal([1.5, -0.5], [1.0])


histograms = st.lists(st.floats(0, 1), min_size=1, max_size=12).filter(lambda v: sum(v) > 1e-3).map(
    lambda v: list(np.asarray(v) / np.sum(v)))


@settings(max_examples=200, deadline=None)
@given(histograms, histograms, histograms)
def test_tv_is_a_metric(p, q, r):
    d = est.tv_marginal
    assert 0.0 <= d(p, q) <= 1.0
    assert d(p, q) == pytest.approx(d(q, p), abs=1e-15)
    assert d(p, p) == 0.0
    assert d(p, r) <= d(p, q) + d(q, r) + 1e-12
    if d(p, q) == 0.0:
        n = max(len(p), len(q))
        assert np.allclose(np.pad(p, (0, n - len(p))), np.pad(q, (0, n - len(q))), atol=1e-15)


@given(st.floats(-1e6, 1e6), st.floats(0, 1e3), st.integers(1, 10**6))
def test_estimate_ci_invariants(v, se, n):
    e = est.EstimateCI.normal(v, se, n)
    assert e.ci_low <= e.value <= e.ci_high and e.std_error >= 0
    assert set(e.to_dict()) == {"value", "std_error", "ci_low", "ci_high", "n_samples"}


def test_availability_partition_is_exact(mm1_cycles):
    total = math.fsum(est.availability_factor(mm1_cycles, m).value for m in range(mm1_cycles.levels))
    total += est.ratio_estimate(mm1_cycles.occupation[:, -1], mm1_cycles.lengths).value
    assert total == pytest.approx(1.0, abs=1e-12)


def test_ratio_invariant_under_reordering(mm1_cycles):
    perm = np.random.default_rng(0).permutation(len(mm1_cycles))
    shuffled = mm1_cycles.take(perm)
    for m in range(4):
        assert est.availability_factor(shuffled, m) == est.availability_factor(mm1_cycles, m)
    assert est.stationary_functional(shuffled, "n") == est.stationary_functional(mm1_cycles, "n")


def test_functional_examples(mm1_cycles):
    assert est.stationary_functional(mm1_cycles, "1").value == 1.0
    idle = est.stationary_functional(mm1_cycles, "if_gt(n, 0.5, 0, 1)")
    assert idle.value == est.availability_factor(mm1_cycles, 0).value
    mean_n = est.stationary_functional(mm1_cycles, "n")
    assert abs(mean_n.value - 1.0) <= 3 * mean_n.std_error


def test_insufficient_cycles(mm1_cycles):
    with pytest.raises(est.InsufficientCyclesError):
        est.availability_factor(mm1_cycles.take(np.arange(50)), 0)
    with pytest.raises(ValueError):
        est.availability_factor(mm1_cycles, mm1_cycles.levels)


def test_ratio_estimate_matches_textbook_delta_method():
    rng = np.random.default_rng(1)
    den = rng.exponential(size=500)
    num = den * rng.uniform(size=500)
    e = est.ratio_estimate(num, den)
    r = num.sum() / den.sum()
    se = np.sqrt(np.var(num - r * den, ddof=1) / 500) / den.mean()
    assert e.value == pytest.approx(r, rel=1e-13)
    assert e.std_error == pytest.approx(se, rel=1e-10)


def test_hitting_experiment_basics():
    f = mm1_field()
    tab = est.hitting_moment_experiment(f, [(0, 0, 0), (1, 0, 0)], 1, 2, 20000, SeedSpec(4))
    assert tab.rows[0].moment.value == 0.0 and tab.rows[0].ratio == 0.0
    row = tab.rows[1]
    assert abs(row.moment.value - 1.0) <= 3 * row.moment.std_error
    assert row.lyapunov == 4.0
    assert tab.to_dict()["max_ratio"] == tab.max_ratio
    with pytest.raises(ValueError):
        est.hitting_moment_experiment(f, [(1, 0, 0)], 2, 2, 10, SeedSpec(4))


def test_hitting_experiment_censoring():
    f = IntensityField.from_strings("1", "1", "1", 1, 1)
    with pytest.raises(est.CensoringError):
        est.hitting_moment_experiment(f, [(5, 0, 0)], 1, 2, 2000, SeedSpec(5), cap=10.0)


def _pathwise(f, text, s0=(1, 0.0, 0.0), t=5.0, count=500):
    prog = IntensityExpr.parse(text, allow_time=True).program
    res, _ = kernels.dynkin(f.kernel_model, prog, *s0, t, count, SeedSpec(6).bit_generator())
    return res


@pytest.mark.parametrize("f", [mm1_field(), heavy_tail_field(), step_field()])
def test_dynkin_constant_is_zero_pathwise(f):
    assert np.all(_pathwise(f, "3.5") == 0.0)


def test_dynkin_pure_transport_is_zero_pathwise():
    f = IntensityField.from_strings("0", "0", "1", 1, 1)
    res = _pathwise(f, "x + y", s0=(2, 0.25, 1.0))
    assert np.max(np.abs(res)) <= 1e-12


def test_dynkin_time_only_is_zero_pathwise():
    res = _pathwise(mm1_field(), "(1 + t)")
    assert np.max(np.abs(res)) <= 1e-12


def test_dynkin_residual_small_sample():
    fn = truncate_text(lyapunov_text(1))
    r = est.dynkin_residual(mm1_field(), fn, StateX(1, 0, 0), 5.0, 20000, SeedSpec(7))
    assert abs(r.value) <= 3 * r.std_error


def test_dynkin_residual_rejects_time_dependence():
    with pytest.raises(ValueError):
        est.dynkin_residual(mm1_field(), "(1 + t) * n", StateX(1, 0, 0), 1.0, 10, SeedSpec(1))
    r = est.dynkin_residual_time(mm1_field(), "(1 + t)", StateX(1, 0, 0), 1.0, 100, SeedSpec(1))
    assert abs(r.value) <= 1e-12


def test_dynkin_report_scale():
    rep = est.dynkin_report(mm1_field(), "n + 1", StateX(3, 0, 0), 1.0, 2000, SeedSpec(2))
    assert rep.scale >= 4.0
    assert rep.to_dict()["relative_se"] == rep.relative_se


@pytest.fixture(scope="module")
def heavy_reference():
    return est.stationary_reference(heavy_tail_field(), 5000, SeedSpec(8))


def test_reference_histogram_is_normalised(heavy_reference):
    h = heavy_reference.histogram
    assert h.sum() == pytest.approx(1.0, abs=1e-12)
    b = heavy_reference.bootstrap(np.random.default_rng(0))
    assert b.sum() == pytest.approx(1.0, abs=1e-12)


def test_convergence_small(heavy_reference):
    curve = est.convergence_experiment(heavy_tail_field(), StateX(5, 0, 0), [0.5, 1, 2, 4, 8], 4000,
                                       SeedSpec(9), heavy_reference, bootstrap=50)
    assert np.all((curve.tv_estimates >= 0) & (curve.tv_estimates <= 1))
    assert curve.tv_estimates[0] > curve.noise_band
    assert curve.fit_exponent is not None and curve.fit_exponent < 0
    d = curve.to_dict()
    assert "not identified" in d["note"]


def test_convergence_uninformative_grid(heavy_reference):
    with pytest.raises(est.UninformativeGridError):
        est.convergence_experiment(heavy_tail_field(), "stationary", [1, 2], 2000, SeedSpec(10),
                                   heavy_reference, bootstrap=30, stationary_warmup=20)
    with pytest.raises(ValueError):
        est.convergence_experiment(heavy_tail_field(), StateX(1, 0, 0), [2, 1], 10, SeedSpec(10),
                                   heavy_reference)


def test_jump_probabilities_small():
    rep = est.jump_probability_experiment(step_field(), StateX(1, 0.46, 0), [0.1, 0.05], 20000,
                                          SeedSpec(11))
    assert [r.delta for r in rep.rows] == [0.1, 0.05]
    for r in rep.rows:
        assert r.none_ok
        assert r.p_none + r.p_up_only + r.p_down_only + r.p_two_plus == pytest.approx(1.0)
    assert len(rep.two_plus_ratios) == 1
