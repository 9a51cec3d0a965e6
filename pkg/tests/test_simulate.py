import dataclasses
import math

import numpy as np
import pytest
from scipy import stats

from vqueue import BoundViolationError, CycleCapExceeded, StallError
from vqueue._backend import compiled_kernels, python_kernels
from vqueue.intensity import IntensityExpr, IntensityField
from vqueue.rng import SeedSpec
from vqueue.simulate import (
    Censored,
    EventKind,
    Trajectory,
    collect_cycles,
    hitting_time_samples,
    hitting_time_tau0,
    next_event_inversion,
    next_event_thinning,
    sample_next_events,
    simulate_path,
)
from vqueue.state import StateX, flow, jump_down, jump_up

from conftest import heavy_tail_field, mm1_field, step_field


def field(lam, h, lam0, ls, hs):
    return IntensityField.from_strings(lam, h, lam0, ls, hs)


def test_competing_exponentials():
    dts, kinds = sample_next_events(mm1_field(), StateX(2, 0.3, 0.1), 10**5, SeedSpec(11))
    assert stats.kstest(dts, "expon", args=(0, 1 / 3)).pvalue > 0.001
    p = np.mean(kinds == EventKind.ARRIVAL)
    assert abs(p - 1 / 3) <= 3 * math.sqrt(2 / 9 / 10**5)


def test_zero_arrival_channel_gives_only_service_ends():
    _, kinds = sample_next_events(field("0", "2", "1", 1, 2), StateX(1, 0, 0), 2000, SeedSpec(1))
    assert np.all(kinds == EventKind.SERVICE_END)


def test_idle_state_has_only_arrivals():
    dts, kinds = sample_next_events(field("1", "0", "1", 1, 1), StateX(0, 0, 2.0), 20000, SeedSpec(2))
    assert np.all(kinds == EventKind.ARRIVAL)
    assert stats.kstest(dts, "expon").pvalue > 0.001


def test_single_thinning_draw_accepts_generators():
    f = mm1_field()
    s = StateX(1, 0, 0)
    a = next_event_thinning(f, s, SeedSpec(5))
    b = next_event_thinning(f, s, SeedSpec(5).generator())
    assert a == b and a[0] > 0


def test_inversion_examples():
    f = mm1_field()
    dt, _ = next_event_inversion(f, StateX(1, 0, 0), 1 - math.exp(-3))
    assert dt == pytest.approx(1.0, abs=1e-9)
    assert next_event_inversion(f, StateX(1, 0, 0), 0.0)[0] == 0.0
    assert next_event_inversion(f, StateX(1, 0, 0), 1e-12)[0] < 1e-11
    g = field("0", "2/(1+x)", "1", 1, 2)
    assert next_event_inversion(g, StateX(1, 0, 0), 0.75)[0] == pytest.approx(1.0, abs=1e-9)


def test_inversion_censors_defective_distributions():
    # hazard 0.5/(1+x) leaves mass (1+z)^-0.5 > 1e-3 at z = 1e6
    g = field("0", "0.5/(1+x)", "1", 1, 0.5)
    dt, kind = next_event_inversion(g, StateX(1, 0, 0), 0.9999)
    assert isinstance(dt, Censored) and kind is None


def test_inversion_kind_split():
    f = mm1_field()
    assert next_event_inversion(f, StateX(1, 0, 0), 0.5, 0.1)[1] is EventKind.ARRIVAL
    assert next_event_inversion(f, StateX(1, 0, 0), 0.5, 0.9)[1] is EventKind.SERVICE_END


def test_null_field_path():
    f = field("0", "0", "0", 1, 1)
    path = simulate_path(f, StateX(0, 0, 0), 10.0, SeedSpec(3))
    assert path.events == ()
    assert path.state_at(7.5) == StateX(0, 0, 7.5)


def test_long_run_arrival_count():
    path = simulate_path(mm1_field(), StateX(0, 0, 0), 1e4, SeedSpec(4))
    assert abs(path.arrivals - 1e4) <= 3 * 100
    assert abs(len(path.events) - 2e4) <= 600


def test_path_determinism_and_structure():
    f = step_field()
    a = simulate_path(f, StateX(2, 0.1, 0.0), 200.0, SeedSpec(9))
    b = simulate_path(f, StateX(2, 0.1, 0.0), 200.0, SeedSpec(9))
    assert a == b
    prev_t, prev = 0.0, a.initial
    for e in a.events:
        assert e.t > prev_t
        before = flow(prev, e.t - prev_t)
        want = jump_up(before) if e.kind is EventKind.ARRIVAL else jump_down(before)
        if e.kind is EventKind.SERVICE_END:
            assert prev.n > 0
        got = e.state_after
        assert got.n == want.n
        assert got.x == pytest.approx(want.x, rel=1e-12, abs=1e-12)
        assert got.y == pytest.approx(want.y, rel=1e-12, abs=1e-12)
        prev_t, prev = e.t, e.state_after


def test_inversion_path_matches_law_of_thinning():
    f = mm1_field()
    thin = [simulate_path(f, StateX(1, 0, 0), 5.0, SeedSpec(20, i)).arrivals for i in range(400)]
    inv = [simulate_path(f, StateX(1, 0, 0), 5.0, SeedSpec(21, i), sampler="inversion").arrivals
           for i in range(400)]
    assert stats.mannwhitneyu(thin, inv).pvalue > 0.001


def test_event_counts_do_not_explode():
    f = heavy_tail_field()
    counts = [len(simulate_path(f, StateX(3, 0, 0), 50.0, SeedSpec(7, i)).events) for i in range(200)]
    assert np.mean(counts) <= f.bound * 50


def test_csv_round_trip(tmp_path):
    path = simulate_path(mm1_field(), StateX(1, 0, 0), 20.0, SeedSpec(8))
    out = tmp_path / "path.csv"
    path.to_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "t,kind,n,x,y"
    assert lines[1].split(",")[1] == "Start"
    back = Trajectory.read_csv(out, 20.0)
    assert len(back.events) == len(path.events)
    for a, b in zip(back.events, path.events):
        assert a.kind == b.kind and a.state_after.n == b.state_after.n
        assert a.t == pytest.approx(b.t, rel=1e-11)


def test_trajectory_rejects_unordered_events():
    path = simulate_path(mm1_field(), StateX(1, 0, 0), 20.0, SeedSpec(8))
    with pytest.raises(ValueError):
        Trajectory(path.initial, tuple(reversed(path.events)), 20.0)


def test_hitting_time_examples():
    assert hitting_time_tau0(mm1_field(), StateX(0, 0, 3), SeedSpec(1)) == 0.0
    taus, cens = hitting_time_samples(field("0", "2", "1", 1, 2), StateX(1, 0, 0), 10**5, SeedSpec(2))
    assert not cens.any()
    assert abs(taus.mean() - 0.5) <= 3 * taus.std(ddof=1) / math.sqrt(len(taus))


def test_hitting_time_censoring():
    f = field("1", "1", "1", 1, 1)  # critical load: heavy-tailed busy periods
    taus, cens = hitting_time_samples(f, StateX(1, 0, 0), 2000, SeedSpec(3), cap=5.0)
    assert cens.any() and np.all(taus[cens] == 5.0)
    r = hitting_time_tau0(f, StateX(30, 0, 0), SeedSpec(4), cap=1.0)
    assert r == Censored(1.0)


def test_cycle_examples():
    cs = collect_cycles(mm1_field(), 5, 10**5, ("n",), SeedSpec(12))
    lengths = cs.lengths
    se = lengths.std(ddof=1) / math.sqrt(len(lengths))
    assert abs(lengths.mean() - 2.0) <= 3 * se
    r = np.corrcoef(lengths[:-1], lengths[1:])[0, 1]
    assert abs(r) < 3 / math.sqrt(len(lengths))
    idle = cs.integral_of("if_gt(n, 0.5, 0, 1)")
    assert np.array_equal(idle, cs.occupation[:, 0])
    assert np.allclose(cs.occupation.sum(axis=1), lengths, rtol=1e-12)
    assert np.all(lengths > 0)


def test_cycle_records():
    cs = collect_cycles(mm1_field(), 0, 10, ("n", "x + y"), SeedSpec(1))
    c = cs[3]
    assert c.length == pytest.approx(cs.lengths[3])
    assert set(c.integrals) == {"n", "x + y"}
    assert len(cs[2:5]) == 3
    with pytest.raises(KeyError):
        cs.integral_of("x")


def test_cycle_cap_reports_instability():
    with pytest.raises(CycleCapExceeded):
        collect_cycles(field("3", "1", "3", 3, 1), 0, 10, (), SeedSpec(1), max_cycle_length=1e3)


def test_cycles_need_idle_arrivals():
    with pytest.raises(ValueError):
        collect_cycles(field("1", "2", "0", 1, 2), 0, 10, (), SeedSpec(1))


def test_understated_bound_is_detected():
    f = field("3", "2", "1", 1, 2)
    with pytest.raises(BoundViolationError):
        sample_next_events(f, StateX(1, 0, 0), 1000, SeedSpec(1))


def test_stall_guard():
    from vqueue._backend import kernels

    f = field("0", "0", "1", 1, 1)
    km = dataclasses.replace(f.kernel_model, max_proposals=1000)
    with pytest.raises(StallError):
        kernels.next_events(km, 1, 0.0, 0.0, 1, SeedSpec(1).bit_generator())


def test_results_independent_of_jobs():
    f = heavy_tail_field()
    a = hitting_time_samples(f, StateX(3, 0, 0), 10000, SeedSpec(5), jobs=1)
    b = hitting_time_samples(f, StateX(3, 0, 0), 10000, SeedSpec(5), jobs=4)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@pytest.mark.skipif(compiled_kernels is None, reason="extension not built")
def test_backends_agree_bit_for_bit():
    f = step_field()
    km = f.kernel_model
    prog = IntensityExpr.parse("1000.0 * (1 - exp(-((1 + t) * (n + 1 + x + y)^2) / 1000.0))",
                               allow_time=True).program
    jobs = [
        lambda k, bg: k.next_events(km, 1, 0.2, 0.0, 300, bg),
        lambda k, bg: k.simulate_events(km, 2, 0.4, 0.0, 30.0, bg, 10**6),
        lambda k, bg: k.hitting_times(km, 3, 0.0, 0.0, 1e6, 50, bg),
        lambda k, bg: k.n_at_time(km, 3, 0.0, 0.0, 4.0, 50, bg),
        lambda k, bg: k.jump_counts(km, 1, 0.45, 0.0, 0.1, 200, bg),
        lambda k, bg: k.cycles(km, 2, 30, 16, [IntensityExpr.parse("n*x").program], 1e6, bg),
        lambda k, bg: k.dynkin(km, prog, 1, 0.0, 0.0, 3.0, 20, bg),
    ]
    for i, job in enumerate(jobs):
        a = job(compiled_kernels, SeedSpec(99, i).bit_generator())
        b = job(python_kernels, SeedSpec(99, i).bit_generator())
        a = a if isinstance(a, tuple) else (a,)
        b = b if isinstance(b, tuple) else (b,)
        for x, y in zip(a, b):
            assert np.array_equal(np.asarray(x), np.asarray(y)), f"kernel {i} differs"


def test_seed_streams_differ():
    a = SeedSpec(1, 0).generator().random(4)
    b = SeedSpec(1, 1).generator().random(4)
    assert not np.array_equal(a, b)
    assert SeedSpec(1).spawn("x", 2) == SeedSpec(1).spawn("x", 2)
    assert SeedSpec(1).spawn("x", 2) != SeedSpec(1).spawn("x", 3)
    with pytest.raises(ValueError):
        SeedSpec(-1)


def test_pure_python_backend_can_be_forced():
    import os
    import subprocess
    import sys

    env = dict(os.environ, VQUEUE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import vqueue; print(vqueue.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
