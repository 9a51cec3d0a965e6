import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from vqueue.oracles import (
    MM1Params,
    ServiceLaw,
    UnstableQueueError,
    hazard_of,
    mm1_busy_period_mean,
    mm1_mean_number,
    mm1_stationary,
    pk_mean_number,
)


def test_mm1_stationary_examples():
    p = MM1Params(1, 2)
    assert mm1_stationary(p, 0) == 0.5
    assert mm1_stationary(p, 3) == 0.0625
    assert mm1_stationary(MM1Params(1e-12, 2), 0) == pytest.approx(1.0)


def test_mm1_busy_period_examples():
    assert mm1_busy_period_mean(MM1Params(1, 2)) == 1.0
    assert mm1_busy_period_mean(MM1Params(0, 2)) == 0.5
    assert mm1_busy_period_mean(MM1Params(1.9, 2)) == pytest.approx(10.0, rel=1e-12)


def test_instability_is_rejected():
    with pytest.raises(UnstableQueueError):
        mm1_stationary(MM1Params(2, 2), 0)
    with pytest.raises(UnstableQueueError):
        mm1_busy_period_mean(MM1Params(3, 2))
    with pytest.raises(UnstableQueueError):
        pk_mean_number(1.0, ServiceLaw.pareto_hazard(1.0))
    with pytest.raises(ValueError):
        MM1Params(1, 0)


def test_pk_examples():
    assert pk_mean_number(1.0, ServiceLaw.exponential(2.0)) == 1.0
    assert pk_mean_number(1.0, ServiceLaw.erlang(2, 4.0)) == 0.875
    assert pk_mean_number(1e-12, ServiceLaw.exponential(2.0)) == pytest.approx(0.0, abs=1e-11)


def test_service_moments():
    assert ServiceLaw.erlang(2, 4.0).mean == 0.5
    assert ServiceLaw.erlang(3, 1.0).scv == pytest.approx(1 / 3)
    assert ServiceLaw.pareto_hazard(6).mean == 0.2
    assert ServiceLaw.pareto_hazard(1).mean == math.inf
    assert ServiceLaw.pareto_hazard(2).scv == math.inf


def test_hazard_examples():
    assert hazard_of(ServiceLaw.exponential(2)).text == "2.0"
    assert ServiceLaw.pareto_hazard(2).survival(1.0) == 0.25
    h = hazard_of(ServiceLaw.erlang(2, 4.0))
    assert h(1, 0.0, 0) == 0.0
    assert h(1, 1e9, 0) == pytest.approx(4.0, rel=1e-8)
    assert hazard_of(ServiceLaw.pareto_hazard(6)).text == "6.0 / (1.0 + x)"


@pytest.mark.parametrize("law", [
    ServiceLaw.exponential(2.0),
    ServiceLaw.erlang(2, 4.0),
    ServiceLaw.erlang(4, 3.0),
    ServiceLaw.pareto_hazard(2.0),
    ServiceLaw.pareto_hazard(6.0),
])
def test_survival_from_hazard(law):
    h = hazard_of(law)
    edges = np.linspace(0, 50, 101)
    cum = 0.0
    for a, b in zip(edges, edges[1:]):
        piece, _ = integrate.quad(lambda x: h(1, x, 0), a, b, epsabs=1e-13, epsrel=1e-13)
        cum += piece
        assert math.exp(-cum) == pytest.approx(law.survival(b), abs=1e-8)


def test_stationary_law_sums_to_one():
    p = MM1Params(1, 2)
    total = math.fsum(mm1_stationary(p, m) for m in range(201))
    assert total == pytest.approx(1.0, abs=1e-12)


@given(st.floats(0.01, 0.99))
def test_pk_with_exponential_matches_mm1(rho):
    mu = 2.0
    lam = rho * mu
    assert pk_mean_number(lam, ServiceLaw.exponential(mu)) == pytest.approx(
        mm1_mean_number(MM1Params(lam, mu)), rel=1e-12)
