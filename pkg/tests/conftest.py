import pytest

from vqueue.intensity import IntensityField


def mm1_field():
    return IntensityField.from_strings("1", "2", "1", 1, 2)


def heavy_tail_field():
    return IntensityField.from_strings("0.5", "6/(1+x)", "0.5", 0.5, 6)


def step_field():
    return IntensityField.from_strings("if_gt(x, 0.5, 3, 1)", "2", "1", 3, 2)


def erlang_field():
    # Erlang-2 service with stage rate 4 (mean 1/2)
    return IntensityField.from_strings("1", "16*x/(1+4*x)", "1", 1, 4)


@pytest.fixture
def mm1():
    return mm1_field()


@pytest.fixture
def heavy():
    return heavy_tail_field()


@pytest.fixture
def step():
    return step_field()
