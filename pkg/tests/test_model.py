from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumplq.model import (MarkovGenerator, NoCertifiedCase, RegimeModel, TimeGrid,
                          classify_case, evaluate, expand_coefficient, validate)
from jumplq import reference as ref


def test_grid_nodes_and_spacing():
    g = TimeGrid(2.0, 8)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 2.0
    assert np.all(np.diff(g.nodes) > 0)
    assert g.dt == 0.25


def test_interval_is_left_continuous():
    g = TimeGrid(1.0, 4)
    assert g.interval(0.0) == 0
    assert g.interval(0.25) == 0  # node k belongs to the interval ending there
    assert g.interval(0.2500001) == 1
    assert g.interval(1.0) == 3
    with pytest.raises(ValueError):
        g.interval(1.5)


def test_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        TimeGrid(0.0, 10)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_generator_violations():
    assert MarkovGenerator([[-1, 1], [2, -2]]).violations() == []
    msgs = MarkovGenerator([[-1, 1.1], [2, -2]]).violations()
    assert any(m.startswith("generator row 1 sum != 0") for m in msgs)
    msgs = MarkovGenerator([[1, -1], [0, 0]]).violations()
    assert any("negative off-diagonal" in m for m in msgs)


def test_validate_clean_model():
    assert validate(ref.jump_lq()) == []


def test_validate_reports_asymmetric_R_and_negative_lambda():
    m = RegimeModel.build(1.0, 10, [[-1, 1], [1, -1]], m=2, n=2, R=1.0, D=1.0)
    R = m.R.copy()
    R[0, :, 0, 1] = 0.5
    lam = m.lam.copy()
    lam[1, 3] = -0.1
    msgs = validate(m.replace(R=R, lam=lam))
    assert "R not symmetric, regime 1" in msgs
    assert "lambda negative, regime 2" in msgs


def test_validate_row_sum_message():
    m = RegimeModel.build(1.0, 10, [[-1, 1.1], [1, -1]], R=1.0)
    assert any(s.startswith("generator row 1 sum") for s in validate(m))


def test_expand_coefficient_forms():
    const = expand_coefficient("B", [1.0, 2.0], 2, 3, (2,))
    assert const.shape == (2, 3, 2) and np.all(const[1] == [1.0, 2.0])
    per = expand_coefficient("A", [0.5, np.arange(3.0)], 2, 3, ())
    assert np.all(per[0] == 0.5) and np.all(per[1] == [0, 1, 2])
    with pytest.raises(ValueError):
        expand_coefficient("A", [0.5, np.arange(4.0)], 2, 3, ())


def test_evaluate_convention_on_time_varying_coefficient():
    m = RegimeModel.build(1.0, 4, [[0.0]], A=[np.array([1.0, 2.0, 3.0, 4.0])], R=1.0)
    assert evaluate(m, 0.0, 0).A == 1.0
    assert evaluate(m, 0.5, 0).A == 2.0  # t_2 takes the value of the interval ending there
    assert evaluate(m, 0.6, 0).A == 3.0
    assert evaluate(m, 1.0, 0).A == 4.0
    with pytest.raises(ValueError):
        evaluate(m, 0.5, 1)


@pytest.mark.parametrize(
    "kwargs, case, delta",
    [
        (dict(R=1.0, Q=0.0, Gb=1.0, Ga=1.0), "Standard", 1.0),
        (dict(R=0.0, D=1.0, Gb=1.0, Ga=1.0), "SingularI", 1.0),
        (dict(R=0.0, D=0.0, lam=2.0, F=1.0, Gb=1.0, Ga=1.0), "SingularIIPrime", 1.0),
    ],
)
def test_classify_examples(kwargs, case, delta):
    c = classify_case(RegimeModel.build(1.0, 10, [[0.0]], **kwargs))
    assert c.case == case
    assert c.delta == pytest.approx(delta)


def test_classify_none_raises():
    with pytest.raises(NoCertifiedCase):
        classify_case(RegimeModel.build(1.0, 10, [[0.0]], R=0.0, Q=1.0))


def test_delta_is_exact_grid_minimum():
    rng = np.random.default_rng(0)
    R = rng.uniform(0.5, 2.0, size=(2, 50))
    m = RegimeModel.build(1.0, 50, [[-1, 1], [1, -1]], R=[R[0][:, None, None], R[1][:, None, None]])
    c = classify_case(m)
    assert c.case == "Standard"
    assert c.satisfied["Standard"] == R.min()


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0.0, 1.0))
def test_classify_monotone_in_R(r, shrink):
    """Shrinking R can move Standard to uncertified but never the reverse."""
    base = RegimeModel.build(1.0, 5, [[0.0]], R=r, Q=0.5)
    smaller = base.replace(R=base.R * shrink)

    def standard(model):
        try:
            return classify_case(model).holds("Standard")
        except NoCertifiedCase:
            return False

    assert not (standard(smaller) and not standard(base))
