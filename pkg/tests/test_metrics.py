import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stdistill.data import Normalizer
from stdistill.metrics import mae, mape, report, rmse


def test_perfect_forecast():
    y = np.array([1.0, 2.0, 3.0])
    assert (mae(y, y), rmse(y, y), mape(y, y)) == (0.0, 0.0, 0.0)


def test_hand_example():
    y_hat, y = np.array([3.0, 5.0]), np.array([1.0, 1.0])
    assert mae(y_hat, y) == 3.0
    assert rmse(y_hat, y) == pytest.approx(math.sqrt(10.0))
    assert mape(y_hat, y) == pytest.approx(300.0)


def test_mape_masks_zero_targets():
    assert mape(np.array([1.0, 1.0]), np.array([0.0, 2.0])) == pytest.approx(50.0)


def test_mape_all_masked_is_undefined():
    assert math.isnan(mape(np.array([1.0]), np.array([0.0])))
    rep = report(np.ones((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)))
    assert rep.to_dict()["mape"] is None


def test_report_per_horizon_and_aggregate():
    rng = np.random.default_rng(0)
    y = rng.normal(10, 2, size=(7, 3, 4, 2))
    y_hat = y + rng.normal(size=y.shape)
    rep = report(y_hat, y, "x")
    assert len(rep.per_horizon) == 3
    assert rep.mae == pytest.approx(np.mean(np.abs(y_hat - y)), abs=1e-15)
    assert rep.mae == pytest.approx(np.mean([r["mae"] for r in rep.per_horizon]), abs=1e-12)
    assert rep.num_windows == 7
    assert rep.to_csv().splitlines()[0] == "label,horizon,mae,rmse,mape"


@given(arrays(np.float64, (3, 2, 2, 1), elements=st.floats(-100, 100)),
       arrays(np.float64, (3, 2, 2, 1), elements=st.floats(-100, 100)))
def test_rmse_dominates_mae(a, b):
    rep = report(a, b)
    assert rep.rmse >= rep.mae - 1e-12


def test_metrics_order_invariant():
    rng = np.random.default_rng(1)
    y = rng.normal(size=(9, 2, 3, 1))
    y_hat = rng.normal(size=y.shape)
    perm = rng.permutation(9)
    a, b = report(y_hat, y), report(y_hat[perm], y[perm])
    assert a.mae == pytest.approx(b.mae, abs=1e-15)
    assert a.rmse == pytest.approx(b.rmse, abs=1e-15)


def test_metrics_in_original_units():
    # errors measured after inverting a known affine normalizer scale with its std
    norm = Normalizer(mean=np.array([50.0]), std=np.array([4.0]))
    y = np.array([[[[52.0]], [[47.0]]]])
    y_hat_norm = norm.apply(y) + 0.25
    assert mae(y_hat_norm, norm.apply(y)) == pytest.approx(0.25)
    assert mae(norm.invert(y_hat_norm), y) == pytest.approx(1.0)
