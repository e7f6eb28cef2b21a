import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stdistill import tensor as tn
from stdistill.losses import LossConfig, bounded_kd_loss, kd_loss, predictive_loss, total_loss
from stdistill.tensor import DimensionError, Tensor


def test_predictive_identity():
    y = np.array([1.0, -2.0, 3.0])
    assert predictive_loss(y, y, "mae").item() == 0.0
    assert predictive_loss(y, y, "mse").item() == 0.0


def test_predictive_single_and_pair():
    assert predictive_loss([2.0], [1.0], "mae").item() == 1.0
    assert predictive_loss([2.0], [1.0], "mse").item() == 1.0
    assert predictive_loss([1.0, 3.0], [0.0, 0.0], "mae").item() == 2.0


def test_predictive_shape_mismatch():
    with pytest.raises(DimensionError):
        predictive_loss(np.zeros(3), np.zeros(4))


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(delta=-1.0)
    with pytest.raises(ValueError):
        LossConfig(base_loss="huber")


def with_losses(s, t):
    """Scalar tensors whose MAE against zero truth equal ``s`` (student) and ``t`` (teacher)."""
    return np.array([s]), np.array([t]), np.array([0.0])


@pytest.mark.parametrize("s, t, delta, expected", [
    (1.0, 0.5, 0.1, 1.0),
    (0.0, 0.5, 0.1, 0.0),
    (0.45, 0.5, 0.1, 0.45),
])
def test_bounded_gate_examples(s, t, delta, expected):
    y_hat, y_t, y = with_losses(s, t)
    assert bounded_kd_loss(y_hat, y_t, y, delta).item() == expected


def test_bounded_zero_branch_has_zero_gradient():
    y_hat = tn.parameter([0.0])
    out = bounded_kd_loss(y_hat, np.array([0.5]), np.array([0.0]), 0.1)
    assert out.item() == 0.0
    assert not out.requires_grad


def test_bounded_active_branch_gradient():
    y_hat = tn.parameter([1.0, -2.0])
    bounded_kd_loss(y_hat, np.zeros(2), np.zeros(2), 0.0).backward()
    assert np.array_equal(y_hat.grad, [0.5, -0.5])


def test_bounded_gate_uses_detached_values():
    y_hat = tn.parameter([1.0])
    out = bounded_kd_loss(y_hat, Tensor([0.5], requires_grad=True), np.array([0.0]), 0.1)
    out.backward()
    assert y_hat.grad is not None


finite = st.floats(-5, 5, allow_nan=False)


@given(arrays(np.float64, 6, elements=finite), arrays(np.float64, 6, elements=finite),
       arrays(np.float64, 6, elements=finite), st.floats(0, 3), st.sampled_from(["mae", "mse"]))
@settings(max_examples=150)
def test_bounded_properties(y_hat, y_t, y, delta, kind):
    out = bounded_kd_loss(y_hat, y_t, y, delta, kind).item()
    pre = predictive_loss(y_hat, y, kind).item()
    assert 0.0 <= out <= pre
    # raising delta can only switch the gate on
    if out == pre:
        assert bounded_kd_loss(y_hat, y_t, y, delta + 1.0, kind).item() == pre


@given(arrays(np.float64, 5, elements=finite), arrays(np.float64, 5, elements=finite), st.sampled_from(["mae", "mse"]))
@settings(max_examples=80)
def test_perfect_teacher_zero_delta_equals_predictive(y_hat, y, kind):
    assert bounded_kd_loss(y_hat, y, y, 0.0, kind).item() == predictive_loss(y_hat, y, kind).item()


def test_unbounded_kd_regresses_on_teacher():
    cfg = LossConfig(bounded=False)
    out = kd_loss(np.array([1.0, 3.0]), np.array([0.0, 1.0]), np.array([5.0, 5.0]), cfg)
    assert out.item() == 1.5


def test_total_reduces_to_predictive():
    cfg = LossConfig(kd_weight=0.0, beta1=0.0, beta2=0.0)
    y_hat, y = np.array([1.0, 2.0]), np.array([0.0, 0.0])
    loss, parts = total_loss(y_hat, y, np.zeros(2), Tensor(0.7), cfg)
    assert loss.item() == predictive_loss(y_hat, y).item()


def test_total_arithmetic():
    # L_pre = 1, L_kd = 1 (gate open: the teacher's error 0.5 beats the student's), kl = 0.5
    cfg = LossConfig(kd_weight=0.3, beta1=1e-3, beta2=1e-3, delta=0.1)
    loss, parts = total_loss(np.array([1.0]), np.array([0.0]), np.array([0.5]), Tensor(0.5), cfg)
    assert parts == {"l_pre": 1.0, "l_kd": 1.0, "l_ib": 0.5}
    assert loss.item() == pytest.approx(1.0 + 0.3 * 1.0 + 0.002 * 0.5, abs=1e-15)


def test_total_stated_substitution():
    # plain distillation makes L_kd = |1 - (-1)| = 2 while L_pre = 1
    cfg = LossConfig(kd_weight=0.3, beta1=1e-3, beta2=1e-3, bounded=False)
    loss, parts = total_loss(np.array([1.0]), np.array([0.0]), np.array([-1.0]), Tensor(0.5), cfg)
    assert (parts["l_pre"], parts["l_kd"]) == (1.0, 2.0)
    assert loss.item() == pytest.approx(1.601, abs=1e-12)


def test_total_perfect_predictions_leave_kl_only():
    cfg = LossConfig(kd_weight=0.4, beta1=0.1, beta2=0.2)
    y = np.array([3.0, -1.0])
    loss, _ = total_loss(y, y, y, Tensor(0.25), cfg)
    assert loss.item() == pytest.approx(0.3 * 0.25, abs=1e-15)


@given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=finite),
       arrays(np.float64, 4, elements=finite), st.floats(0, 2), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=100)
def test_total_is_additive(y_hat, y, y_t, kl, lam, b1, b2):
    cfg = LossConfig(kd_weight=lam, beta1=b1, beta2=b2)
    loss, _ = total_loss(y_hat, y, y_t, Tensor(kl), cfg)
    parts = (predictive_loss(y_hat, y).item()
             + lam * bounded_kd_loss(y_hat, y_t, y, cfg.delta).item()
             + (b1 + b2) * kl)
    assert loss.item() == pytest.approx(parts, abs=1e-12)
