"""Predictive, teacher-bounded distillation and combined training losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import DimensionError, Tensor


@dataclass(frozen=True)
class LossConfig:
    kd_weight: float = 0.3  # lambda
    beta1: float = 1e-3
    beta2: float = 1e-3
    delta: float = 0.1
    base_loss: str = "mae"
    bounded: bool = True

    def __post_init__(self):
        if self.kd_weight < 0 or self.beta1 < 0 or self.beta2 < 0 or self.delta < 0:
            raise ValueError("kd_weight, beta1, beta2 and delta must be non-negative")
        if self.base_loss not in ("mae", "mse"):
            raise ValueError(f"base_loss must be 'mae' or 'mse', got {self.base_loss!r}")


def predictive_loss(y_hat, y, kind: str = "mae") -> Tensor:
    y_hat, y = tn.as_tensor(y_hat), tn.as_tensor(y)
    if y_hat.shape != y.shape:
        raise DimensionError(f"predictive_loss: prediction {y_hat.shape} vs target {y.shape}")
    diff = tn.sub(y_hat, y)
    if kind == "mae":
        return tn.mean(tn.abs(diff))
    if kind == "mse":
        return tn.mean(tn.square(diff))
    raise ValueError(f"unknown loss kind {kind!r}")


def _numpy_loss(a: np.ndarray, b: np.ndarray, kind: str) -> float:
    diff = a - b
    return float(np.mean(np.abs(diff)) if kind == "mae" else np.mean(diff * diff))


def bounded_kd_loss(y_hat, y_teacher, y, delta: float, kind: str = "mae") -> Tensor:
    """Student loss against the truth while it is not better than the teacher by more than ``delta``.

    The gate compares batch-level losses on detached values; the zero branch
    carries no gradient.
    """
    y_hat, y = tn.as_tensor(y_hat), tn.as_tensor(y)
    y_teacher = np.asarray(y_teacher.data if isinstance(y_teacher, Tensor) else y_teacher, dtype=np.float64)
    if not (y_hat.shape == y.shape == y_teacher.shape):
        raise DimensionError(f"bounded_kd_loss: shapes {y_hat.shape}, {y_teacher.shape}, {y.shape} differ")
    student = predictive_loss(y_hat, y, kind)
    teacher = _numpy_loss(y_teacher, y.data, kind)
    if student.item() + delta >= teacher:
        return student
    return Tensor(0.0)


def kd_loss(y_hat, y_teacher, y, cfg: LossConfig) -> Tensor:
    if cfg.bounded:
        return bounded_kd_loss(y_hat, y_teacher, y, cfg.delta, cfg.base_loss)
    # plain distillation: regress onto the teacher directly
    return predictive_loss(y_hat, y_teacher, cfg.base_loss)


def total_loss(y_hat, y, y_teacher, kl, cfg: LossConfig) -> tuple[Tensor, dict[str, float]]:
    """``L_pre + lambda * L_kd + (beta1 + beta2) * kl``; also returns each term as a float."""
    pre = predictive_loss(y_hat, y, cfg.base_loss)
    loss = pre
    kd_value = 0.0
    if cfg.kd_weight > 0 and y_teacher is not None:
        kd = kd_loss(y_hat, y_teacher, y, cfg)
        kd_value = kd.item()
        loss = tn.add(loss, tn.mul(kd, cfg.kd_weight))
    ib_value = 0.0
    beta = cfg.beta1 + cfg.beta2
    if beta > 0 and kl is not None:
        kl = tn.as_tensor(kl)
        ib_value = kl.item()
        loss = tn.add(loss, tn.mul(kl, beta))
    return loss, {"l_pre": pre.item(), "l_kd": kd_value, "l_ib": ib_value}
