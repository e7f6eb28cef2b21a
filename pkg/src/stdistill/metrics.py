"""Forecast error metrics in original units."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

MAPE_MASK = 1e-4


def mae(y_hat: np.ndarray, y: np.ndarray) -> float:
    _same_shape(y_hat, y)
    return float(np.mean(np.abs(y_hat - y)))


def rmse(y_hat: np.ndarray, y: np.ndarray) -> float:
    _same_shape(y_hat, y)
    return float(np.sqrt(np.mean((y_hat - y) ** 2)))


def mape(y_hat: np.ndarray, y: np.ndarray, mask: float = MAPE_MASK) -> float:
    """Percent error over targets with ``|y| > mask``; NaN when every target is masked."""
    _same_shape(y_hat, y)
    keep = np.abs(y) > mask
    if not keep.any():
        return math.nan
    return float(np.mean(np.abs((y_hat[keep] - y[keep]) / y[keep])) * 100.0)


def _same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"prediction shape {np.shape(a)} != target shape {np.shape(b)}")


@dataclass
class EvalReport:
    mae: float
    rmse: float
    mape: float
    per_horizon: list[dict]
    num_windows: int
    label: str = ""

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        return {
            "label": self.label,
            "num_windows": self.num_windows,
            "mae": self.mae,
            "rmse": self.rmse,
            "mape": clean(self.mape),
            "per_horizon": [{k: clean(v) for k, v in row.items()} for row in self.per_horizon],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["label", "horizon", "mae", "rmse", "mape"])
        for row in self.per_horizon:
            writer.writerow([self.label, row["horizon"], row["mae"], row["rmse"], row["mape"]])
        writer.writerow([self.label, "all", self.mae, self.rmse, self.mape])
        return buf.getvalue()


def report(y_hat: np.ndarray, y: np.ndarray, label: str = "") -> EvalReport:
    """Aggregate and per-horizon metrics for ``windows x T' x N x F`` arrays."""
    _same_shape(y_hat, y)
    rows = [
        {"horizon": h + 1, "mae": mae(y_hat[:, h], y[:, h]), "rmse": rmse(y_hat[:, h], y[:, h]),
         "mape": mape(y_hat[:, h], y[:, h])}
        for h in range(y.shape[1])
    ]
    return EvalReport(mae(y_hat, y), rmse(y_hat, y), mape(y_hat, y), rows, int(y.shape[0]), label)
