"""Spatio-temporal graph data: file I/O, a synthetic generator, windowing,
chronological splits, z-score normalization and input corruption."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TOD_SLOTS = 288
DOW_SLOTS = 7
DATASET_MAGIC = b"STDS1\n"
_HEADER = struct.Struct("<5Q")


class DatasetParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class STGraph:
    adjacency: np.ndarray

    def __post_init__(self):
        a = self.adjacency
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"adjacency must be a non-empty square matrix, got {a.shape}")
        if (a < 0).any():
            raise ValueError("adjacency must be non-negative")

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True)
class STSeries:
    features: np.ndarray  # T_total x N x F
    steps_per_day: int
    tod_index: np.ndarray
    dow_index: np.ndarray

    def __post_init__(self):
        t_total = self.features.shape[0]
        if self.features.ndim != 3:
            raise ValueError(f"features must be T x N x F, got {self.features.shape}")
        if self.tod_index.shape != (t_total,) or self.dow_index.shape != (t_total,):
            raise ValueError("tod/dow index arrays must align with the time axis")
        if t_total and (self.tod_index.min() < 0 or self.tod_index.max() >= TOD_SLOTS):
            raise ValueError(f"tod index outside [0, {TOD_SLOTS})")
        if t_total and (self.dow_index.min() < 0 or self.dow_index.max() >= DOW_SLOTS):
            raise ValueError(f"dow index outside [0, {DOW_SLOTS})")

    @property
    def num_steps(self) -> int:
        return self.features.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.features.shape[1]

    @property
    def num_features(self) -> int:
        return self.features.shape[2]


@dataclass(frozen=True)
class WindowedSample:
    x: np.ndarray  # T x N x F
    y: np.ndarray  # T' x N x F
    tod: np.ndarray
    dow: np.ndarray
    window_start: int


def tod_for_steps(steps: np.ndarray, steps_per_day: int) -> np.ndarray:
    """Map absolute step numbers onto the fixed 288-slot time-of-day table."""
    within = np.asarray(steps, dtype=np.int64) % steps_per_day
    return (within * TOD_SLOTS) // steps_per_day


def dow_for_steps(steps: np.ndarray, steps_per_day: int) -> np.ndarray:
    return (np.asarray(steps, dtype=np.int64) // steps_per_day) % DOW_SLOTS


# ----------------------------------------------------------------------------- file I/O


def write_dataset(path, graph: STGraph, series: STSeries, flags: int = 0) -> None:
    path = Path(path)
    n, f = series.num_nodes, series.num_features
    if graph.num_nodes != n:
        raise ValueError(f"graph has {graph.num_nodes} nodes but series has {n}")
    if path.suffix == ".json":
        doc = {
            "N": n,
            "T_total": series.num_steps,
            "F": f,
            "steps_per_day": series.steps_per_day,
            "flags": flags,
            "adjacency": graph.adjacency.tolist(),
            "features": series.features.tolist(),
            "tod": series.tod_index.tolist(),
            "dow": series.dow_index.tolist(),
        }
        path.write_text(json.dumps(doc))
        return
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(_HEADER.pack(n, series.num_steps, f, series.steps_per_day, flags))
        fh.write(np.ascontiguousarray(graph.adjacency, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(series.features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(series.tod_index, dtype="<u2").tobytes())
        fh.write(np.ascontiguousarray(series.dow_index, dtype="<u1").tobytes())


def _validate(adjacency, features, tod, dow, steps_per_day, offsets) -> tuple[STGraph, STSeries]:
    if steps_per_day < 1:
        raise DatasetParseError("steps_per_day must be positive", offsets["header"])
    if (adjacency < 0).any() or not np.isfinite(adjacency).all():
        raise DatasetParseError("adjacency must be finite and non-negative", offsets["adjacency"])
    if not np.isfinite(features).all():
        raise DatasetParseError("features contain NaN or Inf", offsets["features"])
    if tod.size and tod.max() >= TOD_SLOTS:
        bad = int(np.argmax(tod >= TOD_SLOTS))
        raise DatasetParseError(f"tod index {int(tod[bad])} out of range", offsets["tod"] + 2 * bad)
    if dow.size and dow.max() >= DOW_SLOTS:
        bad = int(np.argmax(dow >= DOW_SLOTS))
        raise DatasetParseError(f"dow index {int(dow[bad])} out of range", offsets["dow"] + bad)
    graph = STGraph(adjacency)
    series = STSeries(features, int(steps_per_day), tod.astype(np.int64), dow.astype(np.int64))
    return graph, series


def _load_json(path: Path) -> tuple[STGraph, STSeries]:
    raw = path.read_bytes()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"invalid JSON: {exc.msg}", exc.pos) from None
    required = ("N", "T_total", "F", "steps_per_day", "adjacency", "features", "tod", "dow")
    missing = [k for k in required if k not in doc]
    if missing:
        raise DatasetParseError(f"missing fields {missing}", 0)
    n, t_total, f = int(doc["N"]), int(doc["T_total"]), int(doc["F"])
    adjacency = np.asarray(doc["adjacency"], dtype=np.float64)
    features = np.asarray(doc["features"], dtype=np.float64)
    tod = np.asarray(doc["tod"], dtype=np.int64)
    dow = np.asarray(doc["dow"], dtype=np.int64)
    # JSON has no byte layout; offsets point at each field's key
    offsets = {k: raw.find(f'"{k}"'.encode()) for k in ("adjacency", "features", "tod", "dow")}
    offsets["header"] = 0
    if adjacency.shape != (n, n):
        raise DatasetParseError(f"adjacency shape {adjacency.shape} != ({n}, {n})", offsets["adjacency"])
    if features.shape != (t_total, n, f):
        raise DatasetParseError(f"features shape {features.shape} != ({t_total}, {n}, {f})", offsets["features"])
    if tod.shape != (t_total,) or dow.shape != (t_total,):
        raise DatasetParseError("tod/dow length does not match T_total", offsets["tod"])
    if (tod < 0).any() or (dow < 0).any():
        raise DatasetParseError("negative time index", offsets["tod"])
    return _validate(adjacency, features, tod, dow, int(doc["steps_per_day"]), offsets)


def load_dataset(path) -> tuple[STGraph, STSeries]:
    path = Path(path)
    if path.suffix == ".json":
        return _load_json(path)
    raw = path.read_bytes()
    if raw[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise DatasetParseError("bad magic, expected STDS1", 0)
    pos = len(DATASET_MAGIC)
    if len(raw) < pos + _HEADER.size:
        raise DatasetParseError("truncated header", len(raw))
    n, t_total, f, steps_per_day, _flags = _HEADER.unpack_from(raw, pos)
    offsets = {"header": pos}
    pos += _HEADER.size
    if n < 1:
        raise DatasetParseError("N must be at least 1", offsets["header"])
    sizes = [("adjacency", n * n * 8), ("features", t_total * n * f * 8), ("tod", t_total * 2), ("dow", t_total)]
    for name, nbytes in sizes:
        offsets[name] = pos
        pos += nbytes
    if len(raw) != pos:
        raise DatasetParseError(f"payload size mismatch: header implies {pos} bytes, file has {len(raw)}",
                                min(len(raw), pos))
    adjacency = np.frombuffer(raw, "<f8", n * n, offsets["adjacency"]).reshape(n, n).astype(np.float64)
    features = np.frombuffer(raw, "<f8", t_total * n * f, offsets["features"]).reshape(t_total, n, f).astype(np.float64)
    tod = np.frombuffer(raw, "<u2", t_total, offsets["tod"]).astype(np.int64)
    dow = np.frombuffer(raw, "<u1", t_total, offsets["dow"]).astype(np.int64)
    return _validate(adjacency, features, tod, dow, steps_per_day, offsets)


# ----------------------------------------------------------------------------- synthetic data


@dataclass
class SynthConfig:
    nodes: int = 20
    days: int = 30
    steps_per_day: int = 48
    features: int = 1
    graph: str = "ring"
    diffusion: float = 0.5
    noise: float = 1.0
    seed: int = 0


def build_graph(kind: str, n: int) -> np.ndarray:
    a = np.zeros((n, n))
    if kind == "ring":
        for i in range(n):
            a[i, (i + 1) % n] = a[(i + 1) % n, i] = 1.0
        np.fill_diagonal(a, 0.0)
    elif kind == "grid":
        cols = int(np.ceil(np.sqrt(n)))
        for i in range(n):
            r, c = divmod(i, cols)
            for j in (i + 1 if c + 1 < cols else None, (r + 1) * cols + c):
                if j is not None and j < n:
                    a[i, j] = a[j, i] = 1.0
    else:
        raise ConfigError(f"unknown graph kind {kind!r}; expected 'ring' or 'grid'")
    return a


def row_normalize(adjacency: np.ndarray) -> np.ndarray:
    deg = adjacency.sum(axis=1, keepdims=True)
    return np.divide(adjacency, deg, out=np.zeros_like(adjacency), where=deg > 0)


def diurnal_base(cfg: SynthConfig) -> np.ndarray:
    """Node-specific daily sinusoids, shape T_total x N x F, before diffusion and noise."""
    rng = np.random.default_rng(cfg.seed)
    n, f = cfg.nodes, cfg.features
    amplitude = rng.uniform(10.0, 30.0, size=(n, f))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(n, f))
    level = rng.uniform(40.0, 80.0, size=(n, f))
    steps = np.arange(cfg.days * cfg.steps_per_day)
    angle = 2.0 * np.pi * (steps % cfg.steps_per_day) / cfg.steps_per_day
    return level + amplitude * np.sin(angle[:, None, None] + phase)


def synth_generate(cfg: SynthConfig) -> tuple[STGraph, STSeries]:
    if cfg.nodes < 2:
        raise ConfigError("synthetic data needs at least 2 nodes")
    if cfg.days < 1 or cfg.steps_per_day < 1 or cfg.features < 1:
        raise ConfigError("days, steps_per_day and features must be positive")
    adjacency = build_graph(cfg.graph, cfg.nodes)
    mix = row_normalize(adjacency)
    base = diurnal_base(cfg)
    # noise drawn from a separate stream so base stays identical across noise levels
    noise_rng = np.random.default_rng([cfg.seed, 1])
    eps = noise_rng.standard_normal(base.shape)

    x = np.empty_like(base)
    x[0] = base[0] + cfg.noise * eps[0]
    for s in range(1, base.shape[0]):
        x[s] = base[s] + cfg.diffusion * (mix @ x[s - 1]) + cfg.noise * eps[s]

    steps = np.arange(base.shape[0])
    series = STSeries(x, cfg.steps_per_day, tod_for_steps(steps, cfg.steps_per_day),
                      dow_for_steps(steps, cfg.steps_per_day))
    return STGraph(adjacency), series


# ----------------------------------------------------------------------------- windows & splits


def window_count(num_steps: int, history: int, horizon: int) -> int:
    return num_steps - history - horizon + 1


def make_windows(series: STSeries, history: int, horizon: int) -> list[WindowedSample]:
    if history < 1 or horizon < 1:
        raise ValueError("history and horizon must be positive")
    if history + horizon > series.num_steps:
        raise ValueError(f"history {history} + horizon {horizon} exceeds {series.num_steps} steps")
    out = []
    for k in range(window_count(series.num_steps, history, horizon)):
        mid = k + history
        out.append(WindowedSample(
            x=series.features[k:mid],
            y=series.features[mid:mid + horizon],
            tod=series.tod_index[k:mid],
            dow=series.dow_index[k:mid],
            window_start=k,
        ))
    return out


def split(samples: list) -> tuple[list, list, list]:
    """Chronological 6:2:2 split; train and val sizes are floored, test takes the rest."""
    total = len(samples)
    if total < 5:
        raise ValueError(f"need at least 5 samples to split, got {total}")
    n_train = (total * 6) // 10
    n_val = (total * 2) // 10
    return samples[:n_train], samples[n_train:n_train + n_val], samples[n_train + n_val:]


@dataclass
class WindowBatch:
    """Windows stacked along a leading batch axis."""

    x: np.ndarray  # B x T x N x F
    y: np.ndarray  # B x T' x N x F
    tod: np.ndarray  # B x T
    dow: np.ndarray  # B x T
    start: np.ndarray  # B

    def __len__(self) -> int:
        return self.x.shape[0]

    def take(self, idx) -> "WindowBatch":
        return WindowBatch(self.x[idx], self.y[idx], self.tod[idx], self.dow[idx], self.start[idx])


def stack(samples: list[WindowedSample]) -> WindowBatch:
    return WindowBatch(
        x=np.stack([s.x for s in samples]),
        y=np.stack([s.y for s in samples]),
        tod=np.stack([s.tod for s in samples]),
        dow=np.stack([s.dow for s in samples]),
        start=np.array([s.window_start for s in samples], dtype=np.int64),
    )


# ----------------------------------------------------------------------------- normalization


@dataclass
class Normalizer:
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    floor: float = field(default=1e-8, repr=False)

    @property
    def fitted(self) -> bool:
        return self.mean is not None

    def fit(self, features: np.ndarray) -> "Normalizer":
        flat = features.reshape(-1, features.shape[-1])
        self.mean = flat.mean(axis=0)
        self.std = np.maximum(flat.std(axis=0), self.floor)
        return self

    def _check(self):
        if not self.fitted:
            raise RuntimeError("normalizer used before fit()")

    def apply(self, x: np.ndarray) -> np.ndarray:
        self._check()
        return (x - self.mean) / self.std

    def invert(self, x: np.ndarray) -> np.ndarray:
        self._check()
        return x * self.std + self.mean


def train_portion(series: STSeries, history: int, horizon: int) -> np.ndarray:
    """Raw time steps touched by the training windows only."""
    n_windows = window_count(series.num_steps, history, horizon)
    n_train = (n_windows * 6) // 10
    return series.features[: n_train - 1 + history + horizon]


# ----------------------------------------------------------------------------- corruption


def _check_gamma(gamma: float) -> None:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"corruption coefficient must lie in [0, 1], got {gamma}")


def corrupt_noise(x: np.ndarray, gamma: float, seed: int) -> np.ndarray:
    """``(1 - gamma) * x + gamma * eps`` with standard-normal ``eps``."""
    _check_gamma(gamma)
    if gamma == 0.0:
        return x.copy()
    eps = np.random.default_rng(seed).standard_normal(x.shape)
    return (1.0 - gamma) * x + gamma * eps


def corrupt_missing(x: np.ndarray, gamma: float, seed: int) -> np.ndarray:
    """Zero exactly ``round(gamma * x.size)`` entries chosen without replacement."""
    _check_gamma(gamma)
    out = x.copy()
    count = int(round(gamma * x.size))
    if count:
        idx = np.random.default_rng(seed).choice(x.size, size=count, replace=False)
        out.reshape(-1)[idx] = 0.0
    return out
