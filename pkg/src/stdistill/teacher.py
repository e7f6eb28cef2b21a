"""Teacher predictions: file format, a synthetic noisy teacher, and a small
graph-convolution reference teacher trained with the same autodiff engine."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as tn
from .data import Normalizer, STGraph, WindowBatch, row_normalize
from .optim import Adam, clip_grad_norm
from .student import Layer, init_linear

TEACHER_MAGIC = b"STTP1\n"
_HEADER = struct.Struct("<4Q")


class AlignmentError(ValueError):
    pass


def save_teacher(path, y_teacher: np.ndarray) -> None:
    if y_teacher.ndim != 4:
        raise ValueError(f"teacher predictions must be windows x T' x N x F, got {y_teacher.shape}")
    with open(path, "wb") as fh:
        fh.write(TEACHER_MAGIC)
        fh.write(_HEADER.pack(*y_teacher.shape))
        fh.write(np.ascontiguousarray(y_teacher, dtype="<f8").tobytes())


def read_teacher(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[: len(TEACHER_MAGIC)] != TEACHER_MAGIC:
        raise AlignmentError("bad magic, expected STTP1")
    pos = len(TEACHER_MAGIC)
    if len(raw) < pos + _HEADER.size:
        raise AlignmentError("truncated teacher header")
    shape = _HEADER.unpack_from(raw, pos)
    pos += _HEADER.size
    count = int(np.prod(shape))
    if len(raw) - pos != count * 8:
        raise AlignmentError(f"teacher payload has {(len(raw) - pos) // 8} values, header implies {count}")
    return np.frombuffer(raw, "<f8", count, pos).reshape(shape).astype(np.float64)


def check_alignment(y_teacher: np.ndarray, expected: tuple[int, ...]) -> None:
    if tuple(y_teacher.shape) != tuple(expected):
        raise AlignmentError(
            f"teacher predictions have shape {tuple(y_teacher.shape)}, expected {tuple(expected)} "
            f"(windows x horizon x nodes x features)"
        )


def load_teacher(path, expected_shape: tuple[int, ...]) -> np.ndarray:
    y = read_teacher(path)
    check_alignment(y, expected_shape)
    return y


def synth_teacher(y_true: np.ndarray, sigma: float = 0.0, bias: float = 0.0, seed: int = 0) -> np.ndarray:
    """``y_true + bias + sigma * eps``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    out = y_true + bias
    if sigma > 0:
        out = out + sigma * np.random.default_rng(seed).standard_normal(y_true.shape)
    return out


@dataclass
class RefTeacher:
    """Per-step input embedding, one dense graph convolution over the
    row-normalized adjacency, and a per-node temporal MLP head."""

    mix: np.ndarray  # N x N, row-normalized
    embed: Layer
    graph: Layer
    head: list[Layer]
    history: int
    horizon: int
    num_features: int

    @classmethod
    def init(cls, rng, adjacency: np.ndarray, history: int, horizon: int, num_features: int,
             hidden: int = 32) -> "RefTeacher":
        mix = row_normalize(adjacency + np.eye(adjacency.shape[0]))
        return cls(
            mix=mix,
            embed=init_linear(rng, num_features, hidden),
            graph=init_linear(rng, hidden, hidden),
            head=[init_linear(rng, history * 2 * hidden, hidden), init_linear(rng, hidden, horizon * num_features)],
            history=history, horizon=horizon, num_features=num_features,
        )

    def parameters(self) -> list[tn.Tensor]:
        out = [*self.embed, *self.graph]
        for w, b in self.head:
            out += [w, b]
        return out

    def forward(self, x: np.ndarray) -> tn.Tensor:
        """``B x T x N x F`` normalized history -> ``B x T' x N x F`` forecast."""
        b, t, n, _ = x.shape
        h = tn.relu(tn.affine(tn.Tensor(x), *self.embed))  # B x T x N x h
        mixed = tn.matmul(tn.Tensor(self.mix), h)  # dense N^2 mixing at every step
        g = tn.relu(tn.affine(mixed, *self.graph))
        both = tn.concat([h, g], axis=-1)
        per_node = tn.reshape(tn.transpose(both, (0, 2, 1, 3)), (b, n, -1))
        hidden = tn.relu(tn.affine(per_node, *self.head[0]))
        out = tn.reshape(tn.affine(hidden, *self.head[1]), (b, n, self.horizon, self.num_features))
        return tn.transpose(out, (0, 2, 1, 3))

    def predict(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        chunks = [self.forward(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
        return np.concatenate(chunks, axis=0)


def train_ref_teacher(
    graph: STGraph,
    train: WindowBatch,
    normalizer: Normalizer,
    epochs: int = 30,
    seed: int = 0,
    lr: float = 0.002,
    batch_size: int = 32,
    hidden: int = 32,
) -> RefTeacher:
    """Fit the reference teacher on normalized training windows with MAE."""
    init_rng, order_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    _, history, _, f = train.x.shape
    model = RefTeacher.init(init_rng, graph.adjacency, history, train.y.shape[1], f, hidden)
    params = model.parameters()
    opt = Adam(params, lr=lr)
    x, y = normalizer.apply(train.x), normalizer.apply(train.y)
    for _ in range(epochs):
        order = order_rng.permutation(len(train))
        for i in range(0, len(order), batch_size):
            idx = order[i:i + batch_size]
            for p in params:
                p.zero_grad()
            loss = tn.mean(tn.abs(tn.sub(model.forward(x[idx]), y[idx])))
            loss.backward()
            clip_grad_norm(params, 5.0)
            opt.step()
    return model


def teacher_predictions(model: RefTeacher, windows: WindowBatch, normalizer: Normalizer) -> np.ndarray:
    """Forecasts for every window, in original units."""
    return normalizer.invert(model.predict(normalizer.apply(windows.x)))
