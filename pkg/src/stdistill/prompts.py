"""Learnable spatio-temporal prompts and their fusion with the raw input."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .data import DOW_SLOTS, TOD_SLOTS
from .tensor import DimensionError, Tensor

BRANCHES = ("input", "spatial", "transitional", "tod", "dow")


def _uniform(rng: np.random.Generator, shape, bound: float) -> Tensor:
    return tn.parameter(rng.uniform(-bound, bound, size=shape))


def transitional_prompt(core: Tensor, temporal: Tensor, spatial: Tensor) -> Tensor:
    """Tucker contraction ``out[t, n, r] = sum_pq core[p, q, r] * temporal[t, p] * spatial[n, q]``
    followed by a softmax over the node axis for every (t, r)."""
    d = core.shape[0]
    if core.ndim != 3 or core.shape != (d, d, d):
        raise DimensionError(f"transitional_prompt: core must be d x d x d, got {core.shape}")
    if temporal.ndim != 2 or spatial.ndim != 2 or temporal.shape[1] != d or spatial.shape[1] != d:
        raise DimensionError(
            f"transitional_prompt: factors {temporal.shape}, {spatial.shape} disagree with core {core.shape}"
        )
    n_t = temporal.shape[0]
    # (N_t, d) @ (d, d*d) -> per-timestamp q x r slices of the core
    per_t = tn.reshape(tn.matmul(temporal, tn.reshape(core, (d, d * d))), (n_t, d, d))
    raw = tn.matmul(tn.reshape(spatial, (1,) + spatial.shape), per_t)  # N_t x N x d
    return tn.softmax(raw, axis=1)


@dataclass
class PromptBank:
    spatial: Tensor  # N x d
    tod: Tensor  # 288 x d
    dow: Tensor  # 7 x d
    core: Tensor  # d x d x d
    temporal_factor: Tensor  # N_t x d
    spatial_factor: Tensor  # N x d

    @classmethod
    def init(cls, rng: np.random.Generator, num_nodes: int, steps_per_day: int, d: int) -> "PromptBank":
        bound = 1.0 / np.sqrt(d)
        return cls(
            spatial=_uniform(rng, (num_nodes, d), bound),
            tod=_uniform(rng, (TOD_SLOTS, d), bound),
            dow=_uniform(rng, (DOW_SLOTS, d), bound),
            core=_uniform(rng, (d, d, d), bound),
            temporal_factor=_uniform(rng, (steps_per_day, d), bound),
            spatial_factor=_uniform(rng, (num_nodes, d), bound),
        )

    def named(self) -> dict[str, Tensor]:
        return {
            "prompt.spatial": self.spatial,
            "prompt.tod": self.tod,
            "prompt.dow": self.dow,
            "prompt.tucker_core": self.core,
            "prompt.tucker_temporal": self.temporal_factor,
            "prompt.tucker_spatial": self.spatial_factor,
        }

    def transitional(self) -> Tensor:
        return transitional_prompt(self.core, self.temporal_factor, self.spatial_factor)


def fuse(
    x: Tensor,
    bank: PromptBank,
    fc: dict[str, tuple[Tensor, Tensor]],
    tod: np.ndarray,
    dow: np.ndarray,
    window_start: np.ndarray,
    enabled: frozenset[str] = frozenset(BRANCHES),
    transitional: Tensor | None = None,
) -> Tensor:
    """Concatenate the five projected branches into a ``B x T x N x 5d`` tensor.

    ``x`` is ``B x T x N x F``; ``tod``/``dow`` are ``B x T`` slot indices and
    ``window_start`` the absolute first step of every window. A branch missing
    from ``enabled`` contributes constant zeros. ``transitional`` may carry a
    precomputed softmax-normalized transitional prompt.
    """
    b, t, n, _ = x.shape
    tod = np.asarray(tod)
    dow = np.asarray(dow)
    d = fc["input"][0].shape[1]
    if bank.spatial.shape[0] != n:
        raise DimensionError(f"fuse: input has {n} nodes but spatial prompt has {bank.spatial.shape[0]}")
    target = (b, t, n, d)
    parts = []
    for name in BRANCHES:
        if name not in enabled:
            parts.append(Tensor(np.zeros(target if name == "input" else (d,))))
            continue
        w, bias = fc[name]
        if name == "input":
            part = tn.affine(x, w, bias)
        elif name == "spatial":
            part = tn.affine(bank.spatial, w, bias)
        elif name == "transitional":
            beta = transitional if transitional is not None else bank.transitional()
            n_t = beta.shape[0]
            slots = (np.asarray(window_start)[:, None] + np.arange(t)[None, :]) % n_t
            if slots.size < n_t:
                part = tn.affine(tn.gather(beta, slots, axis=0), w, bias)
            else:
                part = tn.gather(tn.affine(beta, w, bias), slots, axis=0)
        else:
            table = bank.tod if name == "tod" else bank.dow
            idx = tod if name == "tod" else dow
            if idx.shape != (b, t):
                raise DimensionError(f"fuse: {name} indices {idx.shape} != {(b, t)}")
            looked = tn.gather(tn.affine(table, w, bias), idx, axis=0)  # B x T x d
            part = tn.reshape(looked, (b, t, 1, d))
        parts.append(part)
    # parts broadcast into one buffer instead of being expanded one by one
    return tn.concat(parts, axis=-1, broadcast=True)
