"""Variational information-bottleneck student: prompt fusion, MLP encoder to a
per-node Gaussian latent, reparameterized sampling and an MLP decoder."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tn
from .prompts import BRANCHES, PromptBank, fuse
from .tensor import DimensionError, Tensor

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0

Layer = tuple[Tensor, Tensor]


@dataclass(frozen=True)
class StudentConfig:
    num_nodes: int
    steps_per_day: int
    num_features: int = 1
    history: int = 12
    horizon: int = 12
    d: int = 64
    d_z: int = 64


@dataclass
class LatentDist:
    mu: Tensor
    logvar: Tensor

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.logvar.data)


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> Layer:
    bound = 1.0 / np.sqrt(fan_in)
    w = tn.parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    b = tn.parameter(rng.uniform(-bound, bound, size=(fan_out,)))
    return w, b


def mlp(x: Tensor, layers: list[Layer]) -> Tensor:
    """Affine layers with a rectifier between them (none after the last)."""
    for i, (w, b) in enumerate(layers):
        x = tn.affine(x, w, b)
        if i < len(layers) - 1:
            x = tn.relu(x)
    return x


def encode(fused: Tensor, layers: list[Layer]) -> LatentDist:
    """Map ``B x T x N x C`` fused inputs to per-node ``(mu, logvar)`` of shape ``B x N x d_z``."""
    if fused.ndim != 4:
        raise DimensionError(f"encode: expected B x T x N x C input, got {fused.shape}")
    b, t, n, c = fused.shape
    if layers[0][0].shape[0] != t * c:
        raise DimensionError(f"encode: flattened width {t * c} != encoder input {layers[0][0].shape[0]}")
    out_width = layers[-1][0].shape[1]
    if out_width % 2:
        raise DimensionError(f"encode: output width {out_width} is not 2 * d_z")
    per_node = tn.transpose(fused, (0, 2, 1, 3), (b, n, t * c))
    out = mlp(per_node, layers)
    d_z = out_width // 2
    mu = tn.index(out, (Ellipsis, slice(0, d_z)))
    logvar = tn.clip(tn.index(out, (Ellipsis, slice(d_z, None))), LOGVAR_MIN, LOGVAR_MAX)
    return LatentDist(mu, logvar)


def reparameterize(dist: LatentDist, eps: np.ndarray | None, train: bool) -> Tensor:
    """``mu + exp(logvar / 2) * eps`` in training mode, ``mu`` otherwise."""
    if not train or eps is None:
        return dist.mu
    if eps.shape != dist.mu.shape:
        raise DimensionError(f"reparameterize: noise {eps.shape} != latent {dist.mu.shape}")
    sigma = tn.exp(tn.mul(dist.logvar, 0.5))
    return tn.add(dist.mu, tn.mul(sigma, eps))


def decode(z: Tensor, layers: list[Layer], horizon: int, num_features: int) -> Tensor:
    """Map ``B x N x d_z`` latents to a ``B x T' x N x F`` forecast."""
    if z.ndim != 3 or z.shape[-1] != layers[0][0].shape[0]:
        raise DimensionError(f"decode: latent {z.shape} does not match decoder input {layers[0][0].shape[0]}")
    if layers[-1][0].shape[1] != horizon * num_features:
        raise DimensionError("decode: decoder output width != horizon * features")
    b, n, _ = z.shape
    out = mlp(z, layers)
    return tn.transpose(tn.reshape(out, (b, n, horizon, num_features)), (0, 2, 1, 3))


def kl_divergence(dist: LatentDist) -> Tensor:
    """Mean over latent coordinates of ``KL(N(mu, sigma^2) || N(0, 1))``."""
    terms = tn.expm1(dist.logvar) - dist.logvar + tn.square(dist.mu)
    return tn.mul(tn.mean(terms), 0.5)


class StudentModel:
    """Prompt bank, five fusion projections, encoder and decoder.

    ``prompts`` lists the enabled prompt branches; the raw-input branch is
    always on. Disabled branches feed zeros and their tables receive no gradient.
    """

    def __init__(self, cfg: StudentConfig, rng: np.random.Generator, prompts=("spatial", "transitional", "tod", "dow")):
        self.cfg = cfg
        self.enabled = frozenset(("input", *prompts))
        unknown = self.enabled - set(BRANCHES)
        if unknown:
            raise ValueError(f"unknown prompt branches {sorted(unknown)}")
        d = cfg.d
        self.bank = PromptBank.init(rng, cfg.num_nodes, cfg.steps_per_day, d)
        fan_in = {"input": cfg.num_features}
        self.fc = {name: init_linear(rng, fan_in.get(name, d), d) for name in BRANCHES}
        self.encoder = [
            init_linear(rng, cfg.history * 5 * d, d),
            init_linear(rng, d, d),
            init_linear(rng, d, 2 * cfg.d_z),
        ]
        self.decoder = [
            init_linear(rng, cfg.d_z, d),
            init_linear(rng, d, d),
            init_linear(rng, d, cfg.horizon * cfg.num_features),
        ]
        for name in {"spatial", "transitional", "tod", "dow"} - self.enabled:
            for t in self._branch_tables(name):
                t.data = np.zeros_like(t.data)

    def _branch_tables(self, name: str) -> list[Tensor]:
        b = self.bank
        return {
            "spatial": [b.spatial],
            "transitional": [b.core, b.temporal_factor, b.spatial_factor],
            "tod": [b.tod],
            "dow": [b.dow],
        }[name]

    def named_parameters(self) -> dict[str, Tensor]:
        out = dict(self.bank.named())
        for name, (w, b) in self.fc.items():
            out[f"fc.{name}.weight"], out[f"fc.{name}.bias"] = w, b
        for prefix, layers in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i, (w, b) in enumerate(layers):
                out[f"{prefix}.{i}.weight"], out[f"{prefix}.{i}.bias"] = w, b
        return out

    def trainable(self) -> dict[str, Tensor]:
        """Parameters the optimizer updates; tables and projections of disabled prompts are frozen."""
        frozen = set()
        for name in {"spatial", "transitional", "tod", "dow"} - self.enabled:
            frozen.update(id(t) for t in self._branch_tables(name))
            frozen.update(id(t) for t in self.fc[name])
        return {k: v for k, v in self.named_parameters().items() if id(v) not in frozen}

    def config_dict(self) -> dict:
        return {**asdict(self.cfg), "prompts": sorted(self.enabled - {"input"})}

    def forward(self, x: np.ndarray, tod, dow, start, eps: np.ndarray | None = None,
                train: bool = False, transitional: Tensor | None = None) -> tuple[Tensor, LatentDist]:
        """Forecast in normalized units for a batch ``x`` of shape ``B x T x N x F``."""
        fused = fuse(Tensor(x), self.bank, self.fc, tod, dow, start, self.enabled, transitional)
        dist = encode(fused, self.encoder)
        z = reparameterize(dist, eps, train)
        y_hat = decode(z, self.decoder, self.cfg.horizon, self.cfg.num_features)
        return y_hat, dist

    def frozen_transitional(self) -> Tensor | None:
        if "transitional" not in self.enabled:
            return None
        return self.bank.transitional().detach()

    def predict(self, x: np.ndarray, tod, dow, start, transitional: Tensor | None = None) -> np.ndarray:
        """Deterministic eval-mode forecast (latent mean, no sampling).

        Pass ``transitional=model.frozen_transitional()`` to reuse the prompt across calls.
        """
        if transitional is None:
            transitional = self.frozen_transitional()
        y_hat, _ = self.forward(x, tod, dow, start, train=False, transitional=transitional)
        return y_hat.data
