"""Training loop, learning-rate schedule, ablation variants, checkpoints and evaluation."""
from __future__ import annotations

import copy
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import data as stdata
from . import tensor as tn
from .data import Normalizer, STGraph, STSeries, WindowBatch
from .losses import LossConfig, total_loss
from .metrics import EvalReport, mae, report
from .optim import SGD, Adam, clip_grad_norm
from .student import StudentConfig, StudentModel, kl_divergence
from .teacher import check_alignment

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"STCK1\n"
_U64 = struct.Struct("<Q")

VARIANTS = ("full", "w/o-KD", "w/o-IB", "w/o-TB", "w/o-S-Pro", "w/o-T-Pro", "w/o-Tran-Pro", "MLP")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 0.002
    lr_decay: float = 0.5
    milestones: tuple[int, ...] = (1, 50, 100)
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    history: int = 12
    horizon: int = 12
    d: int = 64
    d_z: int = 64
    patience: int = 15
    clip_norm: float = 5.0
    optimizer: str = "adam"
    no_kd: bool = False
    no_ib: bool = False
    no_tb: bool = False
    no_s_pro: bool = False
    no_t_pro: bool = False
    no_tran_pro: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs and batch_size must be >= 1 and lr > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    @property
    def prompts(self) -> tuple[str, ...]:
        off = {"spatial": self.no_s_pro, "tod": self.no_t_pro, "dow": self.no_t_pro,
               "transitional": self.no_tran_pro}
        return tuple(k for k in ("spatial", "transitional", "tod", "dow") if not off[k])

    @property
    def effective_loss(self) -> LossConfig:
        loss = self.loss
        if self.no_kd:
            loss = replace(loss, kd_weight=0.0)
        if self.no_ib:
            loss = replace(loss, beta1=0.0, beta2=0.0)
        if self.no_tb:
            loss = replace(loss, bounded=False)
        return loss

    def to_dict(self) -> dict:
        out = asdict(self)
        out["milestones"] = list(self.milestones)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if "loss" in doc:
            doc["loss"] = LossConfig(**doc["loss"])
        if "milestones" in doc:
            doc["milestones"] = tuple(doc["milestones"])
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in known})


def lr_at(epoch: int, base: float = 0.002, decay: float = 0.5, milestones=(1, 50, 100)) -> float:
    """Step schedule: multiply ``base`` by ``decay`` once for every milestone ``<= epoch`` (0-based)."""
    lr = base
    for m in milestones:
        if epoch >= m:
            lr *= decay
    return lr


def ablate(variant: str, base: TrainConfig) -> TrainConfig:
    flags = dict(no_kd=False, no_ib=False, no_tb=False, no_s_pro=False, no_t_pro=False, no_tran_pro=False)
    if variant == "full":
        pass
    elif variant == "w/o-KD":
        flags["no_kd"] = True
    elif variant == "w/o-IB":
        flags["no_ib"] = True
    elif variant == "w/o-TB":
        flags["no_tb"] = True
    elif variant == "w/o-S-Pro":
        flags["no_s_pro"] = True
    elif variant == "w/o-T-Pro":
        flags["no_t_pro"] = True
    elif variant == "w/o-Tran-Pro":
        flags["no_tran_pro"] = True
    elif variant == "MLP":
        flags = {k: True for k in flags}
    else:
        raise stdata.ConfigError(f"unknown ablation variant {variant!r}; choose from {', '.join(VARIANTS)}")
    return replace(base, **flags)


# ----------------------------------------------------------------------------- data preparation


@dataclass
class PreparedData:
    graph: STGraph
    series: STSeries
    normalizer: Normalizer
    windows: WindowBatch
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def split(self, name: str) -> WindowBatch:
        idx = {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]
        return self.windows.take(idx)

    def split_index(self, name: str) -> np.ndarray:
        return {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]

    @property
    def teacher_shape(self) -> tuple[int, ...]:
        return (len(self.windows),) + self.windows.y.shape[1:]


def prepare(graph: STGraph, series: STSeries, history: int, horizon: int) -> PreparedData:
    samples = stdata.make_windows(series, history, horizon)
    train, val, _ = stdata.split(samples)
    normalizer = Normalizer().fit(stdata.train_portion(series, history, horizon))
    n = len(samples)
    idx = np.arange(n)
    return PreparedData(
        graph=graph,
        series=series,
        normalizer=normalizer,
        windows=stdata.stack(samples),
        train_idx=idx[: len(train)],
        val_idx=idx[len(train): len(train) + len(val)],
        test_idx=idx[len(train) + len(val):],
    )


# ----------------------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    meta: dict

    def model(self) -> StudentModel:
        student = self.meta["student"]
        cfg = StudentConfig(**{k: v for k, v in student.items() if k != "prompts"})
        model = StudentModel(cfg, np.random.default_rng(0), prompts=tuple(student["prompts"]))
        named = model.named_parameters()
        missing = set(named) - set(self.params)
        if missing:
            raise ValueError(f"checkpoint lacks parameters {sorted(missing)}")
        for name, t in named.items():
            if self.params[name].shape != t.shape:
                raise ValueError(f"checkpoint tensor {name} has shape {self.params[name].shape}, model expects {t.shape}")
            t.data = self.params[name].copy()
        return model

    def normalizer(self) -> Normalizer:
        return Normalizer(self.params["normalizer.mean"].copy(), self.params["normalizer.std"].copy())

    def save(self, path) -> None:
        meta = json.dumps(self.meta, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(_U64.pack(len(meta)))
            fh.write(meta)
            fh.write(_U64.pack(len(self.params)))
            for name in sorted(self.params):
                arr = np.ascontiguousarray(self.params[name], dtype="<f8")
                raw_name = name.encode()
                fh.write(_U64.pack(len(raw_name)))
                fh.write(raw_name)
                fh.write(_U64.pack(arr.ndim))
                for dim in arr.shape:
                    fh.write(_U64.pack(dim))
                fh.write(arr.tobytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        raw = Path(path).read_bytes()
        if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
            raise ValueError("bad magic, expected STCK1")
        pos = len(CHECKPOINT_MAGIC)

        def u64():
            nonlocal pos
            (v,) = _U64.unpack_from(raw, pos)
            pos += 8
            return v

        meta_len = u64()
        meta = json.loads(raw[pos:pos + meta_len])
        pos += meta_len
        params = {}
        for _ in range(u64()):
            name_len = u64()
            name = raw[pos:pos + name_len].decode()
            pos += name_len
            shape = tuple(u64() for _ in range(u64()))
            count = int(np.prod(shape))
            params[name] = np.frombuffer(raw, "<f8", count, pos).reshape(shape).astype(np.float64)
            pos += count * 8
        if pos != len(raw):
            raise ValueError(f"trailing bytes in checkpoint at offset {pos}")
        return cls(params, meta)


def _snapshot(model: StudentModel) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in model.named_parameters().items()}


# ----------------------------------------------------------------------------- training


def train(data: PreparedData, teacher: np.ndarray | None, cfg: TrainConfig,
          on_epoch=None) -> tuple[Checkpoint, list[dict]]:
    """Mini-batch training of the student.

    ``teacher`` holds predictions in original units for every window of
    ``data`` (not just the training split). Returns the best-validation
    checkpoint and one log record per completed epoch.
    """
    loss_cfg = cfg.effective_loss
    use_teacher = loss_cfg.kd_weight > 0
    if use_teacher:
        if teacher is None:
            raise TrainingError("distillation is enabled but no teacher predictions were given")
        check_alignment(teacher, data.teacher_shape)

    init_ss, order_ss, noise_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng = np.random.default_rng(init_ss)
    order_rng = np.random.default_rng(order_ss)
    noise_rng = np.random.default_rng(noise_ss)

    series = data.series
    student_cfg = StudentConfig(
        num_nodes=series.num_nodes, steps_per_day=series.steps_per_day, num_features=series.num_features,
        history=cfg.history, horizon=cfg.horizon, d=cfg.d, d_z=cfg.d_z,
    )
    model = StudentModel(student_cfg, init_rng, prompts=cfg.prompts)
    params = list(model.trainable().values())
    opt = Adam(params, lr=cfg.lr) if cfg.optimizer == "adam" else SGD(params, lr=cfg.lr)

    norm = data.normalizer
    tr = data.split("train")
    x_tr, y_tr = norm.apply(tr.x), norm.apply(tr.y)
    t_tr = norm.apply(teacher[data.train_idx]) if use_teacher else None
    val = data.split("val")
    x_val = norm.apply(val.x)

    logs: list[dict] = []
    best = (np.inf, -1, _snapshot(model))
    stale = 0
    n_train = len(tr)
    for epoch in range(cfg.epochs):
        opt.lr = lr_at(epoch, cfg.lr, cfg.lr_decay, cfg.milestones)
        order = order_rng.permutation(n_train)
        sums = {"l_pre": 0.0, "l_kd": 0.0, "l_ib": 0.0}
        batches = 0
        for bi, i in enumerate(range(0, n_train, cfg.batch_size)):
            idx = order[i:i + cfg.batch_size]
            for p in params:
                p.zero_grad()
            eps = None
            if not cfg.no_ib:
                eps = noise_rng.standard_normal((len(idx), series.num_nodes, cfg.d_z))
            y_hat, dist = model.forward(x_tr[idx], tr.tod[idx], tr.dow[idx], tr.start[idx], eps=eps, train=True)
            kl = None if cfg.no_ib else kl_divergence(dist)
            loss, parts = total_loss(y_hat, y_tr[idx], t_tr[idx] if use_teacher else None, kl, loss_cfg)
            if not np.isfinite(loss.item()):
                raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch}, batch {bi}: {parts}")
            loss.backward()
            if cfg.clip_norm > 0:
                clip_grad_norm(params, cfg.clip_norm)
            opt.step()
            for k in sums:
                sums[k] += parts[k]
            batches += 1

        val_pred = norm.invert(model.predict(x_val, val.tod, val.dow, val.start))
        record = {"epoch": epoch, "lr": opt.lr, **{k: v / batches for k, v in sums.items()},
                  "val_mae": mae(val_pred, val.y)}
        logs.append(record)
        logger.info("epoch %d %s", epoch, record)
        if on_epoch is not None:
            on_epoch(record)

        if record["val_mae"] < best[0]:
            best = (record["val_mae"], epoch, _snapshot(model))
            stale = 0
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                break

    for name, t in model.named_parameters().items():
        t.data = best[2][name]
    params_out = dict(best[2])
    params_out["normalizer.mean"] = np.asarray(norm.mean, dtype=np.float64)
    params_out["normalizer.std"] = np.asarray(norm.std, dtype=np.float64)
    meta = {
        "student": model.config_dict(),
        "train": cfg.to_dict(),
        "epoch": best[1],
        "best_val_mae": best[0],
        "rng_state": {"order": order_rng.bit_generator.state, "noise": noise_rng.bit_generator.state},
    }
    return Checkpoint(params_out, copy.deepcopy(meta)), logs


# ----------------------------------------------------------------------------- evaluation


def predict_split(model: StudentModel, normalizer: Normalizer, windows: WindowBatch,
                  corruption: tuple[str, float, int] | None = None, batch_size: int = 256) -> np.ndarray:
    """Forecasts in original units; ``corruption`` is ``(mode, gamma, seed)`` with mode noise|missing."""
    raw = windows.x
    if corruption is not None and corruption[0] == "missing":
        raw = stdata.corrupt_missing(raw, corruption[1], corruption[2])
    x = normalizer.apply(raw)
    if corruption is not None and corruption[0] == "noise":
        x = stdata.corrupt_noise(x, corruption[1], corruption[2])
    elif corruption is not None and corruption[0] not in ("noise", "missing"):
        raise ValueError(f"unknown corruption mode {corruption[0]!r}")
    beta = model.frozen_transitional()
    out = []
    for i in range(0, len(windows), batch_size):
        sl = slice(i, i + batch_size)
        out.append(model.predict(x[sl], windows.tod[sl], windows.dow[sl], windows.start[sl], beta))
    return normalizer.invert(np.concatenate(out, axis=0))


def evaluate(checkpoint: Checkpoint, data: PreparedData, split_name: str = "test",
             corruption: tuple[str, float, int] | None = None, label: str = "") -> EvalReport:
    model = checkpoint.model()
    cfg = model.cfg
    series = data.series
    expected = (series.num_nodes, series.steps_per_day, series.num_features)
    if (cfg.num_nodes, cfg.steps_per_day, cfg.num_features) != expected:
        raise ValueError(
            f"checkpoint expects (nodes, steps_per_day, features) = "
            f"{(cfg.num_nodes, cfg.steps_per_day, cfg.num_features)}, dataset has {expected}"
        )
    windows = data.split(split_name)
    if len(windows) == 0:
        raise ValueError(f"split {split_name!r} is empty")
    if windows.x.shape[1] != cfg.history or windows.y.shape[1] != cfg.horizon:
        raise ValueError("checkpoint history/horizon differ from the prepared windows")
    pred = predict_split(model, checkpoint.normalizer(), windows, corruption)
    return report(pred, windows.y, label)


def parameter_grad_norms(model: StudentModel) -> dict[str, float]:
    return {k: (0.0 if v.grad is None else float(np.linalg.norm(v.grad))) for k, v in model.named_parameters().items()}

