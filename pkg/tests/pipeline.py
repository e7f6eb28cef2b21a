"""Flatten every student parameter into one vector so the whole forward pass
(prompts, fusion, encoder, reparameterization, decoder, loss) can be
finite-difference checked as a single scalar function."""
import numpy as np

from stdistill import tensor as tn
from stdistill.losses import LossConfig, total_loss
from stdistill.prompts import PromptBank, fuse
from stdistill.student import StudentConfig, StudentModel, decode, encode, kl_divergence, reparameterize


def tiny_problem(seed=0, n=3, t=2, horizon=2, d=4, d_z=4, steps_per_day=4):
    rng = np.random.default_rng(seed)
    cfg = StudentConfig(num_nodes=n, steps_per_day=steps_per_day, num_features=1, history=t,
                        horizon=horizon, d=d, d_z=d_z)
    model = StudentModel(cfg, rng)
    batch = 2
    x = rng.normal(size=(batch, t, n, 1))
    y = rng.normal(size=(batch, horizon, n, 1))
    tod = rng.integers(0, 288, size=(batch, t))
    dow = rng.integers(0, 7, size=(batch, t))
    start = np.array([1, 6])
    eps = rng.standard_normal((batch, n, d_z))
    return model, dict(x=x, y=y, tod=tod, dow=dow, start=start, eps=eps)


def flatten(model):
    named = model.named_parameters()
    names = list(named)
    shapes = [named[k].shape for k in names]
    vec = np.concatenate([named[k].data.reshape(-1) for k in names])
    return names, shapes, vec


def pipeline_loss(model, inputs, loss_cfg=None):
    """Return ``f(theta)`` computing the total loss with parameters sliced out of ``theta``."""
    loss_cfg = loss_cfg or LossConfig(kd_weight=0.5, beta1=0.3, beta2=0.2, delta=0.1)
    names, shapes, _ = flatten(model)
    teacher = inputs["y"]  # perfect teacher keeps the gate away from its switching point

    def f(theta):
        params, pos = {}, 0
        for name, shape in zip(names, shapes):
            size = int(np.prod(shape))
            params[name] = tn.reshape(tn.index(theta, slice(pos, pos + size)), shape)
            pos += size
        bank = PromptBank(
            spatial=params["prompt.spatial"], tod=params["prompt.tod"], dow=params["prompt.dow"],
            core=params["prompt.tucker_core"], temporal_factor=params["prompt.tucker_temporal"],
            spatial_factor=params["prompt.tucker_spatial"],
        )
        fc = {b: (params[f"fc.{b}.weight"], params[f"fc.{b}.bias"]) for b in model.fc}
        enc = [(params[f"encoder.{i}.weight"], params[f"encoder.{i}.bias"]) for i in range(len(model.encoder))]
        dec = [(params[f"decoder.{i}.weight"], params[f"decoder.{i}.bias"]) for i in range(len(model.decoder))]
        fused = fuse(tn.Tensor(inputs["x"]), bank, fc, inputs["tod"], inputs["dow"], inputs["start"])
        dist = encode(fused, enc)
        z = reparameterize(dist, inputs["eps"], train=True)
        y_hat = decode(z, dec, model.cfg.horizon, model.cfg.num_features)
        loss, _ = total_loss(y_hat, inputs["y"], teacher, kl_divergence(dist), loss_cfg)
        return loss

    return f
