"""Adversarial training loop."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from flexkin import io as fio
from flexkin import losses
from flexkin.kinematics import temporal_diff_axis
from flexkin.net.model import FlexModel, FusionConfig
from flexkin.synthstudio import FEET

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    data: str = ""
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 42
    disc_steps: int = 1          # D steps per G step
    window: int = 0              # random temporal crop length; 0 = full sequences
    min_views: int = 1
    max_views: int = 0           # 0 = all available views
    length_unit: float = 1.0     # meters per unit of the metric losses
    fusion: FusionConfig = field(default_factory=FusionConfig)
    weights: losses.LossWeights = field(default_factory=losses.LossWeights)

    def __post_init__(self):
        if isinstance(self.fusion, dict):
            self.fusion = FusionConfig(**self.fusion)
        if isinstance(self.weights, dict):
            self.weights = losses.LossWeights(**self.weights)
        for name in ("epochs", "batch_size", "disc_steps", "min_views"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not self.length_unit > 0:
            raise ValueError("length_unit must be positive")
        if self.window and self.window < self.fusion.disc_kernel + 1:
            raise ValueError("window too short for the discriminators")

    def to_dict(self):
        d = asdict(self)
        d["fusion"] = self.fusion.to_dict()
        d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_file(cls, path, **overrides):
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        doc.update({k: v for k, v in overrides.items() if v is not None})
        if "FLEXKIN_SEED" in os.environ:
            doc["seed"] = int(os.environ["FLEXKIN_SEED"])
        return cls(**doc)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


NonFiniteLoss = losses.NonFiniteLoss


@dataclass
class Batch:
    V: np.ndarray          # (B, K, T, J, 3) model layout
    pos0: np.ndarray       # (B, T, K, J, 3) root-zeroed camera-frame ground truth
    Z_r: np.ndarray        # (B, T, K)
    s: np.ndarray          # (B, L)
    f: np.ndarray          # (B, T, 2)
    dq_real: np.ndarray    # (B, T-1, J-1, 4)
    droot_real: np.ndarray # (B, T-1, K, 4)
    image_size: tuple


def make_batch(records, views=None, start=0, length=None):
    views = list(range(records[0].K)) if views is None else list(views)
    stop = None if not length else start + length
    sl = slice(start, stop)
    V = np.stack([r.V[sl][:, views] for r in records])
    pos = np.stack([r.positions[sl][:, views] for r in records])
    q = np.stack([r.motion.q[sl] for r in records])
    rr = np.stack([r.motion.root_rot[sl][:, views] for r in records])
    rig = records[0].rig
    return Batch(
        V=np.swapaxes(V, 1, 2),
        pos0=pos - pos[..., :1, :],
        Z_r=np.stack([r.Z_r[sl][:, views] for r in records]),
        s=np.stack([r.motion.s for r in records]),
        f=np.stack([r.motion.f[sl] for r in records]),
        dq_real=np.diff(q, axis=1),
        droot_real=np.diff(rr, axis=1),
        image_size=tuple(rig.image_size) if rig is not None else (1000, 1000),
    )


def _gan_sum(D, real, fake, role, n_terms):
    # every discriminator term is a mean over the batch, so the sum over
    # discriminators equals n_terms times the mean over all of them
    return losses.loss_gan(real, fake, D, role) * float(n_terms)


def generator_losses(model, batch, weights, rng=None, length_unit=1.0):
    """Total generator objective, its components and the forward outputs.

    Lengths enter the metric losses in units of ``length_unit`` meters.
    """
    out = model.forward(batch.V, batch.image_size, rng)
    c = 1.0 / length_unit
    pos0 = model.positions(out, root_zeroed=True)
    full = model.positions(out)
    feet = [model.topology.index(n) for n in FEET]
    dq = temporal_diff_axis(out["q"], -3)
    droot = temporal_diff_axis(out["root_rot"], -3)
    J1, K = dq.shape[-2], droot.shape[-2]
    comps = {
        "position": losses.loss_position(pos0 * c, batch.pos0 * c),
        "skeleton": losses.loss_skeleton(out["s"] * c, batch.s * c),
        "root": losses.loss_root(out["root_pos"][..., 2] * c, batch.Z_r * c),
        "foot_labels": losses.loss_foot_labels(out["f"], batch.f),
        "foot_contact": losses.loss_foot_contact(full * c, batch.f, feet),
        "gan": [
            _gan_sum(model.discriminate_joints, batch.dq_real, dq, "generator", J1),
            _gan_sum(model.discriminate_root, batch.droot_real, droot, "generator", K),
        ],
    }
    return losses.loss_total(comps, weights), comps, out


def discriminator_loss(model, batch, out):
    dq = temporal_diff_axis(out["q"], -3).detach()
    droot = temporal_diff_axis(out["root_rot"], -3).detach()
    J1, K = dq.shape[-2], droot.shape[-2]
    return (_gan_sum(model.discriminate_joints, batch.dq_real, dq, "discriminator", J1)
            + _gan_sum(model.discriminate_root, batch.droot_real, droot, "discriminator", K))


LOG_FIELDS = ["step", "epoch", "views", "total", "position", "skeleton", "root", "foot_labels",
              "foot_contact", "gan_generator", "discriminator"]


def _check(name, value, step):
    v = float(np.asarray(getattr(value, "data", value)))
    if not np.isfinite(v):
        raise NonFiniteLoss(f"non-finite {name} loss ({v}) at step {step}")
    return v


def train(config, out_dir, records=None, progress=None):
    """Train a model; writes ``out_dir`` checkpoint, per-epoch checkpoints and a loss log."""
    if records is None:
        records = fio.read_split(config.data, "train")
    if not records:
        raise ValueError("no training records")
    topology = records[0].motion.topology
    rng = np.random.default_rng(config.seed)
    model = FlexModel(topology, config.fusion, seed=config.seed)
    opt_g = Adam(model.parameters(), config.lr, config.beta1, config.beta2, config.eps)
    opt_d = Adam(model.disc_parameters(), config.lr, config.beta1, config.beta2, config.eps)
    K_all = records[0].K
    max_views = config.max_views or K_all
    T_all = records[0].T
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "loss_log.csv")
    step = 0
    n = len(records)
    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(n)
            for b0 in range(0, n, config.batch_size):
                idx = order[b0:b0 + config.batch_size]
                k = int(rng.integers(config.min_views, max_views + 1))
                views = np.sort(rng.choice(K_all, size=k, replace=False))
                start = int(rng.integers(0, T_all - config.window + 1)) if config.window else 0
                batch = make_batch([records[i] for i in idx], views, start, config.window)

                try:
                    total, comps, out = generator_losses(model, batch, config.weights, rng, config.length_unit)
                except NonFiniteLoss as exc:
                    raise NonFiniteLoss(f"{exc} at step {step} (epoch {epoch})") from exc
                row = {"step": step, "epoch": epoch, "views": k, "total": _check("total", total, step)}
                for name in ("position", "skeleton", "root", "foot_labels", "foot_contact"):
                    row[name] = _check(name, comps[name], step)
                row["gan_generator"] = sum(_check("gan", g, step) for g in comps["gan"])

                opt_g.zero_grad()
                for p in model.disc_parameters():
                    p.grad = None
                total.backward()
                opt_g.step()

                for _ in range(config.disc_steps):
                    opt_d.zero_grad()
                    d_loss = discriminator_loss(model, batch, out)
                    row["discriminator"] = _check("discriminator", d_loss, step)
                    d_loss.backward()
                    opt_d.step()
                writer.writerow(row)
                step += 1
            fh.flush()
            fio.save_checkpoint(os.path.join(out_dir, "epochs", f"epoch_{epoch:03d}"), model,
                                {"epoch": epoch})
            if progress:
                progress(epoch, row)
            log.info("epoch %d total %.5f position %.6f", epoch, row["total"], row["position"])
    fio.save_checkpoint(out_dir, model, {"epoch": config.epochs, "train": config.to_dict()})
    return model, log_path
