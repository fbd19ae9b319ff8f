"""Training objectives.

Every loss reduces with a mean over all elements of the compared tensors.
Inputs may be autodiff tensors or arrays; results are tensors.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from flexkin import autodiff as ad
from flexkin.kinematics import temporal_diff_axis


class NonFiniteLoss(ValueError):
    """A loss term evaluated to NaN or infinity."""


@dataclass
class LossWeights:
    skeleton: float = 0.1
    rotation_gan: float = 1.0
    root: float = 1.3
    foot_labels: float = 0.5
    foot_contact: float = 0.5

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be non-negative")

    def to_dict(self):
        return asdict(self)


def _mse(pred, target, what):
    pred = ad.as_tensor(pred)
    target = np.asarray(getattr(target, "data", target), float)
    if pred.shape != target.shape:
        raise ValueError(f"{what}: shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target
    return (d * d).mean()


def loss_position(pred_positions, gt_positions):
    """MSE between root-zeroed predicted positions and root-zeroed ground truth."""
    return _mse(pred_positions, gt_positions, "loss_position")


def loss_skeleton(pred_s, gt_s):
    return _mse(pred_s, gt_s, "loss_skeleton")


def loss_gan(real, fake, D, role):
    """Least-squares GAN objective for one discriminator.

    ``role='discriminator'``: mean (D(real) - 1)^2 + mean D(fake)^2, with the
    fake stream detached.  ``role='generator'``: mean (1 - D(fake))^2.
    """
    if role == "discriminator":
        fake = ad.as_tensor(fake).detach()
        r = D(real) - 1.0
        f = D(fake)
        return (r * r).mean() + (f * f).mean()
    if role == "generator":
        f = 1.0 - D(fake)
        return (f * f).mean()
    raise ValueError(f"unknown role {role!r}")


def loss_root(pred_depth, Z_r):
    """MSE between the predicted root depth and the true depth, (..., T, K)."""
    return _mse(pred_depth, Z_r, "loss_root")


def loss_foot_labels(pred_f, gt_f):
    return _mse(pred_f, gt_f, "loss_foot_labels")


def loss_foot_contact(positions, gt_f, feet):
    """Squared foot velocity during labeled contact frames.

    ``positions`` (..., T, K, J, 3), ``gt_f`` (..., T, 2), ``feet`` the two
    foot joint indices.  Frame t's label masks the displacement t -> t+1;
    the mean runs over all (frame, view, foot) entries.
    """
    positions = ad.as_tensor(positions)
    if positions.shape[-4] < 2:
        raise ValueError("loss_foot_contact needs at least 2 frames")
    foot = positions[..., list(feet), :]                       # (..., T, K, 2, 3)
    vel = temporal_diff_axis(foot, -4)
    speed2 = (vel * vel).sum(axis=-1)                          # (..., T-1, K, 2)
    mask = np.asarray(gt_f, float)[..., :-1, None, :]
    return (speed2 * mask).mean()


def loss_total(components, weights=None):
    """Weighted sum of the component losses.

    ``components`` maps ``position``, ``skeleton``, ``root``, ``foot_labels``,
    ``foot_contact`` to scalars and ``gan`` to a sequence of per-discriminator
    losses (joint terms and per-view root terms).
    """
    w = weights or LossWeights()
    for name, value in components.items():
        vals = value if name == "gan" else [value]
        for v in vals:
            if not np.all(np.isfinite(getattr(v, "data", v))):
                raise NonFiniteLoss(f"non-finite {name} loss component")
    gan = components.get("gan", [])
    gan_sum = ad.as_tensor(0.0)
    for g in gan:
        gan_sum = gan_sum + g
    total = ad.as_tensor(components.get("position", 0.0))
    total = total + w.skeleton * ad.as_tensor(components.get("skeleton", 0.0))
    total = total + w.rotation_gan * gan_sum
    total = total + w.root * ad.as_tensor(components.get("root", 0.0))
    total = total + w.foot_labels * ad.as_tensor(components.get("foot_labels", 0.0))
    total = total + w.foot_contact * ad.as_tensor(components.get("foot_contact", 0.0))
    return total
