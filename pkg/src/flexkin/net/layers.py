"""Building blocks of the fusion layers.

Multi-view feature maps use the layout (..., K, T, C): views, frames,
channels.  Parameters are plain autodiff tensors passed in explicitly.
"""

from __future__ import annotations

import numpy as np

from flexkin import autodiff as ad
from flexkin.autodiff import conv1d

__all__ = ["conv1d", "channel_norm", "multiview_conv", "view_attention", "collapse_views", "init_uniform"]


def init_uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return ad.parameter(rng.uniform(-bound, bound, size=shape))


def channel_norm(x, gain=None, bias=None, eps=1e-5):
    """Normalize each feature vector over its channel axis (per sample, per frame)."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    out = xc / (var + eps).sqrt()
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out


def multiview_conv(x, w_self, w_cross, bias=None):
    """Temporal convolution that mixes information across all views.

    ``x`` is (..., K, T, C).  Each view's output combines a convolution of
    its own stream with a convolution of the view-averaged stream, so every
    output sees a temporal window of every view.  The same kernels serve any
    K, and with K = 1 the layer is an ordinary conv1d with kernel
    ``w_self + w_cross``.
    """
    if x.ndim < 3:
        raise ValueError(f"expected (..., K, T, C), got shape {x.shape}")
    pooled = x.mean(axis=-3, keepdims=True)
    out = conv1d(x, w_self) + conv1d(pooled, w_cross)
    if bias is not None:
        out = out + bias
    return out


def view_attention(x, wq, wk, wv, wo, bo, heads, return_weights=False):
    """Multi-head self-attention across views, independently per frame.

    ``x`` is (..., K, T, C) and the result has the same shape (residual
    added).  Softmax runs over the K views.
    """
    *lead, K, T, C = x.shape
    if C % heads:
        raise ValueError(f"channels {C} not divisible by {heads} heads")
    d = C // heads
    n = len(lead)
    xt = x.swapaxes(n, n + 1)                                  # (..., T, K, C)

    def split(h):
        return h.reshape(*lead, T, K, heads, d).swapaxes(n + 1, n + 2)   # (..., T, H, K, d)

    Q, Kk, Vv = split(xt @ wq), split(xt @ wk), split(xt @ wv)
    scores = (Q @ Kk.swapaxes(-1, -2)) * (1.0 / np.sqrt(d))   # (..., T, H, K, K)
    A = scores.softmax(axis=-1)
    mixed = (A @ Vv).swapaxes(n + 1, n + 2).reshape(*lead, T, K, C)
    out = (mixed @ wo + bo).swapaxes(n, n + 1)
    y = x + out
    if return_weights:
        return y, A
    return y


def collapse_views(x, w, b):
    """Merge (..., K, T, C) into one fused stream (..., T, C).

    Each view gets a per-frame score from its features; the softmax of the
    scores over views weights the sum.
    """
    score = (x @ w + b)                                        # (..., K, T)
    alpha = score.softmax(axis=-2)
    return (x * alpha.expand_dims(-1)).sum(axis=-3)
