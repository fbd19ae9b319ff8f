"""The multi-view motion network and its per-joint discriminators."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from flexkin import autodiff as ad
from flexkin.kinematics import fk_tensor
from flexkin.net.layers import (channel_norm, collapse_views, conv1d, init_uniform, multiview_conv,
                                view_attention)
from flexkin.skeleton import expand_lengths

FUSION_MODES = ("early", "middle", "late")
Q = 4


@dataclass
class FusionConfig:
    channels: int = 48
    heads: int = 4
    mode: str = "early"
    expand_kernel: int = 3
    mv_kernel: int = 3
    eq_kernels: tuple = (3, 5, 7)
    dropout: float = 0.0
    views: int = 4
    disc_channels: int = 16
    disc_kernel: int = 3
    slope: float = 0.2
    pixel_scale: float = 100.0
    focal_guess: float = 1000.0
    depth_scale: float = 5.0
    # camera y points down, so an upright subject is half a turn about x
    root_rest: tuple = (0.0, 1.0, 0.0, 0.0)
    # no loss constrains the image-plane root position, so the emitted xy
    # channels only enter as a bounded fraction of the back-projected ray
    root_xy_residual: float = 0.0
    # joint rotations are identity plus this fraction of the raw output
    rot_scale: float = 1.0
    # the per-view root head also reads that view's normalized 2D input
    root_skip: bool = True
    # the depth loss trains only the root position head; its error is
    # dominated by the unknown focal length and would swamp the shared trunk
    root_detach: bool = False

    def __post_init__(self):
        self.eq_kernels = tuple(self.eq_kernels)
        self.root_rest = tuple(float(v) for v in self.root_rest)
        if len(self.root_rest) != Q or not np.isclose(np.linalg.norm(self.root_rest), 1.0):
            raise ValueError("root_rest must be a unit quaternion")
        if self.channels % self.heads:
            raise ValueError("channels must be divisible by heads")
        if self.mode not in FUSION_MODES:
            raise ValueError(f"mode must be one of {FUSION_MODES}")
        for k in self.eq_kernels + (self.expand_kernel, self.mv_kernel, self.disc_kernel):
            if k % 2 != 1:
                raise ValueError(f"kernel sizes must be odd, got {k}")

    def to_dict(self):
        return asdict(self)


def prepare_input(V, image_size, config):
    """Normalize raw 2D observations for the network.

    ``V`` is (..., K, T, J, 3) in pixels with confidence.  Non-root joints
    become offsets from the root joint divided by ``pixel_scale``; the root
    keeps its offset from the image center.  Returns the feature array
    (..., K, T, 3J) and the root's image-plane direction (..., K, T, 2)
    under the focal-length guess, used to place the root in weak
    perspective.
    """
    V = np.asarray(V, float)
    center = np.asarray(image_size, float) / 2.0
    uv = V[..., :2]
    root = uv[..., :1, :]
    rel = (uv - root) / config.pixel_scale
    rel[..., 0, :] = (root[..., 0, :] - center) / config.pixel_scale
    feat = np.concatenate([rel, V[..., 2:3]], axis=-1)
    feat = feat.reshape(feat.shape[:-2] + (-1,))
    ray = (root[..., 0, :] - center) / config.focal_guess
    return feat, ray


class FlexModel:
    """Fusion layers, encoders and per-joint discriminators.

    ``params`` holds the generator, ``disc_params`` the discriminators;
    both are insertion-ordered dicts of autodiff parameters.
    """

    def __init__(self, topology, config=None, seed=0):
        self.topology = topology
        self.config = config or FusionConfig()
        self.seed = seed
        self.params = {}
        self.disc_params = {}
        rng = np.random.default_rng(seed)
        self._init_generator(rng)
        self._init_discriminators(rng)

    # -- parameters ---------------------------------------------------------------

    def _add(self, store, name, rng, shape, fan_in, zero=False):
        store[name] = ad.parameter(np.zeros(shape)) if zero else init_uniform(rng, shape, fan_in)
        store[name].name = name

    def _conv(self, name, rng, k, cin, cout, store=None):
        store = self.params if store is None else store
        self._add(store, name + ".w", rng, (k, cin, cout), k * cin)
        self._add(store, name + ".b", rng, (cout,), k * cin, zero=True)

    def _norm(self, name, C):
        self.params[name + ".g"] = ad.parameter(np.ones(C))
        self.params[name + ".beta"] = ad.parameter(np.zeros(C))

    def _init_branch(self, tag, rng, with_mv):
        cfg = self.config
        C, J = cfg.channels, self.topology.joint_count
        self._conv(f"{tag}.expand", rng, cfg.expand_kernel, 3 * J, C)
        self._norm(f"{tag}.expand.n", C)
        per_view = {"early": 0, "middle": 1, "late": 2}[cfg.mode]
        for i in range(per_view):
            self._conv(f"{tag}.view{i}", rng, 3, C, C)
            self._norm(f"{tag}.view{i}.n", C)
        if with_mv:
            self._conv(f"{tag}.mv.self", rng, cfg.mv_kernel, C, C)
            self._add(self.params, f"{tag}.mv.cross", rng, (cfg.mv_kernel, C, C), cfg.mv_kernel * C)
            self._norm(f"{tag}.mv.n", C)
        for m in ("q", "k", "v", "o"):
            self._add(self.params, f"{tag}.att.{m}", rng, (C, C), C)
        self._add(self.params, f"{tag}.att.bo", rng, (C,), C, zero=True)
        self._add(self.params, f"{tag}.collapse.w", rng, (C,), C)
        self._add(self.params, f"{tag}.collapse.b", rng, (), C, zero=True)

    def _init_generator(self, rng):
        cfg = self.config
        C, J = cfg.channels, self.topology.joint_count
        L = self.topology.distinct_length_count
        self._init_branch("FS", rng, with_mv=False)
        self._init_branch("FQ", rng, with_mv=True)
        self._conv("ES.hidden", rng, 1, C, C)
        self._conv("ES.out", rng, 1, C, L)
        for k in cfg.eq_kernels:
            self._conv(f"EQ.branch{k}", rng, k, C, C)
            self._norm(f"EQ.branch{k}.n", C)
        self._conv("EQ.merge", rng, 3, C * len(cfg.eq_kernels), C)
        self._norm("EQ.merge.n", C)
        self._conv("EQ.out", rng, 1, C, Q * (J - 1) + 2)
        # depth and rotation get separate hidden layers: the depth loss is in
        # squared meters and would otherwise dominate the shared updates
        cin = 2 * C + (3 * J if cfg.root_skip else 0)
        self._conv("EQ.root.pos.hidden", rng, 3, cin, C)
        self._norm("EQ.root.pos.hidden.n", C)
        self._conv("EQ.root.pos.out", rng, 1, C, 3)
        self._conv("EQ.root.rot.hidden", rng, 3, cin, C)
        self._norm("EQ.root.rot.hidden.n", C)
        self._conv("EQ.root.rot.out", rng, 1, C, Q)

    def _init_discriminators(self, rng):
        cfg = self.config
        G = self.topology.joint_count          # group 0: root, groups 1..J-1: joints
        D, k = cfg.disc_channels, cfg.disc_kernel
        store = self.disc_params
        self._add(store, "D.c1.w", rng, (G, k, Q, D), k * Q)
        self._add(store, "D.c1.b", rng, (G, D), k * Q, zero=True)
        self._add(store, "D.c2.w", rng, (G, k, D, D), k * D)
        self._add(store, "D.c2.b", rng, (G, D), k * D, zero=True)
        self._add(store, "D.fc.w", rng, (G, D), D)
        self._add(store, "D.fc.b", rng, (G,), D, zero=True)

    def parameters(self):
        return list(self.params.values())

    def disc_parameters(self):
        return list(self.disc_params.values())

    def all_params(self):
        return {**self.params, **self.disc_params}

    def output_channels(self, K):
        return Q * (self.topology.joint_count - 1) + K * (3 + Q) + 2

    # -- generator ----------------------------------------------------------------

    def _block(self, x, name, rng, k=None):
        p = self.params
        h = conv1d(x, p[name + ".w"], p[name + ".b"])
        h = channel_norm(h, p[name + ".n.g"], p[name + ".n.beta"]).leaky_relu(self.config.slope)
        return ad.dropout(h, self.config.dropout, rng)

    def _fuse(self, x, tag, rng, with_mv, return_views=False):
        p, cfg = self.params, self.config
        h = conv1d(x, p[f"{tag}.expand.w"], p[f"{tag}.expand.b"])
        h = channel_norm(h, p[f"{tag}.expand.n.g"], p[f"{tag}.expand.n.beta"]).leaky_relu(cfg.slope)
        h = ad.dropout(h, cfg.dropout, rng)
        i = 0
        while f"{tag}.view{i}.w" in p:
            h = self._block(h, f"{tag}.view{i}", rng)
            i += 1
        if with_mv:
            h = multiview_conv(h, p[f"{tag}.mv.self.w"], p[f"{tag}.mv.cross"], p[f"{tag}.mv.self.b"])
            h = channel_norm(h, p[f"{tag}.mv.n.g"], p[f"{tag}.mv.n.beta"]).leaky_relu(cfg.slope)
            h = ad.dropout(h, cfg.dropout, rng)
        h = view_attention(h, p[f"{tag}.att.q"], p[f"{tag}.att.k"], p[f"{tag}.att.v"],
                           p[f"{tag}.att.o"], p[f"{tag}.att.bo"], cfg.heads)
        fused = collapse_views(h, p[f"{tag}.collapse.w"], p[f"{tag}.collapse.b"])
        return (fused, h) if return_views else fused

    def fuse_S(self, x, rng=None):
        """(..., K, T, 3J) features -> (..., T, C) fused skeleton features."""
        return self._fuse(ad.as_tensor(x), "FS", rng, with_mv=False)

    def fuse_Q(self, x, rng=None, return_views=False):
        """(..., K, T, 3J) -> (..., T, C); optionally also the per-view (..., K, T, C)."""
        return self._fuse(ad.as_tensor(x), "FQ", rng, with_mv=True, return_views=return_views)

    def encode_S(self, feat):
        """(..., T, C) -> (..., L) positive distinct bone lengths."""
        p = self.params
        pooled = ad.as_tensor(feat).max(axis=-2, keepdims=True)          # (..., 1, C)
        h = conv1d(pooled, p["ES.hidden.w"], p["ES.hidden.b"]).leaky_relu(self.config.slope)
        out = conv1d(h, p["ES.out.w"], p["ES.out.b"]).softplus()
        return out[..., 0, :]

    def encode_Q(self, feat, views, ray, rng=None, inputs=None):
        """Rotations, root trajectory and foot contacts from fused features.

        ``feat`` (..., T, C) fused; ``views`` (..., K, T, C) per-view features
        after cross-view attention; ``ray`` (..., K, T, 2) root image
        direction.  Returns q (..., T, J-1, 4), root_pos (..., T, K, 3),
        root_rot (..., T, K, 4) and f (..., T, 2).
        """
        p, cfg = self.params, self.config
        feat, views = ad.as_tensor(feat), ad.as_tensor(views)
        J = self.topology.joint_count
        branches = [self._block(feat, f"EQ.branch{k}", rng) for k in cfg.eq_kernels]
        h = self._block(ad.concat(branches, axis=-1), "EQ.merge", rng)
        out = conv1d(h, p["EQ.out.w"], p["EQ.out.b"])                    # (..., T, Q(J-1)+2)
        *lead, T, _ = out.shape
        q = out[..., :Q * (J - 1)].reshape(*lead, T, J - 1, Q) * cfg.rot_scale + np.array([1.0, 0, 0, 0])
        q = ad.normalize(q)
        f = out[..., Q * (J - 1):].sigmoid()

        K = views.shape[-3]
        shared = feat.expand_dims(-3).broadcast_to(tuple(lead) + (K, T, feat.shape[-1]))
        parts = [views, shared]
        if cfg.root_skip:
            if inputs is None:
                raise ValueError("root_skip needs the per-view input features")
            parts.append(ad.as_tensor(inputs))
        x = ad.concat(parts, axis=-1)
        rp = self._block(x.detach() if cfg.root_detach else x, "EQ.root.pos.hidden", rng)
        rr = self._block(x, "EQ.root.rot.hidden", rng)
        r = ad.concat([conv1d(rp, p["EQ.root.pos.out.w"], p["EQ.root.pos.out.b"]),
                       conv1d(rr, p["EQ.root.rot.out.w"], p["EQ.root.rot.out.b"])], axis=-1)   # (..., K, T, 3+Q)
        n = len(lead)
        r = r.swapaxes(n, n + 1)                                          # (..., T, K, 3+Q)
        depth = r[..., 2:3].exp() * cfg.depth_scale
        ray = np.swapaxes(np.asarray(ray, float), n, n + 1)
        xy = (ray + cfg.root_xy_residual * r[..., 0:2].tanh()) * depth
        root_pos = ad.concat([xy, depth], axis=-1)
        root_rot = ad.normalize(r[..., 3:] + np.array(cfg.root_rest))
        return q, root_pos, root_rot, f

    def forward(self, V, image_size, rng=None):
        """Run the generator on raw observations ``V`` (..., K, T, J, 3)."""
        x, ray = prepare_input(V, image_size, self.config)
        s = self.encode_S(self.fuse_S(x, rng))
        fused, views = self.fuse_Q(x, rng, return_views=True)
        q, root_pos, root_rot, f = self.encode_Q(fused, views, ray, rng, inputs=x)
        return {"s": s, "q": q, "root_pos": root_pos, "root_rot": root_rot, "f": f}

    def positions(self, out, root_zeroed=False):
        """Per-view joint positions (..., T, K, J, 3) of a forward() result."""
        lengths = expand_lengths(self.topology, out["s"])
        root_pos = out["root_pos"]
        if root_zeroed:
            root_pos = ad.Tensor(np.zeros(root_pos.shape))
        return fk_tensor(self.topology, lengths, out["q"], root_pos, out["root_rot"])

    # -- discriminators -----------------------------------------------------------

    def _disc(self, x, groups):
        """Scores for ``x`` (..., G', T-1, 4) using discriminator groups ``groups``."""
        p = self.disc_params
        sel = (slice(groups.start, groups.stop),) if isinstance(groups, slice) else (groups,)
        w1, b1 = p["D.c1.w"][sel], p["D.c1.b"][sel]
        w2, b2 = p["D.c2.w"][sel], p["D.c2.b"][sel]
        wf, bf = p["D.fc.w"][sel], p["D.fc.b"][sel]
        slope = self.config.slope
        h = conv1d(x, w1, b1).leaky_relu(slope)
        h = conv1d(h, w2, b2).leaky_relu(slope)
        h = h.mean(axis=-2)                                               # (..., G', D)
        return (h * wf).sum(axis=-1) + bf

    def _check_window(self, n):
        if n < self.config.disc_kernel:
            raise ValueError(f"rotation difference window {n} shorter than kernel {self.config.disc_kernel}")

    def discriminate(self, j, dq):
        """Realism score of one rotation-difference stream ``dq`` (..., T-1, 4).

        ``j = 0`` is the root discriminator shared by all views.
        """
        dq = ad.as_tensor(dq)
        self._check_window(dq.shape[-2])
        return self._disc(dq, j)

    def discriminate_joints(self, dq):
        """``dq`` (..., T-1, J-1, 4) -> scores (..., J-1), joint j scored by D_j."""
        dq = ad.as_tensor(dq)
        self._check_window(dq.shape[-3])
        n = dq.ndim
        x = dq.swapaxes(n - 3, n - 2)                                     # (..., J-1, T-1, 4)
        return self._disc(x, slice(1, self.topology.joint_count))

    def discriminate_root(self, dq):
        """``dq`` (..., T-1, K, 4) -> scores (..., K) from the root discriminator."""
        dq = ad.as_tensor(dq)
        self._check_window(dq.shape[-3])
        n = dq.ndim
        x = dq.swapaxes(n - 3, n - 2)                                     # (..., K, T-1, 4)
        return self._disc(x, 0)
