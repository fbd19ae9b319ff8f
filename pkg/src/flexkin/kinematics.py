"""Quaternion algebra, forward kinematics and temporal differencing.

Array layouts used throughout the package (``T`` frames, ``K`` views,
``J`` joints):

* joint rotations ``q``: (T, J-1, 4), unit quaternions (w, x, y, z), parent
  relative, ordered like the topology's non-root joints
* root position ``root_pos``: (T, K, 3), camera-frame (x, y, depth)
* root rotation ``root_rot``: (T, K, 4), relative to each camera
* positions: (T, K, J, 3) in meters

:func:`flat_rotations`, :func:`flat_root` and :func:`flat_positions` convert to
the tensor layouts of the data files, q: (T, 4, J-1), r: (T, 3+4, K) and
P: (T, 3J, K).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from flexkin import autodiff as ad
from flexkin.skeleton import SkeletonTopology, expand_lengths

QUAT_TOL = 1e-6

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


# -- numpy quaternion helpers ------------------------------------------------------

def quat_mul(a, b):
    return ad._hamilton(*np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float)))


def quat_conj(q):
    return np.asarray(q, float) * ad._CONJ


def quat_normalize(q):
    q = np.asarray(q, float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_rotate(q, v):
    q = np.asarray(q, float)
    v = np.asarray(v, float)
    vq = np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)
    return quat_mul(quat_mul(q, vq), quat_conj(q))[..., 1:]


def quat_from_axis_angle(aa):
    """Rotation vectors (..., 3) in radians to unit quaternions."""
    aa = np.asarray(aa, float)
    angle = np.linalg.norm(aa, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(x/2)/x with its series near zero
    scale = np.where(angle > 1e-8, np.sin(half) / np.where(angle > 1e-8, angle, 1.0), 0.5 - angle ** 2 / 48.0)
    return np.concatenate([np.cos(half), aa * scale], axis=-1)


def quat_about(axis, angle):
    axis = np.asarray(axis, float)
    return quat_from_axis_angle(axis / np.linalg.norm(axis) * angle)


def quat_to_matrix(q):
    w, x, y, z = np.moveaxis(quat_normalize(q), -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def quat_from_matrix(R):
    """Rotation matrices (..., 3, 3) to quaternions with w >= 0."""
    R = np.asarray(R, float)
    flat = R.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for i, m in enumerate(flat):
        tr = np.trace(m)
        if tr > 0:
            s = 2.0 * np.sqrt(tr + 1.0)
            q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        q = np.asarray(q)
        out[i] = quat_normalize(q if q[0] >= 0 else -q)
    return out.reshape(R.shape[:-2] + (4,))


def align_hemisphere(q, axis=0):
    """Flip signs along ``axis`` so consecutive quaternions have positive dot."""
    q = np.moveaxis(np.array(q, float), axis, 0)
    for t in range(1, q.shape[0]):
        flip = np.sum(q[t] * q[t - 1], axis=-1) < 0
        q[t][flip] *= -1
    return np.moveaxis(q, 0, axis)


def temporal_diff(x):
    """Forward difference along the first axis: out[t] = x[t+1] - x[t]."""
    if x.shape[0] < 2:
        raise ValueError(f"temporal_diff needs at least 2 frames, got {x.shape[0]}")
    return x[1:] - x[:-1]


def temporal_diff_axis(x, axis):
    """Forward difference along ``axis``; works on arrays and autodiff tensors."""
    n = x.shape[axis]
    if n < 2:
        raise ValueError(f"temporal_diff needs at least 2 frames, got {n}")
    ax = axis % x.ndim
    hi = (slice(None),) * ax + (slice(1, None),)
    lo = (slice(None),) * ax + (slice(None, -1),)
    return x[hi] - x[lo]


# -- motion container --------------------------------------------------------------

@dataclass
class MotionSequence:
    topology: SkeletonTopology
    s: np.ndarray            # (L,) distinct bone lengths
    q: np.ndarray            # (T, J-1, 4)
    root_pos: np.ndarray     # (T, K, 3)
    root_rot: np.ndarray     # (T, K, 4)
    f: np.ndarray = None     # (T, 2) foot contact labels

    def __post_init__(self):
        self.s = np.asarray(self.s, float)
        self.q = np.asarray(self.q, float)
        self.root_pos = np.asarray(self.root_pos, float)
        self.root_rot = np.asarray(self.root_rot, float)
        T = self.q.shape[0]
        if self.f is None:
            self.f = np.zeros((T, 2))
        self.f = np.asarray(self.f, float)
        J = self.topology.joint_count
        if self.s.shape != (self.topology.distinct_length_count,):
            raise ValueError(f"s has shape {self.s.shape}, expected ({self.topology.distinct_length_count},)")
        if self.q.shape != (T, J - 1, 4):
            raise ValueError(f"q has shape {self.q.shape}, expected ({T}, {J - 1}, 4)")
        if self.root_pos.shape[0] != T or self.root_pos.shape[2:] != (3,):
            raise ValueError(f"root_pos has shape {self.root_pos.shape}")
        if self.root_rot.shape != self.root_pos.shape[:2] + (4,):
            raise ValueError(f"root_rot has shape {self.root_rot.shape}")
        if self.f.shape != (T, 2):
            raise ValueError(f"f has shape {self.f.shape}, expected ({T}, 2)")

    @property
    def T(self):
        return self.q.shape[0]

    @property
    def K(self):
        return self.root_pos.shape[1]

    @property
    def bone_lengths(self):
        return expand_lengths(self.topology, self.s)

    @property
    def r(self):
        """Root trajectory in the (T, 3+4, K) layout."""
        return np.concatenate([self.root_pos, self.root_rot], axis=-1).transpose(0, 2, 1)

    def view(self, k):
        """Single-view slice keeping the K axis (length 1)."""
        return MotionSequence(self.topology, self.s, self.q, self.root_pos[:, k:k + 1],
                              self.root_rot[:, k:k + 1], self.f)

    def views(self, idx):
        idx = list(idx)
        return MotionSequence(self.topology, self.s, self.q, self.root_pos[:, idx],
                              self.root_rot[:, idx], self.f)

    def copy(self):
        return MotionSequence(self.topology, self.s.copy(), self.q.copy(), self.root_pos.copy(),
                              self.root_rot.copy(), self.f.copy())


def flat_rotations(q):
    return np.asarray(q).transpose(0, 2, 1)


def flat_root(root_pos, root_rot):
    return np.concatenate([root_pos, root_rot], axis=-1).transpose(0, 2, 1)


def flat_positions(p):
    """(T, K, J, 3) -> (T, 3J, K)."""
    T, K, J, _ = p.shape
    return np.asarray(p).transpose(0, 2, 3, 1).reshape(T, 3 * J, K)


def unflat_positions(p):
    """(T, 3J, K) -> (T, K, J, 3)."""
    T, J3, K = p.shape
    return np.asarray(p).reshape(T, J3 // 3, 3, K).transpose(0, 3, 1, 2)


# -- forward kinematics --------------------------------------------------------------

def fk_tensor(topology, lengths, q, root_pos, root_rot):
    """Differentiable forward kinematics.

    lengths: (..., J-1) per-bone lengths; q: (..., T, J-1, 4) unit
    quaternions; root_pos: (..., T, K, 3); root_rot: (..., T, K, 4).
    Returns positions (..., T, K, J, 3).

    A parent's global rotation orients the offsets of all its children;
    a child's global rotation is its parent's composed with its own.
    """
    lengths, q = ad.as_tensor(lengths), ad.as_tensor(q)
    root_pos, root_rot = ad.as_tensor(root_pos), ad.as_tensor(root_rot)
    children = topology.children_map()
    lead = lengths.shape[:-1]
    pos = [None] * topology.joint_count
    rot = [None] * topology.joint_count
    pos[0], rot[0] = root_pos, root_rot
    for j in range(1, topology.joint_count):
        p = topology.parent[j]
        rest = topology.rest_dir[j]
        if not rest.any():
            pos[j] = pos[p]
        else:
            length = lengths[..., j - 1].reshape(lead + (1, 1, 1))
            pos[j] = pos[p] + ad.quat_rotate(rot[p], length * rest)
        if children[j]:
            local = q[..., j - 1, :].expand_dims(-2)       # broadcast over views
            rot[j] = ad.quat_mul(rot[p], local)
    return ad.stack(pos, axis=-2)


def _check_motion(motion):
    for name in ("s", "q", "root_pos", "root_rot"):
        if not np.all(np.isfinite(getattr(motion, name))):
            raise ValueError(f"motion.{name} contains non-finite values")
    for name in ("q", "root_rot"):
        norms = np.linalg.norm(getattr(motion, name), axis=-1)
        if np.max(np.abs(norms - 1.0)) > QUAT_TOL:
            raise ValueError(f"motion.{name} is not normalized (max deviation {np.max(np.abs(norms - 1.0)):.2e})")


def fk(motion):
    """Camera-relative joint positions (T, K, J, 3) of a motion."""
    _check_motion(motion)
    return fk_tensor(motion.topology, motion.bone_lengths, motion.q, motion.root_pos, motion.root_rot).data


def fk_root_zeroed(motion):
    """As :func:`fk` with every root placed at the origin, rotation kept."""
    _check_motion(motion)
    zero = np.zeros_like(motion.root_pos)
    return fk_tensor(motion.topology, motion.bone_lengths, motion.q, zero, motion.root_rot).data
