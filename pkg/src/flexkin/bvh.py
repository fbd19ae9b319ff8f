"""BVH export and a small reader used for round-trip checks.

Every topology joint becomes a BVH joint with three ZXY rotation channels
(the root also carries XYZ position).  Leaf joints close with a zero-length
End Site so their names survive.  Offsets and translations are written in
centimeters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from flexkin import kinematics as kin
from flexkin.skeleton import expand_lengths

CM = 100.0
ROT_CHANNELS = ("Zrotation", "Xrotation", "Yrotation")
POS_CHANNELS = ("Xposition", "Yposition", "Zposition")
GIMBAL_EPS = 1e-9


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def euler_zxy_to_matrix(z, x, y):
    """R = Rz(z) Rx(x) Ry(y), angles in degrees."""
    z, x, y = np.radians([z, x, y])
    return _rz(z) @ _rx(x) @ _ry(y)


def matrix_to_euler_zxy(M):
    """Inverse of :func:`euler_zxy_to_matrix`, degrees.

    Middle angle from atan2 for accuracy near +-90 deg.  At gimbal lock the
    Y angle is set to 0 and the whole residual twist goes to Z.
    """
    cx = np.hypot(M[0, 1], M[1, 1])
    x = np.arctan2(M[2, 1], cx)
    if cx > GIMBAL_EPS:
        z = np.arctan2(-M[0, 1], M[1, 1])
        y = np.arctan2(-M[2, 0], M[2, 2])
    else:
        z = np.arctan2(M[1, 0], M[0, 0])
        y = 0.0
    return np.degrees([z, x, y])


def quat_to_euler_zxy(q):
    return matrix_to_euler_zxy(kin.quat_to_matrix(q))


def _fmt(x):
    return f"{x:.12g}"


def to_bvh(motion, view=0, frame_time=1.0 / 30):
    """BVH text of ``motion`` as seen from view ``view``."""
    top = motion.topology
    if not 0 <= view < motion.K:
        raise ValueError(f"view {view} out of range for {motion.K} views")
    lengths = expand_lengths(top, motion.s)
    children = top.children_map()
    lines = ["HIERARCHY"]

    def emit(j, depth):
        pad = "  " * depth
        if j == 0:
            lines.append(f"ROOT {top.joint_names[j]}")
            off = np.zeros(3)
        else:
            lines.append(f"{pad}JOINT {top.joint_names[j]}")
            off = top.rest_dir[j] * lengths[j - 1] * CM
        lines.append(f"{pad}{{")
        lines.append(f"{pad}  OFFSET {' '.join(_fmt(v) for v in off)}")
        chans = (POS_CHANNELS + ROT_CHANNELS) if j == 0 else ROT_CHANNELS
        lines.append(f"{pad}  CHANNELS {len(chans)} {' '.join(chans)}")
        if children[j]:
            for c in children[j]:
                emit(c, depth + 1)
        else:
            lines.append(f"{pad}  End Site")
            lines.append(f"{pad}  {{")
            lines.append(f"{pad}    OFFSET 0 0 0")
            lines.append(f"{pad}  }}")
        lines.append(f"{pad}}}")

    emit(0, 0)
    order = _dfs_order(top)
    lines.append("MOTION")
    lines.append(f"Frames: {motion.T}")
    lines.append(f"Frame Time: {_fmt(frame_time)}")
    for t in range(motion.T):
        vals = list(motion.root_pos[t, view] * CM)
        for j in order:
            q = motion.root_rot[t, view] if j == 0 else motion.q[t, j - 1]
            vals.extend(quat_to_euler_zxy(q))
        lines.append(" ".join(_fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def _dfs_order(top):
    children = top.children_map()
    out, stack = [], [0]
    while stack:
        j = stack.pop()
        out.append(j)
        stack.extend(reversed(children[j]))
    return out


def write_bvh(path, motion, view=0, frame_time=1.0 / 30):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_bvh(motion, view, frame_time))


@dataclass
class BvhData:
    names: list
    parents: list
    offsets: np.ndarray      # (J, 3) centimeters
    channels: list           # per joint tuple of channel names
    frames: np.ndarray       # (T, total channels)
    frame_time: float

    def positions(self):
        """Joint positions (T, J, 3) in meters, evaluated with rotation matrices."""
        J = len(self.names)
        T = self.frames.shape[0]
        out = np.zeros((T, J, 3))
        for t in range(T):
            col = 0
            R = [None] * J
            for j in range(J):
                vals = dict(zip(self.channels[j], self.frames[t, col:col + len(self.channels[j])]))
                col += len(self.channels[j])
                local = np.eye(3)
                for ch in self.channels[j]:
                    if ch.endswith("rotation"):
                        axis = {"X": _rx, "Y": _ry, "Z": _rz}[ch[0]]
                        local = local @ axis(np.radians(vals[ch]))
                p = self.parents[j]
                if p < 0:
                    pos = np.array([vals.get(c, 0.0) for c in POS_CHANNELS]) + self.offsets[j]
                    R[j] = local
                else:
                    pos = out[t, p] * CM + R[p] @ self.offsets[j]
                    R[j] = R[p] @ local
                out[t, j] = pos / CM
        return out


def parse_bvh(text):
    tokens = text.split()
    i = 0
    names, parents, offsets, channels = [], [], [], []
    stack = []

    def expect(tok):
        nonlocal i
        if tokens[i] != tok:
            raise ValueError(f"BVH parse error: expected {tok!r}, got {tokens[i]!r}")
        i += 1

    expect("HIERARCHY")
    while tokens[i] != "MOTION":
        tok = tokens[i]
        if tok in ("ROOT", "JOINT"):
            names.append(tokens[i + 1])
            parents.append(stack[-1] if stack else -1)
            i += 2
            expect("{")
            stack.append(len(names) - 1)
            expect("OFFSET")
            offsets.append([float(v) for v in tokens[i:i + 3]])
            i += 3
            expect("CHANNELS")
            n = int(tokens[i])
            channels.append(tuple(tokens[i + 1:i + 1 + n]))
            i += 1 + n
        elif tok == "End":
            expect("End")
            expect("Site")
            expect("{")
            expect("OFFSET")
            i += 3
            expect("}")
        elif tok == "}":
            stack.pop()
            i += 1
        else:
            raise ValueError(f"BVH parse error near token {tok!r}")
    expect("MOTION")
    expect("Frames:")
    T = int(tokens[i])
    i += 1
    expect("Frame")
    expect("Time:")
    frame_time = float(tokens[i])
    i += 1
    n_ch = sum(len(c) for c in channels)
    vals = np.array([float(v) for v in tokens[i:]])
    if vals.size != T * n_ch:
        raise ValueError(f"BVH has {vals.size} motion values, expected {T * n_ch}")
    return BvhData(names, parents, np.array(offsets, float), channels, vals.reshape(T, n_ch), frame_time)


def read_bvh(path):
    with open(path, encoding="utf-8") as fh:
        return parse_bvh(fh.read())
