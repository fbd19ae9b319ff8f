"""Kinematic tree definitions and the bone-length parameterization.

Bone ``b`` always connects ``parent[b + 1]`` to joint ``b + 1``, so a tree of
``J`` joints has ``J - 1`` bones indexed by their child joint.  Mirrored bones
share one length and overlap bones (zero offset, co-located child) carry no
length at all, which leaves ``distinct_length_count`` free lengths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ROOT_PARENT = -1


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class SkeletonTopology:
    joint_names: tuple
    parent: tuple
    rest_dir: np.ndarray
    mirror_groups: tuple = ()
    overlap_bones: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "parent", tuple(int(p) for p in self.parent))
        object.__setattr__(self, "mirror_groups", tuple(tuple(int(i) for i in g) for g in self.mirror_groups))
        object.__setattr__(self, "overlap_bones", frozenset(int(b) for b in self.overlap_bones))
        rest = np.array(self.rest_dir, dtype=np.float64).reshape(-1, 3)
        rest.setflags(write=False)
        object.__setattr__(self, "rest_dir", rest)
        self._validate()

    def _validate(self):
        J = self.joint_count
        if len(self.parent) != J or self.rest_dir.shape != (J, 3):
            raise ValueError("joint_names, parent and rest_dir must agree on the joint count")
        if self.parent[0] != ROOT_PARENT or ROOT_PARENT in self.parent[1:]:
            raise ValueError("joint 0 must be the only root")
        for j in range(1, J):
            if not 0 <= self.parent[j] < j:
                raise ValueError(f"joint {j} must come after its parent (got parent {self.parent[j]})")
        visited = self.traverse()
        if len(visited) != J:
            raise ValueError("parent indices do not form a single rooted tree")
        norms = np.linalg.norm(self.rest_dir[1:], axis=1)
        for b, n in enumerate(norms):
            expected = 0.0 if b in self.overlap_bones else 1.0
            if abs(n - expected) > 1e-12:
                raise ValueError(f"bone {b} rest direction has norm {n}, expected {expected}")
        seen = set()
        for group in self.mirror_groups:
            for b in group:
                if b in seen or b in self.overlap_bones or not 0 <= b < J - 1:
                    raise ValueError(f"bone {b} is repeated, out of range or an overlap bone in mirror groups")
                seen.add(b)

    @property
    def joint_count(self):
        return len(self.joint_names)

    @property
    def bone_count(self):
        return self.joint_count - 1

    @property
    def distinct_length_count(self):
        return self.bone_count - len(self.overlap_bones) - len(self.mirror_groups)

    def traverse(self):
        """Breadth-first joint order starting from the root."""
        children = self.children_map()
        order, queue = [], [0]
        seen = set()
        while queue:
            j = queue.pop(0)
            if j in seen:
                continue
            seen.add(j)
            order.append(j)
            queue.extend(children[j])
        return order

    def children_map(self):
        children = [[] for _ in range(self.joint_count)]
        for j, p in enumerate(self.parent[1:], start=1):
            children[p].append(j)
        return children

    def children(self, j):
        return self.children_map()[j]

    def index(self, name):
        return self.joint_names.index(name)

    def bone_of(self, name):
        """Bone index ending at the named joint."""
        return self.index(name) - 1

    @property
    def distinct_index(self):
        """Per-bone index into the distinct length vector, -1 for overlap bones."""
        partner = {}
        for a, b in self.mirror_groups:
            partner[a], partner[b] = b, a
        idx = [-1] * self.bone_count
        n = 0
        for b in range(self.bone_count):
            if b in self.overlap_bones or idx[b] >= 0:
                continue
            idx[b] = n
            if b in partner:
                idx[partner[b]] = n
            n += 1
        return tuple(idx)

    @property
    def expansion_matrix(self):
        """(L, J-1) 0/1 matrix with ``per_bone = distinct @ E``."""
        E = np.zeros((self.distinct_length_count, self.bone_count))
        for b, d in enumerate(self.distinct_index):
            if d >= 0:
                E[d, b] = 1.0
        return E

    @property
    def leaf_joints(self):
        return tuple(j for j, c in enumerate(self.children_map()) if not c)

    def to_json(self):
        return json.dumps({
            "joints": [
                {"name": n, "parent": p, "rest_dir": [float(x) for x in d]}
                for n, p, d in zip(self.joint_names, self.parent, self.rest_dir)
            ],
            "mirror_groups": [list(g) for g in self.mirror_groups],
            "overlap_bones": sorted(self.overlap_bones),
        })

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text) if isinstance(text, str) else text
        joints = doc["joints"]
        return cls(
            joint_names=[j["name"] for j in joints],
            parent=[j["parent"] for j in joints],
            rest_dir=[j["rest_dir"] for j in joints],
            mirror_groups=doc.get("mirror_groups", []),
            overlap_bones=doc.get("overlap_bones", []),
        )

    def __eq__(self, other):
        if not isinstance(other, SkeletonTopology):
            return NotImplemented
        return (self.joint_names == other.joint_names and self.parent == other.parent
                and np.array_equal(self.rest_dir, other.rest_dir)
                and self.mirror_groups == other.mirror_groups
                and self.overlap_bones == other.overlap_bones)

    def __hash__(self):
        return hash((self.joint_names, self.parent, self.mirror_groups, self.overlap_bones))


_CLAVICLE_L = _unit([1.0, -0.25, 0.0])
_CLAVICLE_R = _unit([-1.0, -0.25, 0.0])
_UP, _DOWN = [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]
_LEFT, _RIGHT = [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]
_FWD = [0.0, 0.0, 1.0]

# (name, parent name, rest direction); None direction marks an overlap joint
_LAYOUT = [
    ("pelvis", None, [0.0, 0.0, 0.0]),
    ("root_overlap", "pelvis", None),
    ("spine", "root_overlap", _UP),
    ("neck", "spine", _UP),
    ("neck_overlap", "neck", None),
    ("head", "neck_overlap", _UP),
    ("l_shoulder", "neck", _CLAVICLE_L),
    ("l_elbow", "l_shoulder", _LEFT),
    ("l_wrist", "l_elbow", _LEFT),
    ("r_shoulder", "neck", _CLAVICLE_R),
    ("r_elbow", "r_shoulder", _RIGHT),
    ("r_wrist", "r_elbow", _RIGHT),
    ("l_hip", "pelvis", _LEFT),
    ("l_knee", "l_hip", _DOWN),
    ("l_ankle", "l_knee", _DOWN),
    ("l_foot", "l_ankle", _FWD),
    ("r_hip", "pelvis", _RIGHT),
    ("r_knee", "r_hip", _DOWN),
    ("r_ankle", "r_knee", _DOWN),
    ("r_foot", "r_ankle", _FWD),
]

_MIRRORED = ["shoulder", "elbow", "wrist", "hip", "knee", "ankle", "foot"]

# joints of the rigid layout re-parent past the removed overlap joints
_RIGID_REPARENT = {"root_overlap": "pelvis", "neck_overlap": "neck"}


def _build(layout):
    names = [n for n, _, _ in layout]
    parent = [ROOT_PARENT if p is None else names.index(p) for _, p, _ in layout]
    rest = [np.zeros(3) if d is None else np.asarray(d, dtype=np.float64) for _, _, d in layout]
    overlap = [i - 1 for i, (_, p, d) in enumerate(layout) if p is not None and d is None]
    mirror = [(names.index("l_" + m) - 1, names.index("r_" + m) - 1) for m in _MIRRORED]
    return SkeletonTopology(names, parent, rest, mirror, overlap)


def default_topology():
    """20-joint skeleton with overlap joints at the root and the neck."""
    return _build(_LAYOUT)


def rigid_topology():
    """The same skeleton without overlap joints (18 joints)."""
    layout = []
    for name, parent, d in _LAYOUT:
        if name in _RIGID_REPARENT:
            continue
        layout.append((name, _RIGID_REPARENT.get(parent, parent), d))
    return _build(layout)


def expand_lengths(topology, distinct):
    """Expand distinct lengths (..., L) to per-bone lengths (..., J-1).

    Works on numpy arrays and on autodiff tensors alike.
    """
    L = topology.distinct_length_count
    shape = getattr(distinct, "shape", np.shape(distinct))
    if shape[-1] != L:
        raise ValueError(f"expected {L} distinct lengths, got {shape[-1]}")
    if not hasattr(distinct, "requires_grad"):
        distinct = np.asarray(distinct, dtype=np.float64)
    return distinct @ topology.expansion_matrix


def extract_distinct(topology, per_bone):
    """Inverse of :func:`expand_lengths` for consistent per-bone lengths."""
    per_bone = np.asarray(per_bone, dtype=np.float64)
    out = np.zeros(per_bone.shape[:-1] + (topology.distinct_length_count,))
    for b, d in enumerate(topology.distinct_index):
        if d >= 0:
            out[..., d] = per_bone[..., b]
    return out


@dataclass(frozen=True)
class BoneLengths:
    """Distinct bone lengths of one sequence, in meters."""

    topology: SkeletonTopology
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if v.size != self.topology.distinct_length_count:
            raise ValueError(f"expected {self.topology.distinct_length_count} lengths, got {v.size}")
        if np.any(v <= 0):
            raise ValueError("bone lengths must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def expanded(self):
        return expand_lengths(self.topology, self.values)
