"""Pinhole cameras, projection, parameter perturbation and DLT triangulation."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class DegenerateProjectionError(ValueError):
    """A point lies on or behind the camera plane."""


class DegenerateGeometryError(ValueError):
    """Observations do not determine a unique 3D point."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    sk: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self):
        return np.array([[self.fx, self.sk, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy, "sk": self.sk}


def nearest_rotation(M):
    """Closest rotation matrix in Frobenius norm (polar decomposition via SVD)."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


@dataclass(frozen=True)
class Extrinsics:
    R: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        T = np.array(self.T, dtype=np.float64).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("R is not a proper rotation matrix")
        R.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)

    @property
    def center(self):
        return -self.R.T @ self.T

    def to_camera(self, X):
        return np.asarray(X) @ self.R.T + self.T


def look_at(position, target, up=(0.0, 1.0, 0.0)):
    """Extrinsics of a camera at ``position`` facing ``target``.

    Camera axes follow the image convention: x right, y down, z forward.
    """
    position = np.asarray(position, float)
    z = np.asarray(target, float) - position
    z /= np.linalg.norm(z)
    x = np.cross(-np.asarray(up, float), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return Extrinsics(R, -R @ position)


def projection_matrix(K, E):
    """3x4 matrix ``K [R | T]``."""
    return K.matrix @ np.hstack([E.R, E.T[:, None]])


def project(P, X, eps=1e-12):
    """Perspective projection of points (..., 3) through P; returns (..., 2)."""
    X = np.asarray(X, float)
    h = X @ P[:, :3].T + P[:, 3]
    w = h[..., 2]
    if np.any(np.abs(w) <= eps) or np.any(w < 0):
        raise DegenerateProjectionError("point at or behind the camera plane")
    return h[..., :2] / w[..., None]


def weak_project(X, f, c, z_ref):
    """Weak perspective: every point of a frame uses the shared depth ``z_ref``."""
    if np.any(np.asarray(z_ref) <= 0):
        raise ValueError("reference depth must be positive")
    X = np.asarray(X, float)
    c = np.asarray(c, float)
    z = np.asarray(z_ref, float)[..., None]
    return f * X[..., :2] / z + c


def perturb(value, sigma_frac, rng):
    """Sample from N(p, (sigma_frac * p)^2), elementwise over ``value``."""
    if sigma_frac < 0:
        raise ValueError("sigma_frac must be non-negative")
    value = np.asarray(value, float)
    if sigma_frac == 0:
        return value.copy() if value.ndim else float(value)
    out = value + sigma_frac * np.abs(value) * rng.standard_normal(value.shape)
    return out if out.ndim else float(out)


def perturb_camera(K, E, sigma_frac, rng):
    """Perturb every intrinsic and extrinsic scalar; R is projected back to SO(3).

    Always draws the same number of variates so runs at different
    ``sigma_frac`` share their random stream.
    """
    z = rng.standard_normal(5 + 9 + 3)
    params = np.array([K.fx, K.fy, K.cx, K.cy, K.sk])
    p = params + sigma_frac * np.abs(params) * z[:5]
    R = E.R + sigma_frac * np.abs(E.R) * z[5:14].reshape(3, 3)
    T = E.T + sigma_frac * np.abs(E.T) * z[14:]
    return Intrinsics(*p), Extrinsics(nearest_rotation(R), T)


def triangulate(observations, rank_tol=1e-9):
    """Linear (DLT) triangulation from ``[(P, uv), ...]`` with at least two views."""
    if len(observations) < 2:
        raise DegenerateGeometryError("need at least two observations")
    rows = []
    for P, uv in observations:
        P = np.asarray(P, float)
        u, v = uv
        rows.append(u * P[2] - P[0])
        rows.append(v * P[2] - P[1])
    A = np.asarray(rows)
    # row scaling keeps the singular value test meaningful for pixel units
    A = A / np.linalg.norm(A, axis=1, keepdims=True)
    _, sv, Vt = np.linalg.svd(A)
    if sv[2] <= rank_tol * sv[0]:
        raise DegenerateGeometryError("observation rays do not intersect in a unique point")
    X = Vt[-1]
    if abs(X[3]) < 1e-15:
        raise DegenerateGeometryError("solution at infinity")
    return X[:3] / X[3]


def triangulate_many(Ps, uv):
    """Vectorized DLT: ``Ps`` (K, 3, 4), ``uv`` (K, N, 2) -> (N, 3).

    No degeneracy checks; meant for bulk baseline evaluation.
    """
    Ps = np.asarray(Ps, float)
    uv = np.asarray(uv, float)
    r1 = uv[..., 0:1] * Ps[:, None, 2, :] - Ps[:, None, 0, :]
    r2 = uv[..., 1:2] * Ps[:, None, 2, :] - Ps[:, None, 1, :]
    A = np.concatenate([r1, r2], axis=0).transpose(1, 0, 2)       # (N, 2K, 4)
    A = A / np.linalg.norm(A, axis=-1, keepdims=True)
    _, _, Vt = np.linalg.svd(A)
    X = Vt[:, -1]
    return X[:, :3] / X[:, 3:]


@dataclass
class CameraRig:
    """Per-view, per-frame cameras; ``intrinsics[k][t]``, ``extrinsics[k][t]``."""

    intrinsics: list
    extrinsics: list
    image_size: tuple = (1000, 1000)
    dynamic: bool = False

    def __post_init__(self):
        if len(self.intrinsics) != len(self.extrinsics):
            raise ValueError("intrinsics and extrinsics disagree on the view count")
        lengths = {len(v) for v in self.intrinsics} | {len(v) for v in self.extrinsics}
        if len(lengths) != 1:
            raise ValueError("every view needs the same number of frames")

    @property
    def K(self):
        return len(self.intrinsics)

    @property
    def T(self):
        return len(self.intrinsics[0])

    def projection(self, k, t):
        return projection_matrix(self.intrinsics[k][t], self.extrinsics[k][t])

    def projections(self):
        """(T, K, 3, 4) stack of projection matrices."""
        return np.array([[self.projection(k, t) for k in range(self.K)] for t in range(self.T)])

    def rotations(self):
        return np.array([[self.extrinsics[k][t].R for k in range(self.K)] for t in range(self.T)])

    def translations(self):
        return np.array([[self.extrinsics[k][t].T for k in range(self.K)] for t in range(self.T)])

    def subset(self, views):
        views = list(views)
        return CameraRig([self.intrinsics[k] for k in views], [self.extrinsics[k] for k in views],
                         self.image_size, self.dynamic)

    def perturbed(self, sigma_frac, rng):
        intr, extr = [], []
        for k in range(self.K):
            pairs = [perturb_camera(Ki, Ei, sigma_frac, rng)
                     for Ki, Ei in zip(self.intrinsics[k], self.extrinsics[k])]
            intr.append([a for a, _ in pairs])
            extr.append([b for _, b in pairs])
        return CameraRig(intr, extr, self.image_size, self.dynamic)

    def to_dict(self):
        return {
            "image_size": list(self.image_size),
            "dynamic": self.dynamic,
            "views": [
                {"frames": [{"K": Ki.to_dict(), "R": Ei.R.reshape(-1).tolist(), "T": Ei.T.tolist()}
                            for Ki, Ei in zip(ik, ek)]}
                for ik, ek in zip(self.intrinsics, self.extrinsics)
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc):
        intr, extr = [], []
        for view in doc["views"]:
            intr.append([Intrinsics(**fr["K"]) for fr in view["frames"]])
            extr.append([Extrinsics(np.reshape(fr["R"], (3, 3)), fr["T"]) for fr in view["frames"]])
        return cls(intr, extr, tuple(doc.get("image_size", (1000, 1000))), bool(doc.get("dynamic", False)))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))
