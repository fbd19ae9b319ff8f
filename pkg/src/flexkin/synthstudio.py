"""Synthetic motions, camera rigs and multi-view 2D observations.

Everything here is a pure function of its configuration and a numpy
``Generator``; the same seed always gives bit-identical output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from flexkin import kinematics as kin
from flexkin.camera import CameraRig, Intrinsics, look_at, project
from flexkin.skeleton import default_topology, extract_distinct

# nominal bone lengths in meters, keyed by the child joint without side prefix
BASE_LENGTHS = {
    "spine": 0.25, "neck": 0.25, "head": 0.20,
    "shoulder": 0.18, "elbow": 0.28, "wrist": 0.25,
    "hip": 0.12, "knee": 0.42, "ankle": 0.40, "foot": 0.14,
}

# per-axis sinusoid amplitude (radians) of the rotation at each joint
JOINT_AMPLITUDE = {
    "root_overlap": (0.15, 0.10, 0.10), "spine": (0.15, 0.10, 0.10),
    "neck": (0.15, 0.15, 0.15), "neck_overlap": (0.20, 0.25, 0.20),
    "shoulder": (0.5, 0.4, 0.5), "elbow": (0.1, 0.6, 0.3),
    "hip": (0.5, 0.2, 0.2), "knee": (0.6, 0.05, 0.05), "ankle": (0.2, 0.1, 0.1),
}

# constant offsets of the rotation vector, lowering the arms from the T-pose;
# scaled by the amplitude so that zero amplitude gives the T-pose itself
JOINT_BASE = {
    "l_shoulder": (0.0, 0.0, -1.1), "r_shoulder": (0.0, 0.0, 1.1),
    "l_knee": (0.25, 0.0, 0.0), "r_knee": (0.25, 0.0, 0.0),
}

FEET = ("l_foot", "r_foot")


def _strip_side(name):
    return name[2:] if name[:2] in ("l_", "r_") else name


@dataclass
class NoiseModel:
    pixel_sigma: float = 1.0
    occlusion_prob: float = 0.05
    occluded_sigma: float = 8.0
    visible_confidence: tuple = (0.8, 1.0)
    occluded_confidence: tuple = (0.0, 0.3)

    def __post_init__(self):
        self.visible_confidence = tuple(self.visible_confidence)
        self.occluded_confidence = tuple(self.occluded_confidence)
        for lo, hi in (self.visible_confidence, self.occluded_confidence):
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError("confidence ranges must be ordered inside [0, 1]")
        if not 0.0 <= self.occlusion_prob <= 1.0:
            raise ValueError("occlusion_prob must be a probability")
        if self.pixel_sigma < 0 or self.occluded_sigma < 0:
            raise ValueError("noise levels must be non-negative")


@dataclass
class SceneConfig:
    T: int = 64
    K: int = 4
    person_count: int = 1
    dynamic_cameras: bool = True
    fps: float = 30.0
    amplitude: float = 1.0
    freq_band: tuple = (0.2, 1.2)
    components: int = 3
    root_yaw_range: float = np.pi
    root_drift: float = 0.3
    length_scale_range: tuple = (0.9, 1.1)
    length_jitter: float = 0.05
    camera_radius: tuple = (4.0, 6.0)
    camera_height: tuple = (0.8, 2.0)
    orbit_speed: tuple = (0.05, 0.3)
    focal_range: tuple = (900.0, 1100.0)
    image_size: tuple = (1000, 1000)
    contact_height: float = 0.05
    contact_speed: float = 0.01
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        if isinstance(self.noise, dict):
            self.noise = NoiseModel(**self.noise)
        for name in ("freq_band", "length_scale_range", "camera_radius", "camera_height",
                     "orbit_speed", "focal_range", "image_size"):
            setattr(self, name, tuple(getattr(self, name)))
        if self.T < 2 or self.K < 1 or self.person_count < 1:
            raise ValueError("need T >= 2, K >= 1 and at least one person")

    def to_dict(self):
        d = asdict(self)
        d["noise"] = asdict(self.noise)
        return d


def _sinusoids(rng, T, fps, amp, band, components):
    """Sum of ``components`` random sinusoids per axis, shape (T, len(amp))."""
    amp = np.asarray(amp, float)
    t = np.arange(T) / fps
    freq = rng.uniform(band[0], band[1], size=(components, amp.size))
    phase = rng.uniform(0, 2 * np.pi, size=(components, amp.size))
    weight = rng.uniform(-1, 1, size=(components, amp.size)) / np.sqrt(components)
    waves = np.sin(2 * np.pi * freq[:, None, :] * t[None, :, None] + phase[:, None, :])
    return (weight[:, None, :] * waves).sum(0) * amp


def sample_bone_lengths(topology, config, rng):
    scale = rng.uniform(*config.length_scale_range)
    per_bone = np.zeros(topology.bone_count)
    for b in range(topology.bone_count):
        if b in topology.overlap_bones:
            continue
        per_bone[b] = BASE_LENGTHS[_strip_side(topology.joint_names[b + 1])]
    distinct = extract_distinct(topology, per_bone)
    jitter = rng.uniform(1 - config.length_jitter, 1 + config.length_jitter, distinct.shape)
    return distinct * scale * jitter


def find_contacts(feet, height, speed):
    """Contact labels (T, 2) from world-frame foot trajectories (T, 2, 3)."""
    v = np.linalg.norm(np.diff(feet, axis=0), axis=-1)
    v = np.concatenate([v, v[-1:]], axis=0)
    return ((feet[..., 1] < height) & (v < speed)).astype(float)


def foot_speed(feet):
    """Per-frame foot speed as used by :func:`find_contacts`."""
    v = np.linalg.norm(np.diff(feet, axis=0), axis=-1)
    return np.concatenate([v, v[-1:]], axis=0)


def gen_motion(config, rng, topology=None, origin=(0.0, 0.0)):
    """A world-frame motion (single ``K=1`` column holding the world root).

    The ground plane is y = 0; the lowest foot position of the sequence
    touches it.
    """
    topology = topology or default_topology()
    T, J = config.T, topology.joint_count
    s = sample_bone_lengths(topology, config, rng)
    aa = np.zeros((T, J - 1, 3))
    children = topology.children_map()
    for j in range(1, J):
        name = topology.joint_names[j]
        base = np.asarray(JOINT_BASE.get(name, (0.0, 0.0, 0.0))) * config.amplitude
        amp = JOINT_AMPLITUDE.get(name, JOINT_AMPLITUDE.get(_strip_side(name)))
        if amp is None or not children[j]:
            aa[:, j - 1] = base
            continue
        amp = np.asarray(amp) * config.amplitude
        aa[:, j - 1] = base + _sinusoids(rng, T, config.fps, amp, config.freq_band, config.components)
    q = kin.align_hemisphere(kin.quat_from_axis_angle(aa))

    yaw0 = rng.uniform(-config.root_yaw_range, config.root_yaw_range)
    root_aa = _sinusoids(rng, T, config.fps, np.array([0.05, 0.4, 0.05]) * config.amplitude,
                         config.freq_band, config.components)
    root_aa[:, 1] += yaw0
    root_rot = kin.align_hemisphere(kin.quat_from_axis_angle(root_aa))[:, None]
    drift = _sinusoids(rng, T, config.fps, np.array([config.root_drift, 0.02, config.root_drift]),
                       (0.05, 0.3), 2)
    root_pos = (drift + np.array([origin[0], 0.0, origin[1]]))[:, None]

    motion = kin.MotionSequence(topology, s, q, root_pos, root_rot)
    p = kin.fk(motion)[:, 0]
    feet = p[:, [topology.index(n) for n in FEET]]
    motion.root_pos[..., 1] -= feet[..., 1].min()
    feet[..., 1] -= feet[..., 1].min()
    motion.f = find_contacts(feet, config.contact_height, config.contact_speed)
    return motion


def gen_scene(config, rng, topology=None, spacing=1.5):
    """``config.person_count`` motions placed side by side."""
    n = config.person_count
    offsets = (np.arange(n) - (n - 1) / 2) * spacing
    return [gen_motion(config, rng, topology, origin=(x, 0.0)) for x in offsets]


def gen_rig(config, rng, center=(0.0, 0.9, 0.0)):
    """K cameras around ``center``; orbiting with a slight pan when dynamic."""
    T, K = config.T, config.K
    center = np.asarray(center, float)
    t = np.arange(T) / config.fps
    w, h = config.image_size
    intr, extr = [], []
    for k in range(K):
        az0 = 2 * np.pi * k / K + rng.uniform(-0.3, 0.3)
        radius = rng.uniform(*config.camera_radius)
        height = rng.uniform(*config.camera_height)
        f = rng.uniform(*config.focal_range)
        cam = Intrinsics(f, f, w / 2 + rng.uniform(-10, 10), h / 2 + rng.uniform(-10, 10), 0.0)
        if config.dynamic_cameras:
            speed = rng.uniform(*config.orbit_speed) * rng.choice([-1.0, 1.0])
            bob = rng.uniform(0.0, 0.2)
            pan = rng.uniform(-0.15, 0.15, size=3) * np.array([1.0, 0.3, 1.0])
            phase = rng.uniform(0, 2 * np.pi)
        else:
            speed = bob = phase = 0.0
            pan = np.zeros(3)
        intr.append([cam] * T)
        frames = []
        for ti in t:
            az = az0 + speed * ti
            pos = center + np.array([radius * np.sin(az), height - center[1] + bob * np.sin(phase + ti), radius * np.cos(az)])
            target = center + pan * np.sin(0.5 * ti + phase)
            frames.append(look_at(pos, target))
        extr.append(frames)
    return CameraRig(intr, extr, tuple(config.image_size), bool(config.dynamic_cameras))


def to_camera_frames(motion, rig):
    """Express a world-frame motion relative to every camera of ``rig``."""
    R = rig.rotations()                                   # (T, K, 3, 3)
    Tr = rig.translations()                               # (T, K, 3)
    root_w = motion.root_pos[:, 0]
    rot_w = motion.root_rot[:, 0]
    root_pos = np.einsum("tkij,tj->tki", R, root_w) + Tr
    qc = kin.quat_from_matrix(R)
    root_rot = kin.align_hemisphere(kin.quat_mul(qc, rot_w[:, None]))
    return kin.MotionSequence(motion.topology, motion.s, motion.q, root_pos, root_rot, motion.f)


@dataclass
class Observation:
    V: np.ndarray            # (T, K, J, 3): u, v, confidence
    positions: np.ndarray    # (T, K, J, 3) camera-frame ground truth
    Z_r: np.ndarray          # (T, K) root depth per frame and view
    motion: kin.MotionSequence
    rig: CameraRig


def _confidence(err, sigma, lo, hi, rng):
    if sigma <= 0:
        return np.full(err.shape, hi)
    return hi - (hi - lo) * np.minimum(1.0, err / (3.0 * sigma))


def render_observations(motion, rig, noise, rng):
    """Project a world-frame motion into every view with noise and occlusion.

    Confidence falls linearly with the realized pixel error, inside the
    visible or occluded range.
    """
    cam_motion = to_camera_frames(motion, rig)
    P3 = kin.fk(cam_motion)                               # (T, K, J, 3)
    if np.any(P3[..., 2] <= 1e-9):
        raise ValueError("a joint lies behind a camera")
    T, K, J, _ = P3.shape
    uv = np.empty((T, K, J, 2))
    for k in range(K):
        for t in range(T):
            intr = rig.intrinsics[k][t]
            ident = np.hstack([np.eye(3), np.zeros((3, 1))])
            uv[t, k] = project(intr.matrix @ ident, P3[t, k])
    occluded = rng.random((T, K, J)) < noise.occlusion_prob
    sigma = np.where(occluded, np.hypot(noise.pixel_sigma, noise.occluded_sigma), noise.pixel_sigma)
    delta = rng.standard_normal((T, K, J, 2)) * sigma[..., None]
    err = np.linalg.norm(delta, axis=-1)
    conf_vis = _confidence(err, noise.pixel_sigma, *noise.visible_confidence, rng)
    occ_sigma = np.hypot(noise.pixel_sigma, noise.occluded_sigma)
    conf_occ = _confidence(err, occ_sigma, *noise.occluded_confidence, rng)
    conf = np.where(occluded, conf_occ, conf_vis)
    V = np.concatenate([uv + delta, conf[..., None]], axis=-1)
    return Observation(V, P3, cam_motion.root_pos[..., 2].copy(), cam_motion, rig)


def gen_sequence(config, rng, topology=None):
    """One complete training record: motion, rig and rendered observation."""
    motion = gen_motion(config, rng, topology)
    center = motion.root_pos[:, 0].mean(axis=0)
    rig = gen_rig(config, rng, center=center)
    return render_observations(motion, rig, config.noise, rng)


def associate_tracks(detections):
    """Greedy frame-to-frame identity assignment.

    ``detections[t]`` is a list of (J, 2) skeletons.  Frame 0 assigns IDs in
    the given order.  Later frames take the ID of the closest skeleton
    (mean per-joint distance) from the previous frame, matching pairs in
    ascending distance and using each previous ID once; anything left
    unmatched gets a fresh ID.
    """
    ids = []
    next_id = 0
    prev, prev_ids = [], []
    for frame in detections:
        frame = [np.asarray(d, float) for d in frame]
        cur = [None] * len(frame)
        pairs = sorted(
            (np.linalg.norm(d - p, axis=-1).mean(), i, j)
            for i, d in enumerate(frame) for j, p in enumerate(prev)
        )
        used = set()
        for _, i, j in pairs:
            if cur[i] is None and j not in used:
                cur[i] = prev_ids[j]
                used.add(j)
        for i in range(len(frame)):
            if cur[i] is None:
                cur[i] = next_id
                next_id += 1
        ids.append(cur)
        prev, prev_ids = frame, cur
    return ids


STANDARD_SPLITS = {"train": 200, "test": 40}
STANDARD_SEED = 42


def gen_dataset(config, splits, seed, topology=None):
    """Sequences for each named split, drawn from one seeded stream in split order."""
    rng = np.random.default_rng(seed)
    return {name: [gen_sequence(config, rng, topology) for _ in range(count)]
            for name, count in splits.items()}


def standard_config():
    """The desk-scale reference scene: T=64, K=4, moving cameras, 1 px noise."""
    return SceneConfig(T=64, K=4, dynamic_cameras=True, noise=NoiseModel(pixel_sigma=1.0))
