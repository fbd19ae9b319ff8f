"""Dataset, checkpoint and motion file formats.

Arrays on the wire are row-major with the documented axis order: frame
first, then the joint (or channel) axis, then the view axis:

* ``V``, ``gt_positions``: (T, 3J, K)
* ``Z_r``: (T, K)
* ``motion.q``: (T, 4, J-1); ``motion.r``: (T, 3+4, K); ``motion.f``: (T, 2)

Internally the package keeps (T, K, J, 3) style arrays; the converters
below are the only place the two layouts meet.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from flexkin import kinematics as kin
from flexkin.camera import CameraRig
from flexkin.skeleton import SkeletonTopology, default_topology


# -- motion -------------------------------------------------------------------------

def motion_to_dict(motion):
    return {
        "topology": json.loads(motion.topology.to_json()),
        "s": motion.s.tolist(),
        "q": kin.flat_rotations(motion.q).tolist(),
        "r": kin.flat_root(motion.root_pos, motion.root_rot).tolist(),
        "f": motion.f.tolist(),
    }


def motion_from_dict(doc, topology=None):
    if topology is None:
        topology = SkeletonTopology.from_json(doc["topology"]) if "topology" in doc else default_topology()
    q = np.transpose(np.asarray(doc["q"], float), (0, 2, 1))
    r = np.asarray(doc["r"], float)
    root_pos = np.transpose(r[:, :3], (0, 2, 1))
    root_rot = np.transpose(r[:, 3:], (0, 2, 1))
    f = np.asarray(doc.get("f", np.zeros((q.shape[0], 2))), float)
    return kin.MotionSequence(topology, np.asarray(doc["s"], float), q, root_pos, root_rot, f)


def save_motion(path, motion):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(motion_to_dict(motion), fh)


def load_motion(path, topology=None):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "motion" in doc:                    # a full dataset record also works
        doc = doc["motion"]
    return motion_from_dict(doc, topology)


# -- dataset ------------------------------------------------------------------------

@dataclass
class Record:
    """One sequence in internal layout."""

    V: np.ndarray              # (T, K, J, 3)
    positions: np.ndarray      # (T, K, J, 3) camera-frame ground truth
    Z_r: np.ndarray            # (T, K)
    motion: kin.MotionSequence
    rig: CameraRig | None = None

    @property
    def T(self):
        return self.V.shape[0]

    @property
    def K(self):
        return self.V.shape[1]


def record_from_observation(obs):
    return Record(obs.V, obs.positions, obs.Z_r, obs.motion, obs.rig)


def record_to_dict(rec):
    return {
        "V": kin.flat_positions(rec.V).tolist(),
        "gt_positions": kin.flat_positions(rec.positions).tolist(),
        "Z_r": np.asarray(rec.Z_r).tolist(),
        "motion": motion_to_dict(rec.motion),
        "rig": rec.rig.to_dict() if rec.rig is not None else None,
    }


def record_from_dict(doc, topology=None):
    motion = motion_from_dict(doc["motion"], topology)
    rig = CameraRig.from_dict(doc["rig"]) if doc.get("rig") else None
    return Record(
        kin.unflat_positions(np.asarray(doc["V"], float)),
        kin.unflat_positions(np.asarray(doc["gt_positions"], float)),
        np.asarray(doc["Z_r"], float),
        motion,
        rig,
    )


def dataset_paths(directory):
    return {
        "manifest": os.path.join(directory, "manifest.json"),
        "train": os.path.join(directory, "train.jsonl"),
        "test": os.path.join(directory, "test.jsonl"),
    }


def write_dataset(directory, splits, manifest):
    """Write ``splits`` (name -> list of Record) as JSON lines plus a manifest."""
    os.makedirs(directory, exist_ok=True)
    counts = {}
    for name, records in splits.items():
        with open(os.path.join(directory, f"{name}.jsonl"), "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(record_to_dict(rec)))
                fh.write("\n")
        counts[name] = len(records)
    manifest = dict(manifest, counts=counts)
    with open(dataset_paths(directory)["manifest"], "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def read_manifest(directory):
    with open(dataset_paths(directory)["manifest"], encoding="utf-8") as fh:
        return json.load(fh)


def read_split(directory, split, topology=None):
    path = os.path.join(directory, f"{split}.jsonl")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no {split} split in {directory}")
    topology = topology or SkeletonTopology.from_json(read_manifest(directory)["topology"])
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(record_from_dict(json.loads(line), topology))
    return out


# -- checkpoints --------------------------------------------------------------------

def save_checkpoint(directory, model, extra=None):
    """Manifest of shapes/config/seed plus a flat little-endian float64 blob."""
    os.makedirs(directory, exist_ok=True)
    params = model.all_params()
    manifest = {
        "params": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
        "fusion": model.config.to_dict(),
        "seed": model.seed,
        "topology": json.loads(model.topology.to_json()),
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    blob = np.concatenate([v.data.reshape(-1) for v in params.values()]) if params else np.zeros(0)
    with open(os.path.join(directory, "params.bin"), "wb") as fh:
        fh.write(blob.astype("<f8").tobytes())


def load_checkpoint(directory):
    from flexkin.net.model import FlexModel, FusionConfig

    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    with open(os.path.join(directory, "params.bin"), "rb") as fh:
        blob = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    topology = SkeletonTopology.from_json(manifest["topology"])
    model = FlexModel(topology, FusionConfig(**manifest["fusion"]), seed=manifest["seed"])
    params = model.all_params()
    offset = 0
    for entry in manifest["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in params or params[name].shape != shape:
            raise ValueError(f"checkpoint parameter {name} {shape} does not fit the model")
        n = int(np.prod(shape))
        params[name].data = blob[offset:offset + n].reshape(shape).copy()
        offset += n
    if offset != blob.size:
        raise ValueError("checkpoint blob size does not match its manifest")
    if len(manifest["params"]) != len(params):
        raise ValueError("checkpoint does not cover every model parameter")
    return model, manifest
