"""Evaluation of trained models and the camera-perturbation study."""

from __future__ import annotations

import csv

import numpy as np

from flexkin import metrics
from flexkin.camera import triangulate_many
from flexkin.train import make_batch

METRIC_FIELDS = ["sequence_id", "K", "sigma_frac", "mpjpe_mm", "accel_err", "root_scale", "root_err_mm"]
PERTURB_FIELDS = ["sigma_frac", "baseline_mpjpe", "flex_mpjpe"]


def predict(model, records, views=None, batch_size=8):
    """Per-record FK positions (T, K', J, 3) and root positions (T, K', 3)."""
    preds = []
    for b0 in range(0, len(records), batch_size):
        chunk = records[b0:b0 + batch_size]
        batch = make_batch(chunk, views)
        out = model.forward(batch.V, batch.image_size)
        pos = model.positions(out).data
        for i in range(len(chunk)):
            preds.append((pos[i], out["root_pos"].data[i]))
    return preds


def sequence_metrics(pred_pos, pred_root, gt_pos):
    """Metrics of one sequence averaged over its views.

    Acceleration error is taken on pelvis-relative joints, like MPJPE; the
    root path has its own up-to-scale metric.
    """
    K = gt_pos.shape[1]
    rel_pred = pred_pos - pred_pos[..., :1, :]
    rel_gt = gt_pos - gt_pos[..., :1, :]
    mp = [metrics.mpjpe_p1(pred_pos[:, k], gt_pos[:, k]) for k in range(K)]
    acc = [metrics.accel_error(rel_pred[:, k], rel_gt[:, k]) for k in range(K)]
    roots = [metrics.root_trajectory_error(pred_root[:, k], gt_pos[:, k, 0]) for k in range(K)]
    return {
        "mpjpe_mm": float(np.mean(mp)),
        "accel_err": float(np.mean(acc)),
        "root_scale": float(np.mean([r[0] for r in roots])),
        "root_err_mm": float(np.mean([r[1] for r in roots])),
    }


def evaluate(model, records, views=None):
    """Per-sequence rows plus an aggregate row with ``sequence_id == 'mean'``."""
    if records and model.topology != records[0].motion.topology:
        raise ValueError("checkpoint topology differs from the dataset topology")
    views = list(range(records[0].K)) if views is None else list(views)
    rows = []
    for i, (rec, (pos, root)) in enumerate(zip(records, predict(model, records, views))):
        row = {"sequence_id": i, "K": len(views), "sigma_frac": 0.0}
        row.update(sequence_metrics(pos, root, rec.positions[:, views]))
        rows.append(row)
    rows.append(aggregate(rows, len(views)))
    return rows


def aggregate(rows, K, sigma=0.0):
    agg = {"sequence_id": "mean", "K": K, "sigma_frac": sigma}
    for key in ("mpjpe_mm", "accel_err", "root_scale", "root_err_mm"):
        agg[key] = float(np.mean([r[key] for r in rows])) if rows else float("nan")
    return agg


def world_positions(rec):
    """Ground-truth world-frame joints (T, J, 3) recovered from view 0."""
    R = rec.rig.rotations()[:, 0]
    Tr = rec.rig.translations()[:, 0]
    return np.einsum("tji,tnj->tni", R, rec.positions[:, 0] - Tr[:, None])


def triangulation_mpjpe(rec, rig):
    """DLT from every view of ``rec`` using the (possibly perturbed) ``rig``."""
    Ps = rig.projections()                                 # (T, K, 3, 4)
    uv = rec.V[..., :2]                                    # (T, K, J, 2)
    est = np.stack([triangulate_many(Ps[t], uv[t]) for t in range(rec.T)])
    return metrics.mpjpe_p1(est, world_positions(rec))


def perturbation_study(records, sigmas, seed, model):
    """Baseline and model MPJPE for each perturbation level.

    Every level reuses the same random stream, so the only thing that
    changes between levels is the noise scale.  The model never sees the
    rig, so its error is computed once and repeated.
    """
    if records and records[0].rig is None:
        raise ValueError("perturbation study needs records with camera rigs")
    flex_rows = evaluate(model, records)
    flex = flex_rows[-1]["mpjpe_mm"]
    out = []
    for sigma in sigmas:
        rng = np.random.default_rng(seed)
        errs = [triangulation_mpjpe(rec, rec.rig.perturbed(sigma, rng)) for rec in records]
        out.append({"sigma_frac": float(sigma), "baseline_mpjpe": float(np.mean(errs)), "flex_mpjpe": flex})
    return out


def write_csv(path, rows, fields):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in fields})


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
