"""Command-line entry points."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from flexkin import io as fio
from flexkin import synthstudio as studio
from flexkin.skeleton import default_topology

log = logging.getLogger("flexkin")

DEFAULT_SEED = studio.STANDARD_SEED


def _seed(value):
    env = os.environ.get("FLEXKIN_SEED")
    return int(env) if env is not None else int(value)


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SystemExit(f"{path}: invalid JSON ({exc})")


def _views(text, K):
    try:
        views = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise SystemExit(f"--views expects comma-separated view numbers, got {text!r}")
    if not views or any(v < 1 or v > K for v in views) or len(set(views)) != len(views):
        raise SystemExit(f"--views must be distinct numbers in 1..{K}")
    return [v - 1 for v in views]


def _sidecar(path, suffix):
    root, _ = os.path.splitext(path)
    return root + suffix


# -- commands -------------------------------------------------------------------------

def synth_dataset(config_doc, out_dir):
    scene = studio.SceneConfig(**config_doc.get("scene", {}))
    if "splits" in config_doc:
        splits = {k: int(v) for k, v in config_doc["splits"].items()}
    else:
        splits = {"train": int(config_doc.get("n_sequences", 0))}
    if any(v < 0 for v in splits.values()):
        raise SystemExit("sequence counts must be non-negative")
    seed = _seed(config_doc.get("seed", DEFAULT_SEED))
    data = studio.gen_dataset(scene, splits, seed)
    records = {k: [fio.record_from_observation(o) for o in v] for k, v in data.items()}
    topology = default_topology()
    manifest = {
        "seed": seed,
        "scene": scene.to_dict(),
        "topology": json.loads(topology.to_json()),
        "layout": {"V": "T,3J,K", "gt_positions": "T,3J,K", "Z_r": "T,K",
                   "motion.q": "T,4,J-1", "motion.r": "T,7,K", "motion.f": "T,2"},
    }
    return fio.write_dataset(out_dir, records, manifest)


def cmd_synth(args):
    manifest = synth_dataset(_load_json(args.config), args.out)
    print(f"wrote {sum(manifest['counts'].values())} sequences to {args.out} (seed {manifest['seed']})")


def cmd_train(args):
    from flexkin.plotting import plot_loss_curve
    from flexkin.train import NonFiniteLoss, TrainConfig, train

    cfg = TrainConfig.from_file(args.config, data=args.data)
    if args.epochs is not None:
        cfg.epochs = args.epochs

    def progress(epoch, row):
        print(f"epoch {epoch}: total {row['total']:.5f} position {row['position']:.6f}", flush=True)

    try:
        _, log_path = train(cfg, args.out, progress=progress)
    except NonFiniteLoss as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 2
    plot_loss_curve(log_path, os.path.join(args.out, "loss_curve.png"))
    print(f"checkpoint written to {args.out}")
    return 0


def cmd_eval(args):
    from flexkin import evaluate as ev
    from flexkin.metrics import root_trajectory_error
    from flexkin.plotting import plot_root_trajectory, plot_views

    model, _ = fio.load_checkpoint(args.ckpt)
    records = fio.read_split(args.data, args.split)
    if not records:
        raise SystemExit("evaluation split is empty")
    views = _views(args.views, records[0].K)
    subsets = [views[:n] for n in range(1, len(views) + 1)] if args.sweep else [views]
    rows, summary = [], []
    for sub in subsets:
        part = ev.evaluate(model, records, sub)
        rows.extend(part)
        summary.append(part[-1])
        print(f"K={len(sub)} views={[v + 1 for v in sub]}: MPJPE {part[-1]['mpjpe_mm']:.2f} mm, "
              f"accel {part[-1]['accel_err']:.2f}, root {part[-1]['root_err_mm']:.1f} mm")
    ev.write_csv(args.out, rows, ev.METRIC_FIELDS)
    if len(summary) > 1:
        plot_views(summary, _sidecar(args.out, "_views.png"))
    _, root = ev.predict(model, records[:1], views)[0]
    scale, _ = root_trajectory_error(root[:, 0], records[0].positions[:, views[0], 0])
    plot_root_trajectory(root[:, 0], records[0].positions[:, views[0], 0], scale,
                         _sidecar(args.out, "_root.png"))
    return 0


def cmd_perturb(args):
    from flexkin import evaluate as ev
    from flexkin.net.model import FlexModel
    from flexkin.plotting import plot_perturbation

    records = fio.read_split(args.data, args.split)
    try:
        sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]
    except ValueError:
        raise SystemExit(f"--sigmas expects comma-separated numbers, got {args.sigmas!r}")
    if args.ckpt:
        model, _ = fio.load_checkpoint(args.ckpt)
    else:
        model = FlexModel(records[0].motion.topology, seed=_seed(args.seed))
    rows = ev.perturbation_study(records, sigmas, _seed(args.seed), model)
    ev.write_csv(args.out, rows, ev.PERTURB_FIELDS)
    plot_perturbation(rows, _sidecar(args.out, ".png"))
    for r in rows:
        print(f"sigma {r['sigma_frac']:.3f}: baseline {r['baseline_mpjpe']:.2f} mm, model {r['flex_mpjpe']:.2f} mm")
    return 0


def predicted_motion(model, record):
    """The model's motion for one record, as a MotionSequence."""
    from flexkin.kinematics import MotionSequence
    from flexkin.train import make_batch

    batch = make_batch([record])
    out = model.forward(batch.V, batch.image_size)
    return MotionSequence(model.topology, out["s"].data[0], out["q"].data[0], out["root_pos"].data[0],
                          out["root_rot"].data[0], (out["f"].data[0] > 0.5).astype(float))


def cmd_export_bvh(args):
    from flexkin.bvh import write_bvh

    if args.ckpt:
        if not args.data:
            raise SystemExit("--ckpt needs --data to pick the input sequence")
        model, _ = fio.load_checkpoint(args.ckpt)
        record = fio.read_split(args.data, args.split)[args.index]
        motion = predicted_motion(model, record)
    elif args.motion:
        motion = fio.load_motion(args.motion)
    else:
        raise SystemExit("give --motion or --ckpt")
    write_bvh(args.out, motion, args.view, args.frame_time)
    print(f"wrote {motion.T} frames of view {args.view} to {args.out}")
    return 0


def cmd_track(args):
    doc = _load_json(getattr(args, "in"))
    frames = doc["frames"] if isinstance(doc, dict) else doc
    if not isinstance(frames, list):
        raise SystemExit("track input must be a list of frames or {\"frames\": [...]}")
    try:
        dets = [[np.asarray(d, float) for d in frame] for frame in frames]
        for frame in dets:
            for d in frame:
                if d.ndim != 2 or d.shape[-1] != 2:
                    raise ValueError(f"skeleton of shape {d.shape}")
    except (TypeError, ValueError) as exc:
        raise SystemExit(f"malformed detections: {exc}")
    ids = studio.associate_tracks(dets)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump({"ids": ids}, fh)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="flexkin", description="Camera-free multi-view motion reconstruction")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic multi-view dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a view subset")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--views", default="1,2,3,4", help="1-based view numbers, e.g. 1,2,3,4")
    s.add_argument("--split", default="test")
    s.add_argument("--sweep", action="store_true", help="also evaluate every prefix of --views")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("perturb", help="camera perturbation study against DLT triangulation")
    s.add_argument("--data", required=True)
    s.add_argument("--sigmas", default="0,0.03,0.04")
    s.add_argument("--split", default="test")
    s.add_argument("--ckpt")
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_perturb)

    s = sub.add_parser("export-bvh", help="write a motion as BVH")
    s.add_argument("--motion")
    s.add_argument("--ckpt")
    s.add_argument("--data")
    s.add_argument("--split", default="test")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--view", type=int, default=0)
    s.add_argument("--frame-time", type=float, default=1.0 / 30)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_bvh)

    s = sub.add_parser("track", help="assign person IDs to per-frame detections")
    s.add_argument("--in", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_track)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args) or 0


if __name__ == "__main__":
    sys.exit(main())
