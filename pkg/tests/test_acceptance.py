"""Acceptance criteria 1-10.

Each test prints one ``criterion N PASS/FAIL`` line (repeated in the
terminal summary) and then asserts the same condition.
"""

import json
import os
import time

import numpy as np
import pytest

from flexkin import autodiff as ad
from flexkin import bvh
from flexkin import camera as cam
from flexkin import evaluate as ev
from flexkin import io as fio
from flexkin import kinematics as kin
from flexkin import losses as L
from flexkin import metrics as M
from flexkin import synthstudio as studio
from flexkin.cli import main, predicted_motion
from flexkin.net import FlexModel, FusionConfig, multiview_conv, view_attention
from flexkin.net.model import Q, prepare_input
from flexkin.skeleton import SkeletonTopology, default_topology, expand_lengths, rigid_topology
from flexkin.train import Adam, TrainConfig, generator_losses, make_batch, train

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
STANDARD_TRAIN = os.path.join(ROOT, "configs", "standard_train.json")
GRAD_TOL = 1e-4


def _tiny_topology():
    return SkeletonTopology(
        ["pelvis", "root_overlap", "spine", "l_hip", "r_hip"], [-1, 0, 1, 0, 0],
        [[0, 0, 0], [0, 0, 0], [0, 1, 0], [1, 0, 0], [-1, 0, 0]],
        mirror_groups=[(2, 3)], overlap_bones=[0])


def _tiny_model(seed):
    cfg = FusionConfig(channels=8, heads=2, eq_kernels=(1, 3, 5), disc_channels=4)
    return FlexModel(_tiny_topology(), cfg, seed=seed)


def _random_V(rng, K, T, J):
    return np.concatenate([rng.uniform(300, 700, (K, T, J, 2)), rng.uniform(0.5, 1, (K, T, J, 1))], axis=-1)


def _random_motion(rng, T=4, K=3, topology=None):
    top = topology or default_topology()
    return kin.MotionSequence(
        top, rng.uniform(0.1, 0.5, top.distinct_length_count),
        kin.quat_normalize(rng.standard_normal((T, top.bone_count, 4))),
        rng.standard_normal((T, K, 3)) + [0, 0, 5],
        kin.quat_normalize(rng.standard_normal((T, K, 4))))


# -- 1: gradient suite -------------------------------------------------------------------

def _tiny_records(rng_seed, T, K):
    scene = studio.SceneConfig(T=T, K=K)
    data = studio.gen_dataset(scene, {"train": 2}, rng_seed)
    return [fio.record_from_observation(o) for o in data["train"]]


def _gradient_cases():
    """(op name, zero-argument check returning the worst relative error), three shapes per op."""
    cases = []
    for i, (K, T, C) in enumerate([(1, 4, 2), (2, 5, 3), (3, 6, 4)]):
        rng = np.random.default_rng(100 + i)

        def p(*shape):
            return ad.parameter(rng.uniform(-0.5, 0.5, shape))

        def add(name, f, params):
            cases.append((name, lambda f=f, params=params: ad.grad_check(f, params)))

        x, w, b = p(2, T, C), p(3, C, C + 1), p(C + 1)
        add("conv1d", lambda x=x, w=w, b=b: (ad.conv1d(x, w, b) ** 2).sum(), [x, w, b])

        x, ws, wc, b = p(K, T, C), p(3, C, 2), p(3, C, 2), p(2)
        add("multiview_conv", lambda x=x, ws=ws, wc=wc, b=b: (multiview_conv(x, ws, wc, b) ** 2).sum(),
            [x, ws, wc, b])

        Ca = 2 * C
        x, prm = p(K, T, Ca), [p(Ca, Ca) for _ in range(4)] + [p(Ca)]
        wt = rng.standard_normal((K, T, Ca))
        add("view_attention", lambda x=x, prm=prm, wt=wt: (view_attention(x, *prm, heads=2) * wt).sum(),
            [x] + prm)

        m = _tiny_model(i)
        x0, ray = prepare_input(_random_V(rng, K, T, 5), (1000, 1000), m.config)
        xin = ad.parameter(x0)
        wf = rng.standard_normal((T, 8))
        for tag, fn in (("FS", m.fuse_S), ("FQ", m.fuse_Q)):
            picked = [m.params[f"{tag}.att.v"], m.params[f"{tag}.collapse.w"], m.params[f"{tag}.expand.n.g"]]
            add(f"fuse_{tag[1]}", lambda fn=fn, xin=xin, wf=wf: (fn(xin) * wf).sum(), [xin] + picked)

        feat, views = p(T, 8), p(K, T, 8)
        add("encode_S", lambda m=m, feat=feat: (m.encode_S(feat) ** 2).sum(), [feat, m.params["ES.out.w"]])
        wq = [rng.standard_normal(s) for s in ((T, 4, Q), (T, K, 3), (T, K, Q), (T, 2))]
        picked = [m.params["EQ.out.b"], m.params["EQ.root.rot.out.w"], m.params["EQ.root.pos.out.b"]]
        add("encode_Q", lambda m=m, feat=feat, views=views, ray=ray, x0=x0, wq=wq: sum(
            (o * w_).sum() for o, w_ in zip(m.encode_Q(feat, views, ray, inputs=x0), wq)),
            [feat, views] + picked)

        dq = p(T, Q)
        add("discriminate", lambda m=m, dq=dq: m.discriminate(1, dq) ** 2 + m.discriminate(0, dq),
            [dq] + m.disc_parameters())

        top = default_topology()
        s, q = p(top.distinct_length_count), p(T, top.bone_count, 4)
        rp, rr = p(T, K, 3), p(T, K, 4)
        wk = rng.standard_normal((T, K, top.joint_count, 3))
        add("fk", lambda top=top, s=s, q=q, rp=rp, rr=rr, wk=wk: (
            kin.fk_tensor(top, expand_lengths(top, s), ad.normalize(q), rp, ad.normalize(rr)) * wk).sum(),
            [s, q, rp, rr])

        a, g = p(T, K, 3, 3), rng.standard_normal((T, K, 3, 3))
        labels = rng.integers(0, 2, (T, 2)).astype(float)
        fp = ad.parameter(rng.uniform(0.1, 0.9, (T, 2)))
        add("loss_position", lambda a=a, g=g: L.loss_position(a, g), [a])
        add("loss_skeleton", lambda s=s: L.loss_skeleton(s, np.full(s.shape, 0.3)), [s])
        add("loss_root", lambda rp=rp: L.loss_root(rp[..., 2], np.full(rp.shape[:-1], 5.0)), [rp])
        add("loss_foot_labels", lambda fp=fp, labels=labels: L.loss_foot_labels(fp, labels), [fp])
        add("loss_foot_contact", lambda a=a, labels=labels: L.loss_foot_contact(a, labels, (1, 2)), [a])
        real = rng.standard_normal((T, Q))
        # the discriminator role detaches the fake stream, so only D's weights carry gradient
        for role, wrt in (("discriminator", []), ("generator", [dq])):
            add(f"loss_gan_{role}", lambda m=m, dq=dq, real=real, role=role: L.loss_gan(
                real, dq, lambda z: m.discriminate(2, z), role), wrt + m.disc_parameters())

        big = FlexModel(top, FusionConfig(channels=8, heads=2, disc_channels=4), seed=i)
        batch = make_batch(_tiny_records(i, T, K))
        picked = [big.params["ES.out.b"], big.params["EQ.root.pos.out.b"], big.params["EQ.root.rot.out.b"],
                  big.disc_params["D.fc.b"]]
        add("loss_total", lambda big=big, batch=batch: generator_losses(
            big, batch, L.LossWeights(), length_unit=0.01)[0], picked)
    return cases


def test_criterion_01_gradient_suite(criterion):
    t0 = time.perf_counter()
    worst = {}
    for name, run in _gradient_cases():
        worst[name] = max(worst.get(name, 0.0), run())
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v < GRAD_TOL}
    ok = not bad and elapsed < 60
    detail = f"{len(worst)} ops x 3 shapes, worst rel. err {max(worst.values()):.1e}, {elapsed:.1f} s"
    if bad:
        detail += f", failing: {bad}"
    assert criterion(1, "gradient suite", ok, detail)


# -- 2: FK invariants --------------------------------------------------------------------

def test_criterion_02_fk_invariants(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    top = default_topology()
    overlap_joints = [b + 1 for b in top.overlap_bones]
    bone_err = proc_err = 0.0
    coincide = True
    for _ in range(100):
        m = _random_motion(rng, T=3, K=3)
        p = kin.fk(m)
        lengths = m.bone_lengths
        for j in range(1, top.joint_count):
            d = np.linalg.norm(p[..., j, :] - p[..., top.parent[j], :], axis=-1)
            bone_err = max(bone_err, np.abs(d - lengths[j - 1]).max())
        for j in overlap_joints:
            coincide &= bool(np.array_equal(p[..., j, :], p[..., top.parent[j], :]))
        for t in range(m.T):
            a = p[t, 0] - p[t, 0].mean(0)
            for k in range(1, m.K):
                b = p[t, k] - p[t, k].mean(0)
                U, _, Vt = np.linalg.svd(b.T @ a)
                R = U @ np.diag([1, 1, np.sign(np.linalg.det(U @ Vt))]) @ Vt
                proc_err = max(proc_err, np.abs(a @ R.T - b).max())
    elapsed = time.perf_counter() - t0
    ok = bone_err <= 1e-9 and coincide and proc_err <= 1e-9 and elapsed < 10
    assert criterion(2, "FK invariants", ok,
                     f"bone-length err {bone_err:.1e}, overlap joints coincide={coincide}, "
                     f"Procrustes residual {proc_err:.1e}, {elapsed:.1f} s")


# -- 3: camera suite ---------------------------------------------------------------------

def test_criterion_03_camera_suite(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(300):
        X = rng.normal(size=3) * 0.5 + [0, 1, 0]
        Ps = []
        for _ in range(int(rng.integers(2, 6))):
            az = rng.uniform(0, 2 * np.pi)
            pos = [4 * np.sin(az), rng.uniform(0.5, 2), 4 * np.cos(az)]
            K = cam.Intrinsics(*rng.uniform(800, 1200, 2), *rng.uniform(400, 600, 2))
            Ps.append(cam.projection_matrix(K, cam.look_at(pos, [0, 1, 0])))
        est = cam.triangulate([(P, cam.project(P, X)) for P in Ps])
        worst = max(worst, np.abs(est - X).max())
    samples = cam.perturb(np.full(100_000, 100.0), 0.03, np.random.default_rng(42))
    mean, std = samples.mean(), samples.std()
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and 99.9 <= mean <= 100.1 and 2.9 <= std <= 3.1 and elapsed < 30
    assert criterion(3, "camera suite", ok,
                     f"triangulate(project) err {worst:.1e}, perturb mean {mean:.3f} std {std:.3f}, {elapsed:.1f} s")


# -- standard training run shared by criteria 4, 5 and 8 ----------------------------------

@pytest.fixture(scope="module")
def standard_run(standard_records, tmp_path_factory):
    t0 = time.perf_counter()
    cfg = TrainConfig.from_file(STANDARD_TRAIN)
    model, _ = train(cfg, str(tmp_path_factory.mktemp("standard_ckpt")), standard_records["train"])
    return model, cfg, time.perf_counter() - t0


# -- 4: perturbation trend ---------------------------------------------------------------

def test_criterion_04_perturbation_trend(criterion, standard_records, standard_run):
    t0 = time.perf_counter()
    model = standard_run[0]
    rows = ev.perturbation_study(standard_records["test"], [0.0, 0.03, 0.04], 42, model)
    base = [r["baseline_mpjpe"] for r in rows]
    flex = [r["flex_mpjpe"] for r in rows]
    elapsed = time.perf_counter() - t0
    steps_ok = all(b > a * 1.1 for a, b in zip(base, base[1:]))
    flex_same = len({np.float64(f).tobytes() for f in flex}) == 1
    ok = steps_ok and flex_same and elapsed < 300
    assert criterion(4, "perturbation trend", ok,
                     "baseline MPJPE " + " / ".join(f"{b:.1f}" for b in base)
                     + f" mm, model {flex[0]:.1f} mm at every sigma (bit-identical={flex_same}), {elapsed:.1f} s")


# -- 5: view-count trend -----------------------------------------------------------------

def test_criterion_05_view_count_trend(criterion, standard_records, standard_run):
    model, cfg, train_time = standard_run
    t0 = time.perf_counter()
    test = standard_records["test"]
    mp = {K: ev.evaluate(model, test, list(range(K)))[-1]["mpjpe_mm"] for K in (1, 2, 4)}
    elapsed = train_time + time.perf_counter() - t0
    ok = mp[4] <= mp[2] <= mp[1] and mp[4] <= 0.85 * mp[1] and elapsed < 600 and cfg.epochs <= 20
    assert criterion(5, "view-count trend", ok,
                     f"MPJPE K=1 {mp[1]:.1f}, K=2 {mp[2]:.1f}, K=4 {mp[4]:.1f} mm "
                     f"(K=4 {100 * (1 - mp[4] / mp[1]):.1f}% below K=1), {cfg.epochs} epochs, {elapsed:.0f} s")


# -- 6: topology decoupling --------------------------------------------------------------

def _decoupling_target():
    """Both arms swung forward at the shoulders, head tilted right at the neck."""
    top = default_topology()
    q = np.tile(kin.IDENTITY, (1, top.bone_count, 1))
    q[0, top.bone_of("l_shoulder")] = kin.quat_about([0, 1, 0], -0.6)
    q[0, top.bone_of("r_shoulder")] = kin.quat_about([0, 1, 0], 0.6)
    q[0, top.bone_of("neck_overlap")] = kin.quat_about([0, 0, 1], -0.5)
    s = np.array([0.25, 0.25, 0.20, 0.18, 0.28, 0.25, 0.12, 0.42, 0.40, 0.14])
    motion = kin.MotionSequence(top, s, q, np.zeros((1, 1, 3)), np.tile(kin.IDENTITY, (1, 1, 1)))
    per_bone = expand_lengths(top, s)
    lengths = {n: per_bone[j - 1] for j, n in enumerate(top.joint_names) if j}
    return kin.fk(motion)[:, 0], lengths


def _rotation_fit(top, lengths, names, target, steps=1500, lr=0.02, seed=42):
    """Adam over all joint rotations; returns the final mean squared position residual."""
    rng = np.random.default_rng(seed)
    idx = [top.index(n) for n in names]
    per_bone = np.array([lengths[n] for n in top.joint_names[1:]])
    q = ad.parameter(np.tile(kin.IDENTITY, (1, top.bone_count, 1)) + 0.01 * rng.standard_normal((1, top.bone_count, 4)))
    opt = Adam([q], lr)
    root_pos, root_rot = np.zeros((1, 1, 3)), np.tile(kin.IDENTITY, (1, 1, 1))
    best = np.inf
    for i in range(steps):
        p = kin.fk_tensor(top, per_bone, ad.normalize(q), root_pos, root_rot)[:, 0][:, idx]
        d = p - target
        loss = (d * d).mean()
        best = min(best, float(loss.data))
        opt.zero_grad()
        loss.backward()
        opt.step()
        if i in (steps // 2, 5 * steps // 6):
            opt.lr *= 0.3
    return best


def test_criterion_06_topology_decoupling(criterion):
    t0 = time.perf_counter()
    top, rig = default_topology(), rigid_topology()
    target, lengths = _decoupling_target()
    names = list(rig.joint_names)                 # joints present in both skeletons
    target = target[:, [top.index(n) for n in names]]
    overlap = _rotation_fit(top, lengths, names, target)
    rigid = _rotation_fit(rig, lengths, names, target)
    elapsed = time.perf_counter() - t0
    ok = overlap < 1e-6 and rigid >= 10 * overlap and rigid >= 1e-6 and elapsed < 60
    assert criterion(6, "topology decoupling", ok,
                     f"residual overlap {overlap:.1e} vs rigid {rigid:.1e} m^2, {elapsed:.1f} s")


# -- 7: metrics exactness ----------------------------------------------------------------

def test_criterion_07_metrics_exactness(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    # dyadic coordinates keep every subtraction below exact
    p = rng.integers(-64, 64, (5, 6, 3)) / 8.0
    gt = np.zeros((4, 6, 3))
    off = gt.copy()
    off[1, 2, 0] = 3.0                                  # millimeters, so scale=1
    v = rng.integers(-8, 8, (1, 6, 3)) / 4.0
    line = p[:1] + np.arange(7.0)[:, None, None] * v
    line2 = p[1:2] - np.arange(7.0)[:, None, None] * v / 2
    g = p[:, 0] + [0.0, 0.0, 5.0]
    checks = {
        "mpjpe pred=gt": M.mpjpe_p1(p, p) == 0.0,
        "mpjpe offset": M.mpjpe_p1(p + 0.25, p) == 0.0,
        "mpjpe one joint": M.mpjpe_p1(off, gt, scale=1.0) == 3.0 / 24,
        "accel constant velocity": M.accel_error(line, line2) == 0.0,
        "accel pred=gt": M.accel_error(p, p) == 0.0,
        "root pred=gt": M.root_trajectory_error(g, g) == (1.0, 0.0),
        "root half": M.root_trajectory_error(0.5 * g, g) == (2.0, 0.0),
    }

    a, b = rng.standard_normal((6, 5, 3)), rng.standard_normal((6, 5, 3))
    mp_loop, acc_loop, n_acc = 0.0, 0.0, 0
    for t in range(6):
        for j in range(5):
            d = [(a[t, j, c] - a[t, 0, c]) - (b[t, j, c] - b[t, 0, c]) for c in range(3)]
            mp_loop += (d[0] ** 2 + d[1] ** 2 + d[2] ** 2) ** 0.5
    for t in range(1, 5):
        for j in range(5):
            d = [(a[t + 1, j, c] - 2 * a[t, j, c] + a[t - 1, j, c])
                 - (b[t + 1, j, c] - 2 * b[t, j, c] + b[t - 1, j, c]) for c in range(3)]
            acc_loop += (d[0] ** 2 + d[1] ** 2 + d[2] ** 2) ** 0.5
            n_acc += 1
    pr, gr = a[:, 0], b[:, 0]
    num = sum(pr[t, c] * gr[t, c] for t in range(6) for c in range(3))
    den = sum(pr[t, c] ** 2 for t in range(6) for c in range(3))
    s_loop = num / den
    err_loop = sum(sum((s_loop * pr[t, c] - gr[t, c]) ** 2 for c in range(3)) ** 0.5 for t in range(6)) / 6
    s, e = M.root_trajectory_error(pr, gr, scale=1.0)
    gaps = [abs(M.mpjpe_p1(a, b, scale=1.0) - mp_loop / 30), abs(M.accel_error(a, b, scale=1.0) - acc_loop / n_acc),
            abs(s - s_loop), abs(e - err_loop)]
    elapsed = time.perf_counter() - t0
    failed = [k for k, v in checks.items() if not v]
    ok = not failed and max(gaps) <= 1e-12 and elapsed < 5
    detail = f"{len(checks) - len(failed)}/{len(checks)} exact examples, loop-oracle gap {max(gaps):.1e}, {elapsed:.2f} s"
    if failed:
        detail += f", failing: {failed}"
    assert criterion(7, "metrics exactness", ok, detail)


# -- 8: bone-length constancy ------------------------------------------------------------

def test_criterion_08_bone_length_constancy(criterion, standard_records, standard_run, tmp_path):
    model = standard_run[0]
    worst_fk = worst_bvh = 0.0
    for i, rec in enumerate(standard_records["test"][:5]):
        motion = predicted_motion(model, rec)
        lengths = motion.bone_lengths
        top = motion.topology
        p = kin.fk(motion)
        path = tmp_path / f"pred_{i}.bvh"
        bvh.write_bvh(path, motion, view=0)
        pb = bvh.read_bvh(path).positions()
        for j in range(1, top.joint_count):
            d = np.linalg.norm(p[..., j, :] - p[..., top.parent[j], :], axis=-1)
            worst_fk = max(worst_fk, np.abs(d - lengths[j - 1]).max())
            db = np.linalg.norm(pb[:, j] - pb[:, top.parent[j]], axis=-1)
            worst_bvh = max(worst_bvh, np.abs(db - lengths[j - 1]).max())
    ok = worst_fk <= 1e-9 and worst_bvh <= 1e-9
    assert criterion(8, "bone-length constancy", ok,
                     f"max |distance - s| {worst_fk:.1e} m in FK output, {worst_bvh:.1e} m in exported BVH")


# -- 9: determinism ----------------------------------------------------------------------

def test_criterion_09_determinism(criterion, tmp_path, monkeypatch):
    monkeypatch.delenv("FLEXKIN_SEED", raising=False)
    scene = tmp_path / "scene.json"
    scene.write_text(json.dumps({"scene": {"T": 16, "K": 4}, "splits": {"train": 6, "test": 2}, "seed": 42}))
    data = [tmp_path / "data_a", tmp_path / "data_b"]
    for d in data:
        main(["synth", "--config", str(scene), "--out", str(d)])
    data_same = all((data[0] / f).read_bytes() == (data[1] / f).read_bytes()
                    for f in ("train.jsonl", "test.jsonl", "manifest.json"))
    cfg = json.loads(open(STANDARD_TRAIN).read())
    cfg.update(epochs=2, window=8)
    cfg_path = tmp_path / "train.json"
    cfg_path.write_text(json.dumps(cfg))
    for name in ("ck_a", "ck_b"):
        main(["train", "--config", str(cfg_path), "--data", str(data[0]), "--out", str(tmp_path / name)])
    ckpt_same = all((tmp_path / "ck_a" / f).read_bytes() == (tmp_path / "ck_b" / f).read_bytes()
                    for f in ("params.bin", "manifest.json", "loss_log.csv"))
    gen = []
    for _ in range(2):
        rng = np.random.default_rng(42)
        cfgs = studio.SceneConfig(T=16, K=3, person_count=2)
        people = studio.gen_scene(cfgs, rng)
        rig = studio.gen_rig(cfgs, rng)
        obs = studio.render_observations(people[0], rig, cfgs.noise, rng)
        gen.append(b"".join(x.tobytes() for x in
                            [m.q for m in people] + [rig.projections(), obs.V, obs.positions]))
    gen_same = gen[0] == gen[1]
    ok = data_same and ckpt_same and gen_same
    assert criterion(9, "determinism", ok,
                     f"dataset bytes equal={data_same}, checkpoints equal={ckpt_same}, generators equal={gen_same}")


# -- 10: BVH round trip ------------------------------------------------------------------

def test_criterion_10_bvh_round_trip(criterion, tmp_path):
    rng = np.random.default_rng(42)
    worst = 0.0
    for i in range(20):
        top = default_topology() if i % 2 == 0 else rigid_topology()
        m = _random_motion(rng, T=5, K=2, topology=top)
        view = i % 2
        path = tmp_path / f"m{i}.bvh"
        bvh.write_bvh(path, m, view)
        worst = max(worst, np.abs(bvh.read_bvh(path).positions() - kin.fk(m)[:, view]).max())
    ok = worst <= 1e-6
    assert criterion(10, "BVH round trip", ok, f"max position error {worst:.1e} m over 20 motions")
