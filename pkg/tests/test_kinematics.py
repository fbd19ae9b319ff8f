import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flexkin import kinematics as kin
from flexkin import autodiff as ad
from flexkin.metrics import mpjpe_p1
from flexkin.skeleton import SkeletonTopology, default_topology, expand_lengths

Z = np.array([0.0, 0.0, 1.0])


def random_motion(rng, T=5, K=3, topology=None):
    top = topology or default_topology()
    s = rng.uniform(0.1, 0.5, top.distinct_length_count)
    q = kin.quat_normalize(rng.standard_normal((T, top.bone_count, 4)))
    root_pos = rng.standard_normal((T, K, 3)) + [0, 0, 5]
    root_rot = kin.quat_normalize(rng.standard_normal((T, K, 4)))
    return kin.MotionSequence(top, s, q, root_pos, root_rot)


quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda v: np.linalg.norm(v) > 0.1)


class TestQuaternions:
    def test_identity_product(self):
        v = np.array([0.3, -0.1, 0.7, 0.2])
        np.testing.assert_array_equal(kin.quat_mul(kin.IDENTITY, v), v)

    def test_conjugate_product(self):
        q = np.array([0.3, -0.1, 0.7, 0.2])
        np.testing.assert_allclose(kin.quat_mul(q, kin.quat_conj(q)), [q @ q, 0, 0, 0], atol=1e-15)

    def test_quarter_turns_compose(self):
        qz = kin.quat_about(Z, np.pi / 2)
        half = kin.quat_mul(qz, qz)
        np.testing.assert_allclose(np.abs(half), [0, 0, 0, 1], atol=1e-15)
        np.testing.assert_allclose(kin.quat_rotate(half, [1, 0, 0]), [-1, 0, 0], atol=1e-15)

    def test_rotate_examples(self):
        np.testing.assert_array_equal(kin.quat_rotate(kin.IDENTITY, [1, 2, 3]), [1, 2, 3])
        np.testing.assert_allclose(kin.quat_rotate(kin.quat_about(Z, np.pi / 2), [1, 0, 0]), [0, 1, 0], atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(a=quats, b=quats)
    def test_norm_multiplicative(self, a, b):
        assert np.linalg.norm(kin.quat_mul(a, b)) == pytest.approx(np.linalg.norm(a) * np.linalg.norm(b), rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(q=quats, v=st.lists(st.floats(-10, 10), min_size=3, max_size=3))
    def test_rotate_matches_matrix_oracle(self, q, v):
        q = kin.quat_normalize(q)
        w, x, y, z = q
        # rotation matrix of a unit quaternion, written out independently
        R = np.array([[w*w + x*x - y*y - z*z, 2*(x*y - w*z), 2*(x*z + w*y)],
                      [2*(x*y + w*z), w*w - x*x + y*y - z*z, 2*(y*z - w*x)],
                      [2*(x*z - w*y), 2*(y*z + w*x), w*w - x*x - y*y + z*z]])
        out = kin.quat_rotate(q, v)
        np.testing.assert_allclose(out, R @ v, atol=1e-9)
        assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(v), abs=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(q=quats)
    def test_matrix_round_trip(self, q):
        q = kin.quat_normalize(q)
        back = kin.quat_from_matrix(kin.quat_to_matrix(q))
        np.testing.assert_allclose(back * np.sign(back @ q), q, atol=1e-9)

    def test_axis_angle_small(self):
        q = kin.quat_from_axis_angle(np.array([1e-10, 0, 0]))
        np.testing.assert_allclose(q, [1, 5e-11, 0, 0], atol=1e-18)

    def test_align_hemisphere(self):
        q = np.array([[1.0, 0, 0, 0], [-1.0, 0, 0, 0], [0.9, 0.1, 0, 0]])
        out = kin.align_hemisphere(q)
        assert np.all(np.sum(out[1:] * out[:-1], -1) > 0)


class TestForwardKinematics:
    def test_t_pose(self):
        top = default_topology()
        T, K = 2, 1
        m = kin.MotionSequence(top, np.ones(top.distinct_length_count),
                               np.tile(kin.IDENTITY, (T, top.bone_count, 1)),
                               np.zeros((T, K, 3)), np.tile(kin.IDENTITY, (T, K, 1)))
        p = kin.fk(m)
        expect = np.zeros((top.joint_count, 3))
        for j in range(1, top.joint_count):
            expect[j] = expect[top.parent[j]] + top.rest_dir[j] * (0.0 if j - 1 in top.overlap_bones else 1.0)
        np.testing.assert_allclose(p[0, 0], expect, atol=1e-15)

    def test_single_bone_chain(self):
        top = SkeletonTopology(["a", "b"], [-1, 0], [[0, 0, 0], [1, 0, 0]])
        m = kin.MotionSequence(top, [0.7], np.tile(kin.IDENTITY, (1, 1, 1)), np.zeros((1, 1, 3)),
                               kin.quat_about(Z, np.pi / 2)[None, None])
        np.testing.assert_allclose(kin.fk(m)[0, 0, 1], [0, 0.7, 0], atol=1e-15)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_bone_lengths_conserved(self, seed):
        m = random_motion(np.random.default_rng(seed))
        p = kin.fk(m)
        lengths = m.bone_lengths
        for j in range(1, m.topology.joint_count):
            d = np.linalg.norm(p[..., j, :] - p[..., m.topology.parent[j], :], axis=-1)
            np.testing.assert_allclose(d, lengths[j - 1], atol=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_views_related_by_rigid_transform(self, seed):
        m = random_motion(np.random.default_rng(seed), K=2)
        p = kin.fk(m)
        for t in range(m.T):
            a = p[t, 0] - p[t, 0].mean(0)
            b = p[t, 1] - p[t, 1].mean(0)
            U, _, Vt = np.linalg.svd(b.T @ a)
            R = U @ Vt
            assert np.linalg.det(R) > 0
            assert np.abs(a @ R.T - b).max() < 1e-9

    def test_overlap_joint_coincides_yet_decouples(self):
        rng = np.random.default_rng(1)
        m = random_motion(rng)
        top = m.topology
        p = kin.fk(m)
        for name in ("root_overlap", "neck_overlap"):
            j = top.index(name)
            np.testing.assert_array_equal(p[..., j, :], p[..., top.parent[j], :])
        m2 = m.copy()
        m2.q[:, top.bone_of("neck_overlap")] = kin.quat_about([0, 1, 0], 0.5)
        p2 = kin.fk(m2)
        head, shoulder = top.index("head"), top.index("l_shoulder")
        assert np.abs(p2[..., head, :] - p[..., head, :]).max() > 1e-3
        np.testing.assert_array_equal(p2[..., shoulder, :], p[..., shoulder, :])

    def test_root_zeroed(self):
        m = random_motion(np.random.default_rng(2))
        p, p0 = kin.fk(m), kin.fk_root_zeroed(m)
        assert np.all(p0[..., 0, :] == 0.0)
        np.testing.assert_allclose(p0, p - m.root_pos[:, :, None, :], atol=1e-12)
        for k in range(m.K):
            assert mpjpe_p1(p[:, k], p0[:, k]) < 1e-9

    def test_rejects_unnormalized_and_nan(self):
        m = random_motion(np.random.default_rng(3))
        bad = m.copy()
        bad.q[0, 0] *= 1.1
        with pytest.raises(ValueError):
            kin.fk(bad)
        bad = m.copy()
        bad.root_pos[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            kin.fk(bad)

    def test_shape_validation(self):
        top = default_topology()
        with pytest.raises(ValueError):
            kin.MotionSequence(top, np.ones(3), np.zeros((2, 19, 4)), np.zeros((2, 1, 3)), np.zeros((2, 1, 4)))

    def test_gradient(self):
        rng = np.random.default_rng(4)
        top = default_topology()
        s = ad.parameter(rng.uniform(0.2, 0.5, top.distinct_length_count))
        q = ad.parameter(rng.standard_normal((3, top.bone_count, 4)))
        rp = ad.parameter(rng.standard_normal((3, 2, 3)))
        rr = ad.parameter(rng.standard_normal((3, 2, 4)))
        w = rng.standard_normal((3, 2, top.joint_count, 3))

        def f():
            p = kin.fk_tensor(top, expand_lengths(top, s), ad.normalize(q), rp, ad.normalize(rr))
            return (p * w).sum()

        assert ad.grad_check(f, [s, q, rp, rr]) < 1e-6

    def test_layouts(self):
        p = np.random.default_rng(5).standard_normal((4, 2, 20, 3))
        flat = kin.flat_positions(p)
        assert flat.shape == (4, 60, 2)
        assert flat[1, 3 * 7 + 2, 1] == p[1, 1, 7, 2]
        np.testing.assert_array_equal(kin.unflat_positions(flat), p)
        m = random_motion(np.random.default_rng(6), T=3, K=2)
        assert m.r.shape == (3, 7, 2)


class TestTemporalDiff:
    def test_constant(self):
        assert not kin.temporal_diff(np.ones((5, 3))).any()

    def test_ramp(self):
        np.testing.assert_allclose(kin.temporal_diff(np.arange(6.0) * 0.5), 0.5)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=30))
    def test_telescoping(self, x):
        x = np.array(x)
        assert kin.temporal_diff(x).sum() == pytest.approx(x[-1] - x[0], abs=1e-9)

    def test_too_short(self):
        with pytest.raises(ValueError):
            kin.temporal_diff(np.ones((1, 3)))

    def test_axis_variant_on_tensors(self):
        x = np.random.default_rng(0).standard_normal((2, 5, 3))
        np.testing.assert_array_equal(kin.temporal_diff_axis(ad.Tensor(x), 1).data, np.diff(x, axis=1))
