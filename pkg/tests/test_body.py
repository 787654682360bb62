import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from monohuman.body import (DEFAULT_LIMITS, N_BONES, SHAPE_NAMES, PoseParams, ShapeParams, SkeletonRig,
                            build_dataset, build_rig, forward_kinematics, lbs_apply, lbs_deform, load_skin,
                            make_humanoid, make_triplet, max_edge_stretch, pose_local_angles, pose_scan,
                            read_manifest, rigid_weights, sample_pose, save_skin, skeleton_template_mesh,
                            write_manifest)
from monohuman.camera import four_orthogonal_views, orbit_camera
from monohuman.raster import rasterize


@pytest.fixture(scope="module")
def body():
    return make_humanoid()


def _pose(**bones):
    rot = np.zeros((N_BONES, 3))
    for j, v in bones.items():
        rot[int(j[1:])] = v
    return PoseParams(rot)


def test_canonical_height_and_fit(body):
    v = body.mesh.vertices
    assert 1.5 < np.ptp(v[:, 1]) < 1.9
    assert np.linalg.norm(v, axis=1).max() < 1.5
    assert 2000 <= body.mesh.n_vertices <= 6000


def test_arm_length_coefficient_changes_arm_span():
    k = SHAPE_NAMES.index("arm_length")
    spans = []
    for b in (2.0, -2.0):
        beta = np.zeros(8)
        beta[k] = b
        rig = build_rig(ShapeParams(beta))
        arm = [4, 5]
        spans.append(sum(np.linalg.norm(rig.tails[j] - rig.heads[j]) for j in arm))
    assert spans[0] / spans[1] >= 1.2


def test_humanoid_deterministic():
    beta = ShapeParams(np.linspace(-1, 1, 8))
    a, b = make_humanoid(beta, 5), make_humanoid(beta, 5)
    np.testing.assert_array_equal(a.mesh.vertices, b.mesh.vertices)
    np.testing.assert_array_equal(a.mesh.vertex_colors, b.mesh.vertex_colors)


def test_skinning_weight_invariants(body):
    w = body.weights
    assert (w >= 0).all()
    np.testing.assert_allclose(w.sum(1), 1.0, atol=1e-5)
    assert ((w > 0).sum(1) <= 4).all()


def test_shape_clamped():
    assert ShapeParams(np.full(8, 5.0)).beta.max() == 2.0


def test_identity_pose_fixed_point(body):
    assert np.abs(lbs_deform(body, PoseParams()).vertices - body.mesh.vertices).max() < 1e-5


def test_single_bone_quarter_turn():
    rig = SkeletonRig([-1], [[0, 0, 0]], [[0, 0.1, 0]], [[0.05, 0.05]])
    rots, trans = forward_kinematics(rig, PoseParams([[0, 0, np.pi / 2]]))
    out = lbs_apply(np.array([[1.0, 0, 0]]), np.ones((1, 1)), rots, trans)
    np.testing.assert_allclose(out, [[0, 1, 0]], atol=1e-12)


def test_half_half_translation_blend():
    t1, t2 = np.array([0.1, 0, 0.2]), np.array([0, -0.3, 0])
    out = lbs_apply(np.array([[0.4, 0.5, 0.6]]), np.array([[0.5, 0.5]]), np.stack([np.eye(3)] * 2),
                    np.stack([t1, t2]))
    np.testing.assert_allclose(out, [[0.4, 0.5, 0.6]] + (t1 + t2) / 2, atol=1e-12)


def test_rigid_weights_match_per_part_rigid_motion(body):
    pose = sample_pose(11, scale=0.8)
    rots, trans = forward_kinematics(body.rig, pose)
    got = lbs_apply(body.mesh.vertices, rigid_weights(body.part, N_BONES), rots, trans)
    want = np.einsum("nab,nb->na", rots[body.part], body.mesh.vertices) + trans[body.part]
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_forward_kinematics_matches_scipy_chain(body):
    # rest-relative transforms compose along the chain: pelvis -> spine -> chest -> upper arm
    pose = sample_pose(3)
    rots, trans = forward_kinematics(body.rig, pose)
    want = np.eye(3)
    for j in (0, 1, 2, 4):
        want = want @ Rotation.from_rotvec(pose.rotations[j]).as_matrix()
    np.testing.assert_allclose(rots[4], want, atol=1e-12)


def test_single_chain_inverse_round_trip(body):
    # one rotated bone: applying the negated rotation to the deformed vertices restores the rest pose
    pose = _pose(b5=[0.0, 0.0, 0.3])
    rots, trans = forward_kinematics(body.rig, pose)
    w = rigid_weights(body.part, N_BONES)
    moved = lbs_apply(body.mesh.vertices, w, rots, trans)
    inv_r = np.swapaxes(rots, 1, 2)
    inv_t = -np.einsum("jab,jb->ja", inv_r, trans)
    back = lbs_apply(moved, w, inv_r, inv_t)
    assert np.abs(back - body.mesh.vertices).max() < 1e-4


def test_deform_preserves_topology(body):
    out = lbs_deform(body, sample_pose(2))
    assert out.n_vertices == body.mesh.n_vertices
    np.testing.assert_array_equal(out.triangles, body.mesh.triangles)


def test_bad_hierarchy_rejected():
    with pytest.raises(ValueError):
        SkeletonRig([-1, 2, 0], np.zeros((3, 3)), np.ones((3, 3)), np.ones((3, 2)))
    with pytest.raises(ValueError):
        forward_kinematics(build_rig(), PoseParams(np.zeros((3, 3))))


def _mask(mesh, az, res=48):
    return rasterize(mesh, orbit_camera(az, 0, 1.5, 49, res, res), "mask").pixels[..., 0] > 0


def _iou(a, b):
    return (a & b).sum() / max((a | b).sum(), 1)


def test_template_matches_rest_silhouette(body):
    tpl = skeleton_template_mesh(body.rig)
    assert _iou(_mask(tpl, 0), _mask(body.mesh, 0)) > 0.6
    assert tpl.n_vertices < body.mesh.n_vertices


def test_template_left_right_mirror_for_symmetric_pose(body):
    tpl = skeleton_template_mesh(build_rig())
    left, right = _mask(tpl, 90), _mask(tpl, 270)
    assert _iou(left, right[:, ::-1]) > 0.95


def test_sample_pose_reproducible_and_within_limits():
    np.testing.assert_array_equal(sample_pose(7).rotations, sample_pose(7).rotations)
    for s in range(1000):
        ang = pose_local_angles(sample_pose(s))
        assert (np.abs(ang) <= DEFAULT_LIMITS + 1e-9).all()


def test_zero_limits_give_identity_pose():
    assert sample_pose(3, limits=np.zeros_like(DEFAULT_LIMITS)).is_identity()


def test_dataset_pool_and_split():
    train, pool = build_dataset(2, 3, seed=1)
    test, _ = build_dataset(2, 1, seed=1, split="test")
    assert len(pool) == 6 == len(train)
    assert not {s.sample_id for s in train} & {s.sample_id for s in test}
    tr_shapes = {tuple(s.shape.beta) for s in train}
    assert not tr_shapes & {tuple(s.shape.beta) for s in test}
    for s in train[:3] + test:
        for cam in four_orthogonal_views(1.5, 49, 24, 24):
            assert rasterize(s.scan, cam, "mask").pixels.any()


def test_triplet_properties(body):
    p = sample_pose(4, scale=0.5)
    s_o, m_t, s_t = make_triplet(body, p, p)
    np.testing.assert_array_equal(s_o.vertices, s_t.vertices)
    np.testing.assert_array_equal(s_o.vertex_colors, s_t.vertex_colors)
    _, m_t, s_t = make_triplet(body, PoseParams(), sample_pose(9, scale=0.5))
    assert _iou(_mask(m_t, 0), _mask(s_t, 0)) > 0.6


def test_extreme_twist_stretches_edges(body):
    lim = DEFAULT_LIMITS.copy()
    local = np.zeros_like(lim)
    local[5] = [lim[5, 0], lim[5, 1], 0]
    local[4] = [0, lim[4, 1], 0]
    rot = np.einsum("jab,jb->ja", build_rig().frames(), local)
    out = lbs_deform(body, PoseParams(rot))
    assert max_edge_stretch(body.mesh, out) > 1.5


def test_pose_scan_has_no_buried_faces_near_joints(body):
    scan = pose_scan(body, sample_pose(5, scale=0.5))
    assert len(scan.triangles) < len(body.mesh.triangles)


def test_skin_and_manifest_round_trip(tmp_path, body):
    save_skin(body, tmp_path / "a.skin")
    back = load_skin(tmp_path / "a.skin")
    np.testing.assert_array_equal(back["weights"], body.weights.astype(np.float32))
    np.testing.assert_array_equal(back["parents"], body.rig.parents)
    np.testing.assert_array_equal(back["part"], body.part)
    samples, _ = build_dataset(1, 2, seed=0)
    write_manifest(samples, tmp_path / "m.txt")
    rows = read_manifest(tmp_path / "m.txt")
    assert [r[0] for r in rows] == [s.sample_id for s in samples]
    np.testing.assert_allclose(rows[1][2].vector(), samples[1].pose.vector(), rtol=1e-8)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_deformed_normals_unit(seed):
    out = lbs_deform(make_humanoid(), sample_pose(seed, scale=0.5))
    np.testing.assert_allclose(np.linalg.norm(out.vertex_normals, axis=1), 1.0, atol=1e-4)
