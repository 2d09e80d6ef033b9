import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skelgen import quat
from skelgen.data import synth_corpus
from skelgen.errors import UsageError, ValidationError
from skelgen.motion import (
    Motion,
    contact_thresholds,
    decode_motion,
    encode_motion,
    extract_foot_contact,
    foot_velocity,
    forward_kinematics,
    identity_motion,
    ik_foot_cleanup,
    integrate_root,
)
from skelgen.skeleton import SkeletonTopology, chain_skeleton, reference_skeleton, toy_skeleton


def random_motion(rng, T=16, J=7, contacts=True):
    q = quat.canonical(quat.normalize(rng.standard_normal((T, J, 4))))
    F = (rng.random((T, 2)) < 0.5).astype(float) if contacts else np.zeros((T, 2))
    return Motion(q, rng.standard_normal((T, 3)) * 0.05, F)


# ---- quaternions ----------------------------------------------------------------


def test_identity_is_neutral():
    rng = np.random.default_rng(0)
    q = quat.normalize(rng.standard_normal((5, 4)))
    assert np.allclose(quat.mul(quat.identity((5,)), q), q)
    assert np.allclose(quat.mul(q, quat.identity((5,))), q)


def test_rotate_matches_matrix():
    rng = np.random.default_rng(1)
    q = quat.normalize(rng.standard_normal((50, 4)))
    v = rng.standard_normal((50, 3))
    assert np.allclose(quat.rotate(q, v), np.einsum("nij,nj->ni", quat.to_matrix(q), v))


def test_axis_angle_quarter_turn():
    q = quat.from_axis_angle([0, 0, 1], np.pi / 2)
    assert np.allclose(quat.rotate(q, np.array([1.0, 0, 0])), [0, 1, 0])


def test_between_including_antiparallel():
    rng = np.random.default_rng(2)
    for _ in range(20):
        u, v = rng.standard_normal(3), rng.standard_normal(3)
        r = quat.rotate(quat.between(u, v), u / np.linalg.norm(u))
        assert np.allclose(r, v / np.linalg.norm(v), atol=1e-9)
    u = np.array([0.0, 1.0, 0.0])
    assert np.allclose(quat.rotate(quat.between(u, -u), u), -u)


def test_slerp_endpoints_and_midpoint():
    a = quat.identity()
    b = quat.from_axis_angle([0, 1, 0], 1.0)
    assert np.allclose(quat.slerp(a, b, 0.0), a)
    assert np.allclose(quat.slerp(a, b, 1.0), b)
    assert np.isclose(quat.angle_between(a, quat.slerp(a, b, 0.5)), 0.5)


def test_identity_to_zero_euler():
    ang, flags = quat.to_euler(quat.identity((3,)), "ZYX")
    assert np.array_equal(ang, np.zeros((3, 3)))
    assert not flags.any()


@pytest.mark.parametrize("order", ["XYZ", "XZY", "YXZ", "YZX", "ZXY", "ZYX"])
def test_euler_round_trip(order):
    rng = np.random.default_rng(3)
    ang = rng.uniform(-170, 170, (200, 3))
    ang[:, 1] = rng.uniform(-80, 80, 200)  # away from gimbal lock
    back, flags = quat.to_euler(quat.from_euler(ang, order), order)
    assert not flags.any()
    assert np.abs(back - ang).max() < 1e-4


def test_euler_is_intrinsic_channel_order():
    # Z then X, applied about the moving axes
    q = quat.from_euler([[90.0, 90.0, 0.0]], "ZXY")[0]
    expect = quat.mul(quat.from_axis_angle([0, 0, 1], np.pi / 2), quat.from_axis_angle([1, 0, 0], np.pi / 2))
    assert np.allclose(quat.canonical(expect), q)


def test_gimbal_flagged():
    _, flags = quat.to_euler(quat.from_euler([[10.0, 90.0, 5.0]], "ZYX"), "ZYX")
    assert flags.all()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_canonical_same_rotation(v):
    q = quat.normalize(np.array(v))
    c = quat.canonical(q)
    assert c[0] >= 0
    assert np.allclose(quat.to_matrix(c), quat.to_matrix(q))


# ---- packing ----------------------------------------------------------------------


def test_identity_motion_block():
    b = encode_motion(identity_motion(8, 7))
    assert b.shape == (8, 10, 4)
    assert np.array_equal(b[:, :7], np.broadcast_to([1.0, 0, 0, 0], (8, 7, 4)))
    assert not b[:, 7:].any()


def test_reference_block_shape():
    assert encode_motion(identity_motion(64, 17)).shape == (64, 20, 4)


def test_round_trip_100_motions():
    rng = np.random.default_rng(4)
    for _ in range(100):
        m = random_motion(rng, T=int(rng.integers(2, 20)), J=int(rng.integers(1, 18)))
        d = decode_motion(encode_motion(m))
        assert np.abs(d.rotations - m.rotations).max() < 1e-7
        assert np.abs(d.velocity - m.velocity).max() < 1e-7
        assert np.array_equal(d.contacts, m.contacts)


def test_encode_rejects_non_unit():
    m = identity_motion(4, 3)
    m.rotations[2, 1] *= 1.01
    with pytest.raises(ValidationError):
        encode_motion(m)


def test_decode_zero_quaternion_warns():
    b = encode_motion(identity_motion(4, 3))
    b[1, 2] = 0.0
    m = decode_motion(b, from_generator=True)
    assert np.array_equal(m.rotations[1, 2], [1.0, 0, 0, 0])
    assert len(m.warnings) == 1


def test_decode_generator_contact_threshold():
    b = encode_motion(identity_motion(2, 3))
    b[:, 4, 0] = [3.0, -3.0]
    m = decode_motion(b, from_generator=True)
    assert list(m.contacts[:, 0]) == [1.0, 0.0]


# ---- kinematics ------------------------------------------------------------------


def test_integrate_root_convention():
    V = np.tile([0.0, 0.0, 1.0], (4, 1))
    assert np.array_equal(integrate_root(V)[:, 2], [0, 1, 2, 3])
    assert not integrate_root(np.zeros((5, 3))).any()
    rng = np.random.default_rng(5)
    V = rng.standard_normal((10, 3))
    assert np.allclose(np.diff(integrate_root(V), axis=0), V[1:])


def test_fk_identity_pose_sums_offsets():
    top = toy_skeleton()
    p = forward_kinematics(identity_motion(3, 7), top)
    for j in range(7):
        expect = top.root_offset + sum(top.offsets[k] for k in top.path_to_root(j)[:-1])
        assert np.allclose(p[:, j], expect)


def test_fk_quarter_turn_chain():
    top = chain_skeleton(2)
    m = identity_motion(1, 2)
    m.rotations[0, 0] = quat.from_axis_angle([0, 0, 1], np.pi / 2)
    p = forward_kinematics(m, top)
    assert np.allclose(p[0, 1] - p[0, 0], [0, 1, 0])


def test_fk_constant_velocity():
    m = identity_motion(6, 7)
    m.velocity[:] = [1.0, 0, 0]
    p = forward_kinematics(m, toy_skeleton())
    assert np.allclose(p[:, 0, 0] - p[0, 0, 0], np.arange(6))


def test_fk_translation_equivariance():
    rng = np.random.default_rng(6)
    top = reference_skeleton()
    m = random_motion(rng, J=17)
    shifted = m.copy()
    c = np.array([0.3, -0.1, 0.7])
    shifted.velocity = m.velocity + c
    d = forward_kinematics(shifted, top) - forward_kinematics(m, top)
    assert np.allclose(d, (np.arange(m.T)[:, None] * c)[:, None, :])


def test_fk_joint_count_mismatch():
    with pytest.raises(UsageError):
        forward_kinematics(identity_motion(2, 5), toy_skeleton())


def test_foot_velocity_cases():
    top = toy_skeleton()
    p = forward_kinematics(identity_motion(5, 7), top)
    assert not foot_velocity(p, top.feet).any()
    m = identity_motion(5, 7)
    m.velocity[:] = [0.2, 0, 0]
    assert np.allclose(foot_velocity(forward_kinematics(m, top), top.feet), 0.2)
    with pytest.raises(UsageError):
        foot_velocity(p[:1], top.feet)


def test_foot_velocity_matches_fd():
    rng = np.random.default_rng(7)
    top = toy_skeleton()
    p = forward_kinematics(random_motion(rng), top)
    v = foot_velocity(p, top.feet)
    fd = np.linalg.norm(p[1:, list(top.feet)] - p[:-1, list(top.feet)], axis=-1)
    assert np.allclose(v[1:], fd)
    assert np.allclose(v[0], v[1])


def test_contact_static_and_airborne():
    top = toy_skeleton()
    h, v = contact_thresholds(top)
    p = forward_kinematics(identity_motion(4, 7), top)
    assert p[0, top.feet[0], 1] == pytest.approx(0.0)
    assert extract_foot_contact(p, top.feet, h, v).all()
    p[..., 1] += 0.5
    assert not extract_foot_contact(p, top.feet, h, v).any()


def test_walk_contacts_match_stance():
    top = reference_skeleton()
    corp = synth_corpus(11, 10, top, T=64)
    for m, lab, stance in zip(corp.motions, corp.labels, corp.stance):
        if corp.classes[lab] == "walk":
            assert np.mean(m.contacts == stance) > 0.9
            assert 0.0 < m.contacts.mean() < 1.0


# ---- foot cleanup ------------------------------------------------------------------


def test_cleanup_fixed_point():
    top = reference_skeleton()
    m = identity_motion(8, 17)
    m.contacts[:] = 1.0
    out = ik_foot_cleanup(m, top)
    assert np.abs(out.rotations - m.rotations).max() < 1e-6


def test_cleanup_no_contacts_is_identity():
    rng = np.random.default_rng(8)
    m = random_motion(rng, J=17, contacts=False)
    out = ik_foot_cleanup(m, reference_skeleton())
    assert np.array_equal(out.rotations, m.rotations)


@pytest.mark.parametrize("make", [reference_skeleton, toy_skeleton])
def test_cleanup_removes_slide(make):
    top = make()
    T = 12
    m = identity_motion(T, top.J)
    m.contacts[:, 0] = 1.0
    # slide the left foot forward by 0.1 over the stance via the hip
    chain = top.leg_chain(top.feet[0])
    hip = chain[0]
    ang = np.linspace(0, 0.1 / top.leg_length(), T)
    bend = 0.3 if len(chain) > 2 else 0.0  # keep a knee off full extension so the pin is reachable
    m.rotations[:, hip] = quat.from_axis_angle([1, 0, 0], -ang - bend)
    if bend:
        m.rotations[:, chain[1]] = quat.from_axis_angle([1, 0, 0], np.full(T, 2 * bend))
    before = forward_kinematics(m, top)[:, top.feet[0]]
    assert np.linalg.norm(before[-1] - before[0]) > 0.09
    out = ik_foot_cleanup(m, top)
    after = forward_kinematics(out, top)[:, top.feet[0]]
    assert np.linalg.norm(after - after[0], axis=-1).max() < 0.01
    others = [j for j in range(top.J) if j not in top.leg_chain(top.feet[0])]
    assert np.array_equal(out.rotations[:, others], m.rotations[:, others])


def test_custom_topology_root_offset():
    top = SkeletonTopology(["a", "b", "c"], [-1, 0, 0], np.array([[0, 1, 0], [1, -1, 0], [-1, -1, 0]]), (1, 2))
    p = forward_kinematics(identity_motion(1, 3), top)
    assert np.allclose(p[0], [[0, 1, 0], [1, 0, 0], [-1, 0, 0]])
