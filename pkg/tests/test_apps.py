import numpy as np
import pytest

from skelgen import apps
from skelgen import training as Tr
from skelgen.data import synth_corpus
from skelgen.errors import UsageError
from skelgen.motion import encode_motion, forward_kinematics, identity_motion
from skelgen.skeleton import toy_skeleton


@pytest.fixture(scope="module")
def setup():
    cfg = Tr.Config(channels="16,8,8,8", width=16, mapping_depth=2).validate()
    hier = Tr.hierarchy_from_config(cfg)
    G, _ = Tr.build_models(cfg, hier)
    enc = Tr.build_encoder(cfg, hier, G)
    enc.w_avg = Tr.mean_w(G, 200, 0).astype(np.float32)
    inv = apps.Inverter(enc, G, hier.topology)
    corp = synth_corpus(8, 4, hier.topology)
    return inv, corp.motions, hier.topology


def test_prefix_input_bit_exact(setup):
    _, ms, _ = setup
    m = ms[0]
    full = encode_motion(m)
    for t in (1, 17, 63, 64):
        b = apps.prefix_input(m, t)
        assert np.array_equal(b[:t], full[:t])
        assert not b[t:].any()
    for bad in (0, 65):
        with pytest.raises(UsageError):
            apps.prefix_input(m, bad)


def test_full_prefix_is_inversion(setup):
    inv, ms, _ = setup
    a = apps.predict_from_prefix(ms[1], 64, inv)
    b = apps.invert(ms[1], inv)
    assert np.array_equal(a.rotations, b.rotations) and np.array_equal(a.velocity, b.velocity)


def test_fusion_assembly_index(setup):
    _, ms, _ = setup
    m1, m2 = ms[0], ms[1]
    a, b = encode_motion(m1), encode_motion(m2)
    for t in (0, 1, 32, 64):
        x = apps.fusion_input(m1, m2, t)
        assert np.array_equal(x[:t], a[:t]) and np.array_equal(x[t:], b[t:])
    with pytest.raises(UsageError):
        apps.fusion_input(m1, identity_motion(64, 3), 10)
    with pytest.raises(UsageError):
        apps.fusion_input(m1, m2, 65)


def test_self_fusion_is_inversion(setup):
    inv, ms, _ = setup
    f = apps.motion_fusion(ms[2], ms[2], 20, inv)
    assert np.array_equal(f.rotations, apps.invert(ms[2], inv).rotations)


def test_outputs_are_valid_motions(setup):
    inv, ms, top = setup
    rng = np.random.default_rng(0)
    noisy = apps.rotation_jitter(ms[0], 5.0, rng)
    edited = apps.raise_joint(ms[0], top, "RightArm", 0.8)
    outs = [apps.denoise(noisy, inv), apps.spatial_edit_cleanup(edited, inv),
            apps.predict_from_prefix(ms[0], 30, inv), apps.motion_fusion(ms[0], ms[1], 30, inv)]
    for o in outs:
        assert o.T == 64 and o.J == top.J
        assert np.allclose(np.linalg.norm(o.rotations, axis=-1), 1.0, atol=1e-6)
        assert set(np.unique(o.contacts)) <= {0.0, 1.0}


def test_zero_noise_denoise_is_inversion(setup):
    inv, ms, _ = setup
    same = apps.rotation_jitter(ms[3], 0.0, np.random.default_rng(1))
    assert np.allclose(same.rotations, ms[3].rotations, atol=1e-12)
    assert np.array_equal(apps.denoise(ms[3], inv).rotations, apps.invert(ms[3], inv).rotations)


def test_wrong_shapes_rejected(setup):
    inv, ms, _ = setup
    with pytest.raises(UsageError):
        apps.invert(ms[0].slice(0, 32), inv)
    with pytest.raises(UsageError):
        apps.denoise(identity_motion(64, 4), inv)


def test_jitter_magnitude():
    rng = np.random.default_rng(2)
    m = identity_motion(200, 7)
    out = apps.rotation_jitter(m, 5.0, rng)
    ang = 2 * np.degrees(np.arccos(np.clip(np.abs(out.rotations[..., 0]), 0, 1)))
    assert 3.0 < np.sqrt(np.mean(ang ** 2)) < 7.0


def test_raise_joint_only_moves_target(setup):
    _, ms, top = setup
    m = ms[0]
    j = top.index("RightArm")
    out = apps.raise_joint(m, top, j, 0.8, start=16)
    others = [k for k in range(top.J) if k != j]
    assert np.array_equal(out.rotations[:, others], m.rotations[:, others])
    assert np.array_equal(out.rotations[:17, j], m.rotations[:17, j])
    assert not np.allclose(out.rotations[-1, j], m.rotations[-1, j])


def test_measures():
    top = toy_skeleton()
    m = identity_motion(10, 7)
    m.velocity[:] = [0.1, 0, 0]
    assert apps.position_error(m, m, top) == 0.0
    d = apps.frame_deltas(m, top)
    assert d.shape == (9,) and np.allclose(d, 0.1)
    assert apps.seam_ratio(m, top, 5) == pytest.approx(1.0)
    jump = m.copy()
    jump.velocity[5] = [1.0, 0, 0]
    assert apps.seam_ratio(jump, top, 5) == pytest.approx(10.0)
    shifted = m.copy()
    shifted.velocity = m.velocity * 2
    expect = np.linalg.norm(forward_kinematics(shifted, top) - forward_kinematics(m, top), axis=-1).mean()
    assert apps.position_error(m, shifted, top) == pytest.approx(expect)
