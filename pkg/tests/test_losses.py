import math

import numpy as np
import pytest

from skelgen import losses as Lo
from skelgen import tensor as tn
from skelgen.data import synth_corpus
from skelgen.motion import encode_motion, forward_kinematics, identity_motion
from skelgen.skeleton import reference_skeleton, toy_skeleton
from skelgen.tensor import Tensor

LN2 = math.log(2.0)


@pytest.fixture(autouse=True)
def f64():
    with tn.default_dtype(np.float64):
        yield


def val(t):
    return float(t.data)


def test_adversarial_values():
    z = Tensor(np.zeros(4))
    assert val(Lo.adv_loss_g(z)) == pytest.approx(LN2, abs=1e-12)
    assert val(Lo.adv_loss_d(z, z)) == pytest.approx(2 * LN2, abs=1e-12)
    assert val(Lo.adv_loss_g(Tensor(np.full(4, 50.0)))) < 1e-20
    assert val(Lo.adv_loss_d(Tensor(np.full(4, 50.0)), Tensor(np.full(4, -50.0)))) < 1e-20


def test_touch_loss_grid():
    assert val(Lo.contact_touch_loss(Tensor(np.zeros(3)))) == pytest.approx(LN2)
    assert val(Lo.contact_touch_loss(Tensor(np.array([-1e4])))) == pytest.approx(-math.log(1e-12))
    grid = np.linspace(-40, 40, 401)
    vals = [val(Lo.contact_touch_loss(Tensor(np.array([g])))) for g in grid]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    live = [v for g, v in zip(grid, vals) if -27 < g < 30]  # strictly inside clamp and float saturation
    assert all(a > b for a, b in zip(live, live[1:]))


def _walking_block(top, T=6, speed=1.0, logit=0.0):
    m = identity_motion(T, top.J)
    m.velocity[:] = [speed, 0, 0]
    b = encode_motion(m)[None]
    b[0, :, top.J + 1:, 0] = logit
    return b


def test_contact_consistency_examples():
    top = toy_skeleton()
    assert val(Lo.contact_consistency_loss(Tensor(_walking_block(top, speed=0.0)), top)) == 0.0
    assert val(Lo.contact_consistency_loss(Tensor(_walking_block(top, logit=-1e4)), top)) == 0.0
    assert val(Lo.contact_consistency_loss(Tensor(_walking_block(top)), top)) == pytest.approx(0.5)


def test_fk_tensor_matches_numpy():
    rng = np.random.default_rng(0)
    top = reference_skeleton()
    corp = synth_corpus(1, 3, top, T=16)
    blocks = corp.blocks()
    p = Lo.fk_tensor(Tensor(blocks), top).data
    for b, m in zip(p, corp.motions):
        assert np.allclose(b, forward_kinematics(m, top), atol=1e-12)
    # unnormalised quaternions are normalised inside
    scaled = blocks.copy()
    scaled[:, :, :top.J] *= rng.uniform(0.5, 2.0, (3, 16, top.J, 1))
    assert np.allclose(Lo.fk_tensor(Tensor(scaled), top).data, p, atol=1e-10)


def test_contacts_to_prob_only_touches_contact_lanes():
    rng = np.random.default_rng(1)
    b = rng.standard_normal((2, 4, 10, 4))
    out = Lo.contacts_to_prob(Tensor(b), 7).data
    lanes = np.zeros(b.shape, bool)
    lanes[:, :, 8:, 0] = True
    assert np.array_equal(out[~lanes], b[~lanes])
    assert np.allclose(out[lanes], 1 / (1 + np.exp(-b[lanes])))


def test_r1_constant_and_linear():
    rng = np.random.default_rng(2)
    v = rng.standard_normal((3, 5))
    x = rng.standard_normal((4, 3, 5))
    lin = lambda t: tn.sum(tn.reshape(t * Tensor(v), (t.shape[0], -1)), 1)
    assert val(Lo.r1_reg(lin, x)) == pytest.approx(np.sum(v ** 2), rel=1e-12)
    const = lambda t: tn.sum(tn.reshape(t * 0.0, (t.shape[0], -1)), 1)
    assert val(Lo.r1_reg(const, x)) == 0.0


class _Linear:
    def __init__(self, M):
        self.M = Tensor(M)

    def __call__(self, w):
        return tn.reshape(tn.matmul(w, self.M), (w.shape[0], 1, self.M.shape[1], 1))


def test_path_length_linear_closed_form():
    M = np.array([[2.0, -1.0], [0.5, 3.0]])
    w = np.array([[0.3, -0.2], [1.0, 0.4]])
    loss, new_a, norms = Lo.path_length_reg(_Linear(M.T), w, 0.0, np.random.default_rng(3), beta=0.1)
    r = np.random.default_rng(3).standard_normal((2, 1, 2, 1)) / math.sqrt(2)
    expect = np.linalg.norm(r[:, 0, :, 0] @ M, axis=1)
    assert np.allclose(norms, expect, atol=1e-9)
    assert val(loss) == pytest.approx(np.mean(expect ** 2), rel=1e-6)
    assert new_a == pytest.approx(0.1 * expect.mean())


def test_path_length_constant_generator():
    const = lambda w: tn.reshape(w * 0.0, (w.shape[0], 1, w.shape[1], 1))
    loss, a, _ = Lo.path_length_reg(const, np.ones((3, 2)), 0.0, np.random.default_rng(4))
    assert val(loss) < 1e-11
    assert a < 1e-7


def test_path_length_mean_converges():
    M = np.array([[1.0, 2.0], [-1.0, 0.5]])
    G = _Linear(M)
    rng = np.random.default_rng(5)
    w = np.zeros((8, 2))
    a = 0.0
    seen = []
    for _ in range(1500):
        _, a, norms = Lo.path_length_reg(G, w, a, rng, beta=0.02)
        seen.append(norms.mean())
    assert a == pytest.approx(np.mean(seen[500:]), rel=0.05)


def test_generator_total_arithmetic():
    one = Tensor(np.array(1.0))
    assert val(Lo.generator_total(one, one, one)) == pytest.approx(2.01)
    zero = Tensor(np.array(0.0))
    assert val(Lo.generator_total(zero, zero, zero)) == 0.0
    rng = np.random.default_rng(6)
    a, b, c = rng.random(3)
    w = Lo.LossWeights(tch=0.3, fcon_g=2.0)
    assert val(Lo.generator_total(Tensor(np.array(a)), Tensor(np.array(b)), Tensor(np.array(c)), w)) == pytest.approx(
        a + 0.3 * b + 2 * c)


def test_encoder_weighting_and_bce():
    one = Tensor(np.array(1.0))
    assert val(Lo.combine_encoder(one, one, one, one)) == pytest.approx(103.1)
    assert val(Lo.bce_with_logits(np.ones(1), Tensor(np.zeros(1)))) == pytest.approx(LN2)


def test_encoder_terms_perfect_reconstruction():
    top = toy_skeleton()
    real = synth_corpus(2, 2, top, T=16).blocks()
    rec = real.copy()
    J = top.J
    rec[:, :, J + 1:, 0] = np.where(real[:, :, J + 1:, 0] > 0.5, 1e4, -1e4)
    terms = Lo.encoder_terms(Tensor(real), Tensor(rec), top)
    for k in ("rec", "root", "pos"):
        assert val(terms[k]) == 0.0
    assert val(terms["fcon"]) < 1e-12
    assert val(terms["total"]) < 1e-9


def test_loss_log_round_trip(tmp_path):
    p = tmp_path / "l.csv"
    with Lo.LossLog(p) as log:
        log.log(0, "a", 0.1)
        log.log(5, "a", 1 / 3)
        log.log(5, "b", 2.0)
    with Lo.LossLog(p) as log:  # appending keeps a single header
        log.log(10, "b", 3.0)
    back = Lo.read_loss_log(p)
    assert back == {"a": [(0, 0.1), (5, 1 / 3)], "b": [(5, 2.0), (10, 3.0)]}
