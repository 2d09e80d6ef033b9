import csv

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from skelgen import metrics as Me
from skelgen import quat
from skelgen.data import synth_corpus
from skelgen.errors import UsageError
from skelgen.motion import encode_motion
from skelgen.skeleton import toy_skeleton


def gauss(rng, n, d=8, shift=0.0, scale=1.0):
    X = rng.standard_normal((n, d)) * scale
    X[:, 0] += shift
    return X


def scipy_fid(A, B):
    ma, mb = A.mean(0), B.mean(0)
    Sa, Sb = np.cov(A, rowvar=False), np.cov(B, rowvar=False)
    cross = scipy.linalg.sqrtm(Sa @ Sb).real
    return float(((ma - mb) ** 2).sum() + np.trace(Sa + Sb - 2 * cross))


# ---- FID ---------------------------------------------------------------------


def test_fid_self_is_zero():
    A = gauss(np.random.default_rng(0), 500)
    assert Me.fid(A, A) < 1e-8


def test_fid_mean_shift_matches_delta_squared():
    rng = np.random.default_rng(1)
    delta = 3.0
    f = Me.fid(gauss(rng, 50000, 4), gauss(rng, 50000, 4, shift=delta))
    assert f == pytest.approx(delta ** 2, rel=0.01)


def test_fid_matches_scipy_and_is_symmetric():
    rng = np.random.default_rng(2)
    A, B = gauss(rng, 300, 6), gauss(rng, 400, 6, shift=0.5, scale=1.7)
    assert Me.fid(A, B) == pytest.approx(scipy_fid(A, B), rel=1e-8)
    assert Me.fid(A, B) == pytest.approx(Me.fid(B, A), rel=1e-10)


def test_fid_scaled_covariance_closed_form():
    # B = s A: mean moves by (s - 1) mu, covariance scales by s^2
    rng = np.random.default_rng(3)
    A = gauss(rng, 1000, 5)
    s = 2.5
    expect = (1 - s) ** 2 * (np.trace(np.cov(A, rowvar=False)) + (A.mean(0) ** 2).sum())
    assert Me.fid(A, s * A) == pytest.approx(expect, rel=1e-8)


def test_fid_small_sample_warns():
    rng = np.random.default_rng(4)
    with pytest.warns(RuntimeWarning, match="shrinkage"):
        v = Me.fid(gauss(rng, 5), gauss(rng, 5))
    assert np.isfinite(v)
    with pytest.raises(UsageError):
        Me.fid(np.zeros((1, 3)), np.zeros((4, 3)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0, 5))
def test_fid_nonnegative(seed, shift):
    rng = np.random.default_rng(seed)
    assert Me.fid(gauss(rng, 50, 3), gauss(rng, 60, 3, shift=shift)) >= 0.0


# ---- KID --------------------------------------------------------------------


def test_kid_same_distribution_within_three_stderr():
    rng = np.random.default_rng(5)
    A, B = gauss(rng, 800), gauss(rng, 800)
    assert abs(Me.kid(A, B)) <= 3 * Me.kid_stderr(A, B)


def test_kid_detects_shift():
    rng = np.random.default_rng(6)
    A, B = gauss(rng, 400), gauss(rng, 400, shift=2.0)
    assert Me.kid(A, B) > 10 * Me.kid_stderr(A, B)


def test_kid_unbiased_against_naive():
    rng = np.random.default_rng(7)
    A, B = gauss(rng, 30, 3), gauss(rng, 40, 3)
    d = 3
    k = lambda x, y: (x @ y / d + 1) ** 3
    sxx = np.mean([k(A[i], A[j]) for i in range(30) for j in range(30) if i != j])
    syy = np.mean([k(B[i], B[j]) for i in range(40) for j in range(40) if i != j])
    sxy = np.mean([k(a, b) for a in A for b in B])
    assert Me.kid(A, B) == pytest.approx(sxx + syy - 2 * sxy, rel=1e-10)


# ---- precision / recall / diversity -----------------------------------------


def test_precision_recall_identical():
    A = gauss(np.random.default_rng(8), 200)
    assert Me.precision_recall(A, A) == (1.0, 1.0)


def test_precision_zero_for_far_set():
    rng = np.random.default_rng(9)
    A = gauss(rng, 200)
    p, r = Me.precision_recall(A, A + 100.0)
    assert p == 0.0 and r == 0.0


def test_precision_high_recall_low_for_collapsed_generator():
    rng = np.random.default_rng(10)
    R = gauss(rng, 300, 2)
    G = 0.05 * gauss(rng, 300, 2)
    p, r = Me.precision_recall(R, G)
    assert p > 0.9 and r < 0.3


def test_diversity_cases():
    assert Me.diversity(np.zeros((10, 3))) == 0.0
    two = np.array([[0.0, 0.0], [3.0, 4.0]])
    assert Me.diversity(two) == 5.0
    X = gauss(np.random.default_rng(11), 2000, 16)
    assert Me.diversity(X, pairs=4000) == pytest.approx(np.sqrt(2 * 16), rel=0.05)
    with pytest.raises(UsageError):
        Me.diversity(np.zeros((1, 2)))


def test_feature_set_validation():
    with pytest.raises(UsageError):
        Me.FeatureSet(np.zeros(3), "x", "v")
    with pytest.raises(UsageError):
        Me.FeatureSet(np.array([[np.nan]]), "x", "v")


def test_report_csv(tmp_path):
    rng = np.random.default_rng(12)
    res = Me.evaluate(gauss(rng, 50, 3), gauss(rng, 50, 3))
    assert set(res) == {"fid", "kid", "precision", "recall", "diversity_real", "diversity_gen"}
    p = tmp_path / "m.csv"
    Me.write_report(p, res, 50, 0, "abc")
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["metric", "value", "n", "seed", "extractor"]
    assert {r[0]: float(r[1]) for r in rows[1:]} == res


# ---- extractor -----------------------------------------------------------------


@pytest.fixture(scope="module")
def extractor():
    return Me.get_extractor(toy_skeleton())


def test_extractor_memoised_and_versioned(extractor):
    assert Me.get_extractor(toy_skeleton()) is extractor
    assert len(extractor.version) == 16


def test_extractor_classifies_held_out(extractor):
    corp = synth_corpus(99, 100, toy_skeleton())
    acc = np.mean(extractor.classify(corp.blocks()) == corp.labels)
    assert acc > 0.8


def test_extractor_normalisation_invariances(extractor):
    corp = synth_corpus(5, 8, toy_skeleton())
    base = Me.extract_features(corp.motions, extractor).features
    blocks = corp.blocks()
    assert np.allclose(Me.extract_features(list(blocks), extractor).features, base, atol=1e-9)
    # generator-style raw output: scaled, sign-flipped quaternions and contact logits
    raw = blocks.copy()
    J = 7
    raw[:, :, :J] *= -2.5
    raw[:, :, J + 1:, 0] = np.where(blocks[:, :, J + 1:, 0] > 0.5, 4.0, -4.0)
    gen = Me.FeatureSet(extractor.embed(Me.generated_blocks(raw)), "gen", extractor.version)
    assert np.allclose(gen.features, base, atol=1e-9)


def test_extractor_rejects_wrong_skeleton(extractor):
    with pytest.raises(UsageError):
        Me.extract_features([np.zeros((64, 9, 4))], extractor)


def test_extractor_distinguishes_corpus_from_noise(extractor):
    corp = synth_corpus(6, 200, toy_skeleton())
    other = synth_corpus(7, 200, toy_skeleton())
    rng = np.random.default_rng(0)
    noisy = corp.blocks().copy()
    noisy[:, :, :7] = quat.canonical(quat.normalize(rng.standard_normal(noisy[:, :, :7].shape)))
    F = lambda b: extractor.embed(b)
    same = Me.fid(F(corp.blocks()), F(other.blocks()))
    assert same < 0.1 * Me.fid(F(corp.blocks()), F(noisy))
    assert encode_motion(corp.motions[0]).shape == (64, 10, 4)
