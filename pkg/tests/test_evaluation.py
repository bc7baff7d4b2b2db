import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles as O
from idsr import dataset as D
from idsr import evaluation as E
from idsr.networks import identity_extractor, identity_generator

SMALL = D.RenderSettings(hr_size=32, scale=4)


# ---------------------------------------------------------------- ROC

def test_auc_perfect_separation():
    assert E.roc_auc([0.1, 0.2, 0.8, 0.9], [True, True, False, False]).auc == 1.0


def test_auc_identical_distributions():
    assert E.roc_auc([0.4, 0.7, 0.4, 0.7], [True, True, False, False]).auc == 0.5


def test_auc_hand_count():
    assert E.roc_auc([0.3, 0.1, 0.5], [True, False, False]).auc == 0.5


def test_auc_single_class_rejected():
    with pytest.raises(ValueError):
        E.roc_auc([0.1, 0.2], [True, True])


def test_auc_matches_mann_whitney_oracle():
    r = np.random.default_rng(0)
    for _ in range(200):
        n = int(r.integers(2, 40))
        d = np.round(r.uniform(size=n), int(r.integers(1, 4)))  # rounding forces ties
        y = r.uniform(size=n) < 0.4
        y[0], y[1] = True, False
        assert abs(E.roc_auc(d, y).auc - O.mann_whitney_auc(d, y)) < 1e-9


@given(st.lists(st.tuples(st.floats(0, 10), st.booleans()), min_size=2, max_size=40))
def test_roc_curve_shape(items):
    d = [a for a, _ in items]
    y = [b for _, b in items]
    if all(y) or not any(y):
        return
    roc = E.roc_auc(d, y)
    assert roc.points[0] == (0.0, 0.0) and roc.points[-1] == (1.0, 1.0)
    assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)
    assert abs(roc.auc - np.trapezoid(roc.tpr, roc.fpr)) < 1e-12
    assert 0.0 <= roc.auc <= 1.0


@given(st.integers(0, 2**31 - 1))
def test_auc_invariant_under_monotone_transform(seed):
    r = np.random.default_rng(seed)
    d = r.uniform(0.01, 3, size=30)
    y = r.uniform(size=30) < 0.5
    y[:2] = [True, False]
    base = E.roc_auc(d, y).auc
    assert E.roc_auc(np.exp(3 * d), y).auc == base
    assert E.roc_auc(np.sqrt(d) + 7, y).auc == base


def test_roc_csv_format():
    text = E.roc_auc([0.1, 0.5], [True, False]).to_csv()
    assert text.splitlines()[0] == "threshold,fpr,tpr"
    assert text.splitlines()[-1] == "inf,1,1"


# ---------------------------------------------------------------- PSNR

def test_psnr_identical_is_infinite():
    x = np.ones((4, 4))
    assert E.psnr(x, x) == math.inf


def test_psnr_uniform_error():
    x = np.full((8, 8), 0.5)
    assert abs(E.psnr(x, x + 0.1) - 20.0) < 1e-6


def test_psnr_halving_mse():
    r = np.random.default_rng(1)
    x = r.uniform(size=(8, 8))
    e = r.normal(size=(8, 8)) * 0.1
    assert abs(E.psnr(x, x + e / math.sqrt(2)) - E.psnr(x, x + e) - 10 * math.log10(2)) < 1e-6
    assert abs(10 * math.log10(2) - 3.0103) < 1e-4


@given(st.floats(1e-3, 1.0), st.floats(1e-3, 1.0))
def test_psnr_strictly_decreasing_in_mse(a, b):
    if a == b:
        return
    x = np.zeros((2, 2))
    lo, hi = sorted((a, b))
    assert E.psnr(x, x + lo) > E.psnr(x, x + hi)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        E.psnr(np.zeros((2, 2)), np.zeros((2, 3)))


# ---------------------------------------------------------------- verification

def test_verify_pair_thresholds():
    r = np.random.default_rng(2)
    a, b = r.uniform(size=(2, 6, 6))
    G, f = identity_generator(), identity_extractor()
    match, dist = E.verify_pair(a, b, G, f, 1e9)
    assert match and dist > 0
    assert E.verify_pair(a, b, G, f, 0.0) == (False, dist)
    assert E.verify_pair(a, a, G, f, 1e-12) == (True, 0.0)


@given(st.floats(0, 5), st.floats(0, 5))
def test_verify_monotone_in_gamma(g1, g2):
    r = np.random.default_rng(3)
    a, b = r.uniform(size=(2, 4, 4))
    lo, hi = sorted((g1, g2))
    G, f = identity_generator(), identity_extractor()
    if E.verify_pair(a, b, G, f, lo)[0]:
        assert E.verify_pair(a, b, G, f, hi)[0]


def test_verify_rejects_negative_gamma():
    with pytest.raises(ValueError):
        E.verify_pair(np.zeros((2, 2)), np.zeros((2, 2)), identity_generator(), identity_extractor(), -1.0)


# ---------------------------------------------------------------- method reports

@pytest.fixture(scope="module")
def pairs():
    _, test = D.build_splits(6, 3, 0.5, seed=0, settings=SMALL)
    return test, D.make_verification_pairs(test, None, seed=0)


def test_hr_baseline_self_comparison(pairs):
    _, ps = pairs
    rep = E.evaluate_method(ps, E.hr_baseline_method(), identity_extractor())
    assert rep.psnr == math.inf and rep.ssim == 1.0 and rep.loss_recog == 0.0
    assert rep.row()[0] == "baseline-hr" and rep.row()[3] == "inf"


def test_bicubic_report_deterministic(pairs):
    _, ps = pairs
    f = O.small_extractor(size=32)
    a = E.evaluate_method(ps, E.bicubic_method(4), f)
    b = E.evaluate_method(ps, E.bicubic_method(4), f)
    assert a.row() == b.row()
    assert 0.0 <= a.auc <= 1.0 and -1.0 <= a.ssim <= 1.0


def test_threads_do_not_change_results(pairs, monkeypatch):
    _, ps = pairs
    f = O.small_extractor(size=32)
    a = E.evaluate_method(ps, E.bicubic_method(4), f)
    monkeypatch.setenv("IDSR_THREADS", "3")
    b = E.evaluate_method(ps, E.bicubic_method(4), f)
    assert a.row() == b.row()
    np.testing.assert_array_equal(a.distances, b.distances)


def test_metrics_csv_header(pairs):
    _, ps = pairs
    rep = E.evaluate_method(ps, E.hr_baseline_method(), identity_extractor())
    text = E.write_metrics_csv(None, [rep])
    assert text.splitlines()[0] == "method,loss_recog,auc,psnr,ssim"


def test_empty_pairs_rejected():
    with pytest.raises(ValueError):
        E.evaluate_method([], E.hr_baseline_method(), identity_extractor())


def test_distance_matrix_zero_diagonal(pairs, tmp_path):
    test, _ = pairs
    dist, same = E.distance_matrix(test, test, E.hr_baseline_method(), identity_extractor())
    assert np.all(np.diag(dist) == 0.0)
    assert np.all(dist >= 0)
    assert same.shape == dist.shape and np.all(np.diag(same))
    heat = E.write_distance_matrix(str(tmp_path / "m"), dist, same)
    assert heat.min() == 0.0 and heat.max() == 1.0
    assert (tmp_path / "m.csv").exists() and (tmp_path / "m_labels.csv").exists()
    assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5\n%d %d\n255\n" % (len(test), len(test)))


def test_eer_threshold_separates_perfect_split():
    g = E.eer_threshold([0.1, 0.2, 0.8, 0.9], [True, True, False, False])
    assert 0.2 < g <= 0.8
