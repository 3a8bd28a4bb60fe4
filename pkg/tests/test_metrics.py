import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import linalg
from skimage.metrics import structural_similarity

from reasonctl.backends import MockExtractor, MockFeatures
from reasonctl.control_maps import ControlMap, ControlType
from reasonctl.errors import DataError, NumericalError
from reasonctl.metrics import (
    GaussianSummary,
    edge_f1,
    evaluate_suite,
    fit_gaussian,
    format_summary,
    frechet_distance,
    miou,
    rmse,
    ssim,
    write_report,
)

rasters = arrays(np.uint8, (16, 16))


# -- SSIM ------------------------------------------------------------------


def test_ssim_identity(rng):
    x = rng.integers(0, 256, (32, 40))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-9)


def test_ssim_constant_patches_closed_form():
    a, b = np.zeros((20, 20)), np.full((20, 20), 255.0)
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    mu1, mu2 = 0.0, 255.0
    expected = (2 * mu1 * mu2 + c1) * c2 / ((mu1**2 + mu2**2 + c1) * c2)
    assert ssim(a, b) == pytest.approx(expected, rel=1e-9)


def test_ssim_matches_scikit_image(rng):
    for _ in range(5):
        a = rng.integers(0, 256, (40, 33)).astype(np.float64)
        b = np.clip(a + rng.normal(0, 30, a.shape), 0, 255)
        ref_map = structural_similarity(
            a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
            data_range=255, full=True,
        )[1]  # fmt: skip
        ref = ref_map[5:-5, 5:-5].mean()  # valid window positions only
        assert ssim(a, b) == pytest.approx(ref, abs=1e-6)


@given(rasters, rasters)
def test_ssim_symmetric(a, b):
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-12


def test_ssim_errors():
    with pytest.raises(DataError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))
    with pytest.raises(DataError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


# -- edge F1 ---------------------------------------------------------------


def test_edge_f1_examples():
    a = np.zeros((10, 10), np.uint8)
    a[2, :] = 1
    b = np.zeros((10, 10), np.uint8)
    b[7, :] = 1
    assert edge_f1(a, a) == 1.0
    assert edge_f1(a, b) == 0.0
    c = np.zeros((10, 10), np.uint8)
    c[2, :5] = 1
    c[7, :5] = 1
    assert edge_f1(c, a) == 0.5


def test_edge_f1_tolerance_and_errors():
    a = np.zeros((10, 10), np.uint8)
    a[2, :] = 1
    b = np.roll(a, 1, axis=0)
    assert edge_f1(a, b, 0) == 0.0 and edge_f1(a, b, 1) == 1.0
    with pytest.raises(DataError):
        edge_f1(a * 2, a)
    assert edge_f1(ControlMap(ControlType.CANNY, a), ControlMap(ControlType.CANNY, a)) == 1.0


@given(arrays(np.uint8, (12, 12), elements=st.integers(0, 1)), arrays(np.uint8, (12, 12), elements=st.integers(0, 1)))
def test_edge_f1_bounded_and_monotone_in_tolerance(p, g):
    vals = [edge_f1(p, g, t) for t in range(4)]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


# -- RMSE ------------------------------------------------------------------


def test_rmse_examples(rng):
    x = rng.integers(0, 200, (10, 10)).astype(float)
    assert rmse(x, x) == 0.0
    assert rmse(x, x + 10) == pytest.approx(10.0, abs=1e-9)
    y = x.copy()
    y[:5] += 10
    assert rmse(x, y) == pytest.approx(10 / np.sqrt(2), abs=1e-9)
    with pytest.raises(DataError):
        rmse(x, x[:5])


@given(rasters, rasters, rasters)
def test_rmse_symmetric_and_triangle(x, y, z):
    assert rmse(x, y) == rmse(y, x)
    assert rmse(x, z) <= rmse(x, y) + rmse(y, z) + 1e-9


# -- mIoU ------------------------------------------------------------------


def test_miou_examples():
    g = np.array([[0, 0, 1, 1, 1, 1]])
    assert miou(g, g) == 1.0
    # class 0 identical (IoU 1); class 1 vs class 2 shuffle gives IoU 1/3 on class 1.
    gt = np.array([[0, 0, 1, 1, 2, 2]])
    pred = np.array([[0, 0, 1, 2, 1, 2]])
    # class 1: inter 1, union 3; class 2: inter 1, union 3
    assert miou(pred, gt) == pytest.approx((1 + 1 / 3 + 1 / 3) / 3)
    gt2 = np.array([[0, 0, 0, 1, 1, 9]])
    pred2 = np.array([[0, 0, 0, 9, 1, 1]])
    assert miou(pred2, gt2) == pytest.approx((1 + 1 / 3 + 0) / 3)


def test_miou_two_classes_one_third():
    gt = np.array([[0, 0, 1, 1, 5, 5]])
    pred = np.array([[0, 0, 5, 1, 1, 5]])
    # class 0: 1; class 1: inter 1 / union 3; class 5: inter 1 / union 3.
    assert miou(pred[:, :4], np.array([[0, 0, 1, 1]])) == pytest.approx((1 + 0.5) / 2)
    assert miou(pred, gt) == pytest.approx((1 + 1 / 3 + 1 / 3) / 3)


def test_miou_ignores_absent_classes_and_checks_labels():
    g = np.array([[0, 1]])
    assert miou(g, g, classes=range(10)) == 1.0
    with pytest.raises(DataError):
        miou(np.array([[0, 7]]), g, classes=range(2))


@given(arrays(np.int32, (5, 5), elements=st.integers(0, 3)), arrays(np.int32, (5, 5), elements=st.integers(0, 3)))
def test_miou_one_iff_agreement(p, g):
    agree = all(np.array_equal(p == c, g == c) for c in np.unique(g))
    assert (miou(p, g) == 1.0) == agree


# -- Gaussian fit and Frechet distance --------------------------------------


def g1d(mu, var, n=10):
    return GaussianSummary(np.array([float(mu)]), np.array([[float(var)]]), n)


def test_fit_gaussian_examples(rng):
    s = fit_gaussian([[0.0], [2.0]])
    assert s.mean[0] == 1.0 and s.covariance[0, 0] == 2.0
    assert np.all(fit_gaussian([[1.0, 2.0]] * 5).covariance == 0)
    X = rng.normal(size=(50, 4))
    s = fit_gaussian(X)
    brute = sum(np.outer(x - X.mean(0), x - X.mean(0)) for x in X) / 49
    assert np.allclose(s.covariance, brute, atol=1e-12)
    assert np.allclose(s.covariance, s.covariance.T, atol=1e-9)
    with pytest.raises(DataError):
        fit_gaussian([[1.0]])


def test_frechet_1d_closed_form():
    assert frechet_distance(g1d(0, 1), g1d(1, 1)) == pytest.approx(1.0, abs=1e-6)
    assert frechet_distance(g1d(0, 1), g1d(0, 9)) == pytest.approx(4.0, abs=1e-6)
    assert frechet_distance(g1d(3, 2), g1d(3, 2)) == pytest.approx(0.0, abs=1e-8)


def _sqrtm_oracle(g1, g2):
    covmean = linalg.sqrtm(g1.covariance @ g2.covariance).real
    d = g1.mean - g2.mean
    return d @ d + np.trace(g1.covariance + g2.covariance - 2 * covmean)


@pytest.mark.parametrize("dim", [2, 5, 16])
def test_frechet_matches_sqrtm_oracle(rng, dim):
    a = fit_gaussian(rng.normal(size=(60, dim)))
    b = fit_gaussian(rng.normal(1.0, 2.0, size=(60, dim)) @ rng.normal(size=(dim, dim)))
    assert frechet_distance(a, b) == pytest.approx(_sqrtm_oracle(a, b), rel=1e-6)


@given(st.integers(0, 10_000))
def test_frechet_properties(seed):
    rng = np.random.default_rng(seed)
    a = fit_gaussian(rng.normal(size=(8, 3)))
    b = fit_gaussian(rng.normal(size=(8, 3)) * 2)
    assert frechet_distance(a, a) == pytest.approx(0.0, abs=1e-8)
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-8)
    assert frechet_distance(a, b) >= 0


def test_frechet_rank_deficient_is_fine():
    # Fewer samples than dimensions: singular covariances, tiny negative eigenvalues.
    rng = np.random.default_rng(3)
    a, b = fit_gaussian(rng.normal(size=(3, 10))), fit_gaussian(rng.normal(size=(3, 10)))
    assert frechet_distance(a, b) >= 0


def test_frechet_errors():
    bad = GaussianSummary(np.zeros(2), np.diag([1.0, -1.0]), 5)
    with pytest.raises(NumericalError, match="-1.0"):
        frechet_distance(bad, bad)
    with pytest.raises(DataError):
        frechet_distance(g1d(0, 1), GaussianSummary(np.zeros(2), np.eye(2), 5))


# -- harness ---------------------------------------------------------------


def _images(n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        img = np.zeros((32, 32, 3), np.uint8)
        img[:] = rng.integers(0, 60, 3)
        y, x = rng.integers(4, 20, 2)
        img[y : y + 10, x : x + 10] = rng.integers(200, 256, 3)
        out.append(img)
    return out


@pytest.mark.parametrize(
    "ctype, perfect", [(ControlType.CANNY, 1.0), (ControlType.SEG, 1.0), (ControlType.HED, 1.0), (ControlType.DEPTH, 0.0)]
)
def test_self_comparison_is_perfect(ctype, perfect):
    imgs = _images(4)
    rep = evaluate_suite(imgs, imgs, ctype, MockExtractor(), MockFeatures(8))
    assert rep.consistency == pytest.approx(perfect, abs=1e-9)
    assert rep.fid == pytest.approx(0.0, abs=1e-8)
    assert rep.consistency == pytest.approx(np.mean([r["value"] for r in rep.per_image]))


def test_fid_equals_frechet_of_fitted_features():
    gen, ref = _images(5, 1), _images(5, 2)
    f = MockFeatures(6, seed=3)
    rep = evaluate_suite(gen, ref, ControlType.DEPTH, MockExtractor(), f)
    expected = frechet_distance(fit_gaussian([f.features(i) for i in gen]), fit_gaussian([f.features(i) for i in ref]))
    assert rep.fid == pytest.approx(expected, rel=1e-12)


def test_harness_errors_and_report(tmp_path):
    with pytest.raises(DataError):
        evaluate_suite([], [], ControlType.CANNY, MockExtractor())
    with pytest.raises(DataError):
        evaluate_suite(_images(2), _images(3), ControlType.CANNY, MockExtractor())
    rep = evaluate_suite(_images(1), _images(1), ControlType.HED, MockExtractor(), MockFeatures())
    assert rep.fid is None
    write_report(rep, tmp_path / "r.jsonl")
    lines = (tmp_path / "r.jsonl").read_text().splitlines()
    assert len(lines) == 2 and '"summary":true' in lines[-1]
    assert "SSIM" in format_summary(rep) and "100.00" in format_summary(rep)
