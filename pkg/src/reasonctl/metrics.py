"""Conditional-consistency metrics, Fréchet distance, and the evaluation harness."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from . import __version__
from .control_maps import BINARY, ControlMap, ControlType
from .errors import DataError, NumericalError
from .utils import canonical_json

logger = logging.getLogger(__name__)


def _as_2d_float(x) -> np.ndarray:
    if isinstance(x, ControlMap):
        return x.to_uint8().astype(np.float64)
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"expected a 2-D raster, got shape {arr.shape}")
    return arr


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(x**2) / (2.0 * sigma**2))
    return w / w.sum()


def _valid_filter(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    r = len(w) // 2
    out = ndimage.correlate1d(img, w, axis=0, mode="constant")
    out = ndimage.correlate1d(out, w, axis=1, mode="constant")
    return out[r : img.shape[0] - r, r : img.shape[1] - r]


def ssim(
    a,
    b,
    window: int = 11,
    window_sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    dynamic_range: float = 255.0,
) -> float:
    """Mean SSIM over all positions where a Gaussian window fits entirely."""
    x, y = _as_2d_float(a), _as_2d_float(b)
    _check_same_shape(x, y)
    if window % 2 == 0:
        raise ValueError("window must be odd")
    if min(x.shape) < window:
        raise DataError(f"image {x.shape} is smaller than the {window}px window")
    w = _gaussian_window(window, window_sigma)
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    mx, my = _valid_filter(x, w), _valid_filter(y, w)
    sxx = _valid_filter(x * x, w) - mx * mx
    syy = _valid_filter(y * y, w) - my * my
    sxy = _valid_filter(x * y, w) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float((num / den).mean())


def _binary_payload(x) -> np.ndarray:
    if isinstance(x, ControlMap):
        if x.kind != BINARY:
            raise DataError("edge_f1 needs binary control maps")
        return x.payload.astype(bool)
    arr = np.asarray(x)
    if not np.isin(arr, (0, 1)).all():
        raise DataError("edge_f1 needs binary rasters with values in {0, 1}")
    return arr.astype(bool)


def edge_f1(pred, gt, tolerance_px: int = 0) -> float:
    """Pixel F1 between two binary edge maps.

    A predicted pixel is a hit if some ground-truth edge lies within
    ``tolerance_px`` (Chebyshev); recall is measured the same way the other
    direction.
    """
    p, g = _binary_payload(pred), _binary_payload(gt)
    _check_same_shape(p, g)
    if tolerance_px < 0:
        raise ValueError("tolerance_px must be non-negative")
    if tolerance_px > 0:
        se = np.ones((2 * tolerance_px + 1,) * 2, dtype=bool)
        g_near = ndimage.binary_dilation(g, structure=se)
        p_near = ndimage.binary_dilation(p, structure=se)
    else:
        g_near, p_near = g, p
    n_pred, n_gt = int(p.sum()), int(g.sum())
    precision = (p & g_near).sum() / n_pred if n_pred else 0.0
    recall = (g & p_near).sum() / n_gt if n_gt else 0.0
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def rmse(a, b) -> float:
    x, y = _as_2d_float(a), _as_2d_float(b)
    _check_same_shape(x, y)
    return float(np.sqrt(np.mean((x - y) ** 2)))


def miou(pred, gt, classes: Iterable[int] | None = None) -> float:
    """Mean IoU over the classes that occur in ``gt``."""
    p = pred.payload if isinstance(pred, ControlMap) else np.asarray(pred)
    g = gt.payload if isinstance(gt, ControlMap) else np.asarray(gt)
    _check_same_shape(p, g)
    if classes is not None:
        allowed = np.asarray(sorted(set(int(c) for c in classes)))
        for name, arr in (("pred", p), ("gt", g)):
            if not np.isin(arr, allowed).all():
                raise DataError(f"{name} contains labels outside the class set")
    present = np.unique(g)
    ious = []
    for c in present:
        pc, gc = p == c, g == c
        ious.append((pc & gc).sum() / (pc | gc).sum())
    return float(np.mean(ious))


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray
    covariance: np.ndarray
    sample_count: int

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


def fit_gaussian(features) -> GaussianSummary:
    """Sample mean and unbiased covariance of row-stacked feature vectors."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("fit_gaussian needs at least 2 feature vectors")
    mu = X.mean(axis=0)
    D = X - mu
    cov = D.T @ D / (X.shape[0] - 1)
    cov = (cov + cov.T) / 2.0
    return GaussianSummary(mu, cov, int(X.shape[0]))


def _clamped_eigvalsh(m: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    tol = 1e-8 * max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.size and vals.min() < -tol:
        raise NumericalError(f"{what} has a negative eigenvalue {vals.min():.3e}")
    return np.clip(vals, 0.0, None), vecs


def frechet_distance(g1: GaussianSummary, g2: GaussianSummary) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)).

    The trace of the product root is taken from the symmetric matrix
    S1^(1/2) S2 S1^(1/2), which has the same eigenvalues as S1 S2.
    """
    if g1.dim != g2.dim:
        raise DataError(f"feature dimensions differ: {g1.dim} vs {g2.dim}")
    vals1, vecs1 = _clamped_eigvalsh(g1.covariance, "first covariance")
    root1 = (vecs1 * np.sqrt(vals1)) @ vecs1.T
    inner, _ = _clamped_eigvalsh(root1 @ g2.covariance @ root1, "covariance product")
    tr_root = float(np.sqrt(inner).sum())
    diff = g1.mean - g2.mean
    d = float(diff @ diff + np.trace(g1.covariance) + np.trace(g2.covariance) - 2.0 * tr_root)
    return max(d, 0.0)


# --------------------------------------------------------------------------
# Evaluation harness
# --------------------------------------------------------------------------

METRIC_FOR_TYPE = {
    ControlType.SEG: "mIoU",
    ControlType.CANNY: "F1",
    ControlType.HED: "SSIM",
    ControlType.LINEART: "SSIM",
    ControlType.DEPTH: "RMSE",
}


@dataclass
class EvalReport:
    control_type: ControlType
    metric: str
    per_image: list[dict]
    consistency: float
    fid: float | None
    n_generated: int
    n_reference: int
    config_digest: str = ""
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "summary": True,
            "control_type": self.control_type.value,
            "metric": self.metric,
            "consistency": self.consistency,
            "fid": self.fid,
            "n_generated": self.n_generated,
            "n_reference": self.n_reference,
            "config_digest": self.config_digest,
            "tool_version": __version__,
            **self.extra,
        }

    def rows(self) -> list[dict]:
        return [{"summary": False, **r} for r in self.per_image] + [self.summary()]


def consistency_value(control_type: ControlType, pred: ControlMap, ref: ControlMap, edge_tolerance: int = 0) -> float:
    control_type = ControlType(control_type)
    if control_type == ControlType.CANNY:
        return edge_f1(pred, ref, edge_tolerance)
    if control_type in (ControlType.HED, ControlType.LINEART):
        return ssim(pred, ref)
    if control_type == ControlType.DEPTH:
        return rmse(pred, ref)
    classes = range(max(pred.num_classes or 0, ref.num_classes or 0, 1))
    return miou(pred, ref, classes)


def evaluate_suite(
    generated: Sequence[np.ndarray],
    reference_images: Sequence[np.ndarray],
    control_type: ControlType,
    extractor,
    features=None,
    reference_maps: Sequence[ControlMap] | None = None,
    names: Sequence[str] | None = None,
    edge_tolerance: int = 0,
    config_digest: str = "",
) -> EvalReport:
    """Per-type consistency between generated images and references, plus FID.

    Consistency compares the control map re-extracted from each generated
    image with the reference control map (given, or extracted from the
    reference image). FID is computed when ``features`` is given and each
    side has at least two images.
    """
    control_type = ControlType(control_type)
    if not generated:
        raise DataError("evaluation needs at least one generated image")
    if len(generated) != len(reference_images):
        raise DataError(f"{len(generated)} generated images vs {len(reference_images)} references")
    if reference_maps is not None and len(reference_maps) != len(generated):
        raise DataError("reference_maps must pair one-to-one with generated images")
    names = list(names) if names is not None else [str(i) for i in range(len(generated))]

    per_image = []
    for i, img in enumerate(generated):
        pred = extractor.extract(img, control_type)
        ref = reference_maps[i] if reference_maps is not None else extractor.extract(reference_images[i], control_type)
        per_image.append({"index": i, "name": names[i], "value": consistency_value(control_type, pred, ref, edge_tolerance)})
    consistency = float(np.mean([r["value"] for r in per_image]))

    fid = None
    if features is not None:
        if len(generated) >= 2:
            fg = fit_gaussian([features.features(im) for im in generated])
            fr = fit_gaussian([features.features(im) for im in reference_images])
            fid = frechet_distance(fg, fr)
        else:
            logger.warning("FID skipped: needs at least two images per side")
    return EvalReport(
        control_type, METRIC_FOR_TYPE[control_type], per_image, consistency, fid,
        len(generated), len(reference_images), config_digest,
    )  # fmt: skip


def write_report(report: EvalReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for row in report.rows():
            fh.write(canonical_json(row) + "\n")


def format_summary(report: EvalReport, scale100: bool = True) -> str:
    """One table row: control type, consistency metric and FID."""
    value = report.consistency
    if scale100 and report.metric in ("mIoU", "F1", "SSIM"):
        value *= 100.0
    fid = "-" if report.fid is None else f"{report.fid:.2f}"
    return (
        f"{'Type':<8} {report.metric:>8} {'FID':>8}\n"
        f"{report.control_type.value:<8} {value:>8.2f} {fid:>8}"
    )
