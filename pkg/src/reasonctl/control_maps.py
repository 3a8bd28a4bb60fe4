"""Control-map rasters, a native Canny extractor, and extractor dispatch."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .errors import ConfigurationError, DataError


class ControlType(str, enum.Enum):
    SEG = "SEG"
    CANNY = "CANNY"
    HED = "HED"
    LINEART = "LINEART"
    DEPTH = "DEPTH"


BINARY, GRAY, LABEL = "binary", "gray", "label"

DEFAULT_KIND = {
    ControlType.CANNY: BINARY,
    ControlType.HED: GRAY,
    ControlType.LINEART: GRAY,
    ControlType.DEPTH: GRAY,
    ControlType.SEG: LABEL,
}


@dataclass(frozen=True, eq=False)
class ControlMap:
    """A single-channel raster tagged with its control type.

    ``kind`` is one of ``"binary"`` (values in {0, 1}), ``"gray"`` (uint8)
    or ``"label"`` (integer class ids below ``num_classes``).
    """

    control_type: ControlType
    payload: np.ndarray
    kind: str = ""
    num_classes: int | None = None
    value_range: tuple[int, int] = field(init=False)

    def __post_init__(self):
        ctype = ControlType(self.control_type)
        object.__setattr__(self, "control_type", ctype)
        kind = self.kind or DEFAULT_KIND[ctype]
        object.__setattr__(self, "kind", kind)
        payload = np.asarray(self.payload)
        if payload.ndim != 2 or payload.size == 0:
            raise DataError(f"control map payload must be a non-empty 2-D raster, got shape {payload.shape}")
        if kind == BINARY:
            if not np.isin(payload, (0, 1)).all():
                raise DataError("binary control map contains values outside {0, 1}")
            payload = payload.astype(np.uint8)
            vr = (0, 1)
        elif kind == GRAY:
            if payload.dtype != np.uint8:
                if payload.min() < 0 or payload.max() > 255:
                    raise DataError("grayscale control map must be within 0..255")
                payload = payload.astype(np.uint8)
            vr = (0, 255)
        elif kind == LABEL:
            if self.num_classes is None:
                object.__setattr__(self, "num_classes", int(payload.max()) + 1)
            if payload.min() < 0 or payload.max() >= self.num_classes:
                raise DataError(f"label map values must lie in [0, {self.num_classes})")
            payload = payload.astype(np.int32)
            vr = (0, int(self.num_classes) - 1)
        else:
            raise DataError(f"unknown control map kind {kind!r}")
        payload.setflags(write=False)
        object.__setattr__(self, "payload", payload)
        object.__setattr__(self, "value_range", vr)

    @property
    def height(self) -> int:
        return int(self.payload.shape[0])

    @property
    def width(self) -> int:
        return int(self.payload.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.payload.shape

    def to_uint8(self) -> np.ndarray:
        """8-bit rendering: binary maps as {0, 255}, labels as raw ids."""
        if self.kind == BINARY:
            return (self.payload * 255).astype(np.uint8)
        if self.kind == LABEL:
            if self.num_classes > 256:
                raise DataError("label maps with more than 256 classes cannot be rendered to 8 bits")
            return self.payload.astype(np.uint8)
        return self.payload.copy()

    def equals(self, other: "ControlMap") -> bool:
        return (
            self.control_type == other.control_type
            and self.kind == other.kind
            and self.shape == other.shape
            and bool(np.array_equal(self.payload, other.payload))
        )


@dataclass(frozen=True)
class CannyParams:
    gaussian_sigma: float = 1.4
    low_threshold: float = 100.0
    high_threshold: float = 200.0

    def __post_init__(self):
        if not self.gaussian_sigma > 0:
            raise ValueError("gaussian_sigma must be positive")
        if not 0 <= self.low_threshold < self.high_threshold:
            raise ValueError("thresholds must satisfy 0 <= low < high")


def to_luma(image: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma as float64; 2-D input is returned as float64 unchanged."""
    image = np.asarray(image)
    if image.ndim == 2:
        return image.astype(np.float64)
    if image.ndim == 3 and image.shape[2] in (3, 4):
        rgb = image[..., :3].astype(np.float64)
        return rgb @ np.array([0.299, 0.587, 0.114])
    raise DataError(f"unsupported image shape {image.shape}")


_TAN_22_5 = np.tan(np.pi / 8)


def _non_max_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    h, w = mag.shape
    padded = np.pad(mag, 1)

    def shifted(dy: int, dx: int) -> np.ndarray:
        return padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]

    ax, ay = np.abs(gx), np.abs(gy)
    horizontal = ay <= _TAN_22_5 * ax
    vertical = ~horizontal & (ax <= _TAN_22_5 * ay)
    diagonal = ~horizontal & ~vertical
    down_right = diagonal & (gx * gy > 0)
    down_left = diagonal & ~down_right

    # Neighbour pairs are chosen by bin only, never by gradient sign, so that
    # negating the image leaves the result bit-identical.
    keep = np.zeros_like(mag, dtype=bool)
    for sel, (dy, dx) in (
        (horizontal, (0, 1)),
        (vertical, (1, 0)),
        (down_right, (1, 1)),
        (down_left, (1, -1)),
    ):
        before, after = shifted(-dy, -dx), shifted(dy, dx)
        keep |= sel & (mag > before) & (mag >= after)

    out = np.where(keep, mag, 0.0)
    out[0, :] = out[-1, :] = 0.0
    out[:, 0] = out[:, -1] = 0.0
    return out


def _hysteresis(nms: np.ndarray, low: float, high: float) -> np.ndarray:
    weak = nms > low
    strong = nms > high
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros(nms.shape, dtype=np.uint8)
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return keep[labels].astype(np.uint8)


def canny_extract(image: np.ndarray, params: CannyParams | None = None) -> ControlMap:
    """Binary Canny edge map of an 8-bit grayscale (or RGB) image.

    Gaussian smoothing, 3x3 Sobel gradients, four-bin non-maximum
    suppression and 8-connected double-threshold hysteresis. Thresholds apply
    to the raw (unnormalised) Sobel L2 magnitude, as in OpenCV.
    """
    params = params or CannyParams()
    image = np.asarray(image)
    if image.size == 0 or min(image.shape[:2]) == 0:
        raise DataError("cannot run Canny on an empty image")
    # Centre the intensities so that inversion is an exact sign flip downstream.
    centred = to_luma(image) - 127.5
    smooth = ndimage.gaussian_filter(centred, params.gaussian_sigma, mode="nearest")
    gx = ndimage.sobel(smooth, axis=1, mode="nearest")
    gy = ndimage.sobel(smooth, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    nms = _non_max_suppression(mag, gx, gy)
    edges = _hysteresis(nms, params.low_threshold, params.high_threshold)
    return ControlMap(ControlType.CANNY, edges, BINARY)


def binarize(cmap: ControlMap, threshold: int) -> ControlMap:
    if cmap.kind != GRAY:
        raise DataError(f"binarize expects a grayscale control map, got {cmap.kind}")
    return ControlMap(cmap.control_type, (cmap.payload >= threshold).astype(np.uint8), BINARY)


class NativeCannyExtractor:
    """ControlExtractorBackend that serves only the CANNY type."""

    def __init__(self, params: CannyParams | None = None):
        self.params = params or CannyParams()

    def extract(self, image: np.ndarray, control_type: ControlType) -> ControlMap:
        if ControlType(control_type) != ControlType.CANNY:
            raise ConfigurationError(f"native extractor only supports CANNY, not {control_type}")
        return canny_extract(image, self.params)


def extract(
    control_type: ControlType,
    image: np.ndarray,
    registry: Mapping[ControlType, object] | None = None,
    params: CannyParams | None = None,
) -> ControlMap:
    """Dispatch extraction to the backend registered for ``control_type``.

    CANNY falls back to the native extractor when no backend is registered.
    """
    control_type = ControlType(control_type)
    backend = (registry or {}).get(control_type)
    if backend is None:
        if control_type == ControlType.CANNY:
            return canny_extract(image, params)
        raise ConfigurationError(f"no extractor backend registered for {control_type.value}")
    result = backend.extract(image, control_type)
    if result.control_type != control_type:
        raise DataError(f"extractor returned {result.control_type} for requested {control_type}")
    return result


def save_control_map(cmap: ControlMap, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(cmap.to_uint8()).save(path, format="PNG")


def load_control_map(
    path: str | Path, control_type: ControlType, num_classes: int | None = None
) -> ControlMap:
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read control image {path}: {exc}") from exc
    control_type = ControlType(control_type)
    kind = DEFAULT_KIND[control_type]
    if kind == BINARY:
        return ControlMap(control_type, (arr >= 128).astype(np.uint8), BINARY)
    if kind == LABEL:
        return ControlMap(control_type, arr.astype(np.int32), LABEL, num_classes)
    return ControlMap(control_type, arr, GRAY)


def load_image(path: str | Path) -> np.ndarray:
    """Read any image file as an 8-bit RGB array of shape (H, W, 3)."""
    try:
        with PILImage.open(path) as im:
            return np.asarray(im.convert("RGB")).copy()
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def save_image(image: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PNG")
