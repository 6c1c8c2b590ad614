"""Aesthetic degradation operations used to build pretext-task samples.

Images are ``float64`` numpy arrays of shape ``(H, W, C)`` with ``C`` in
``{1, 3}`` and every intensity in ``[0, 1]``. All operations are pure:
randomness comes only from the explicit ``seed`` argument.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "Kind",
    "DistortionSpec",
    "OPERATION_TABLE",
    "NEW_KINDS",
    "check_image",
    "as_image",
    "rng_for",
    "resize",
    "gaussian_kernel",
    "gaussian_noise",
    "quantize",
    "gaussian_blur",
    "exposure",
    "rotate",
    "crop",
    "stylize",
    "convex",
    "pencil_sketch",
    "cutmix",
    "apply",
    "enumerate_classes",
]


class Kind(str, enum.Enum):
    GAUSSIAN_NOISE = "gaussian_noise"
    QUANTIZATION = "quantization"
    GAUSSIAN_BLUR = "gaussian_blur"
    EXPOSURE = "exposure"
    ROTATION = "rotation"
    CROPPING = "cropping"
    STYLIZATION = "stylization"
    CONVEX = "convex"
    PENCIL_SKETCH = "pencil_sketch"
    CUTMIX = "cutmix"
    NONE = "none"


# Rows are ordered from mildest to heaviest distortion.
OPERATION_TABLE: dict[Kind, tuple[tuple[float, ...], ...]] = {
    Kind.GAUSSIAN_NOISE: ((0.2,), (0.4,), (0.8,)),
    Kind.QUANTIZATION: ((64,), (32,), (8,)),
    Kind.GAUSSIAN_BLUR: ((0.4,), (0.8,), (2.0,)),
    Kind.EXPOSURE: ((1.5,), (2.0,), (2.5,)),
    Kind.ROTATION: ((45.0,), (-45.0,)),
    Kind.CROPPING: ((3 / 4,), (2 / 3,), (1 / 2,)),
    Kind.STYLIZATION: ((50.0, 0.6), (50.0, 0.3), (50.0, 0.1)),
    Kind.CONVEX: ((1 / 8,), (1 / 4,), (1 / 2,)),
    Kind.PENCIL_SKETCH: ((100.0, 0.1, 0.02), (100.0, 0.4, 0.02), (100.0, 0.6, 0.02)),
    Kind.CUTMIX: ((32,), (64,), (128,)),
    Kind.NONE: ((),),
}

# Operations absent from the earlier two-level operation list.
NEW_KINDS = frozenset(
    {Kind.CROPPING, Kind.STYLIZATION, Kind.CONVEX, Kind.PENCIL_SKETCH, Kind.CUTMIX}
)


@dataclass(frozen=True)
class DistortionSpec:
    """One class of the distortion-classification task.

    ``level`` indexes the kind's row in :data:`OPERATION_TABLE`; ``params`` is
    filled from the table when omitted.
    """

    kind: Kind
    level: int = 0
    params: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        rows = OPERATION_TABLE[kind]
        if not 0 <= self.level < len(rows):
            raise ValueError(
                f"{kind.value} has {len(rows)} level(s); got level {self.level}"
            )
        if self.params is None:
            object.__setattr__(self, "params", rows[self.level])
        else:
            object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if kind is Kind.GAUSSIAN_NOISE and self.params[0] < 0:
            raise ValueError("noise sigma must be non-negative")

    @property
    def name(self) -> str:
        return f"{self.kind.value}/{self.level}"


def enumerate_classes(
    operation_list: str = "full",
    levels: int = 3,
    kinds: list[Kind] | None = None,
) -> list[DistortionSpec]:
    """List the classification classes in table order, ``None`` last.

    Args:
        operation_list: ``"full"`` or ``"legacy"`` (drops :data:`NEW_KINDS`).
        levels: 3, or 2 to drop the middle parameter set of three-level kinds.
        kinds: optional whitelist of kinds; ``Kind.NONE`` is always kept.
    """
    if operation_list not in ("full", "legacy"):
        raise ValueError(f"unknown operation list {operation_list!r}")
    if levels not in (2, 3):
        raise ValueError("levels must be 2 or 3")
    out = []
    for kind, rows in OPERATION_TABLE.items():
        if kind is not Kind.NONE:
            if operation_list == "legacy" and kind in NEW_KINDS:
                continue
            if kinds is not None and kind not in kinds:
                continue
        idx = list(range(len(rows)))
        if levels == 2 and len(rows) == 3:
            idx = [0, 2]
        out.extend(DistortionSpec(kind, i) for i in idx)
    return out


def check_image(img: np.ndarray) -> np.ndarray:
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected an (H, W, 1|3) image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be non-empty")
    if not np.all((img >= 0.0) & (img <= 1.0)):
        raise ValueError("image intensities must lie in [0, 1]")
    return img


def as_image(data) -> np.ndarray:
    """Coerce ``data`` to a validated float64 ``(H, W, C)`` image."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    return check_image(img)


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator keyed on ``seed`` and an optional stream path."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(s) & 0xFFFFFFFF for s in stream]])
    return np.random.Generator(np.random.Philox(ss))


def resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling."""
    h, w, _ = img.shape
    if (h, w) == (height, width):
        return img.copy()
    ys = np.linspace(0.0, h - 1, height) if height > 1 else np.full(1, (h - 1) / 2)
    xs = np.linspace(0.0, w - 1, width) if width > 1 else np.full(1, (w - 1) / 2)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return np.clip(top * (1 - wy) + bot * wy, 0.0, 1.0)


def _sample_bilinear(img: np.ndarray, rows: np.ndarray, cols: np.ndarray, cval: float | None) -> np.ndarray:
    mode = "constant" if cval is not None else "nearest"
    out = np.empty(rows.shape + (img.shape[2],))
    for c in range(img.shape[2]):
        out[..., c] = ndimage.map_coordinates(
            img[:, :, c], [rows, cols], order=1, mode=mode, cval=cval or 0.0
        )
    return np.clip(out, 0.0, 1.0)


def gaussian_noise(img: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return img.copy()
    noise = rng_for(seed).normal(0.0, sigma, size=img.shape)
    return np.clip(img + noise, 0.0, 1.0)


def quantize(img: np.ndarray, levels: int) -> np.ndarray:
    """Snap each intensity to one of ``levels`` evenly spaced values."""
    levels = int(levels)
    if levels < 2:
        raise ValueError("levels must be at least 2")
    bins = np.minimum(np.floor(img * levels), levels - 1)
    return bins / (levels - 1)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian of radius ``ceil(3 * sigma)``."""
    radius = max(1, math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(img, k, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, k, axis=1, mode="reflect")
    return np.clip(out, 0.0, 1.0)


def exposure(img: np.ndarray, gain: float) -> np.ndarray:
    if gain <= 0:
        raise ValueError("gain must be positive")
    return np.clip(img * gain, 0.0, 1.0)


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the image center; uncovered pixels become black."""
    h, w, _ = img.shape
    cy, cx = (h - 1) / 2, (w - 1) / 2
    theta = math.radians(degrees)
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = rr - cy, cc - cx
    # inverse map: output pixel looks up the source rotated by -theta
    cos, sin = math.cos(theta), math.sin(theta)
    src_x = cx + cos * dx - sin * dy
    src_y = cy + sin * dx + cos * dy
    return _sample_bilinear(img, src_y, src_x, cval=0.0)


def crop(
    img: np.ndarray,
    fraction: float,
    seed: int,
    offset: tuple[int, int] | None = None,
) -> np.ndarray:
    """Keep a ``fraction``-sized window and resize it back to full size.

    ``offset`` pins the window's top-left corner; otherwise it is drawn from
    ``seed``.
    """
    h, w, _ = img.shape
    if h < 2 or w < 2:
        raise ValueError("crop needs an image of at least 2x2")
    ch, cw = crop_window(h, w, fraction)
    if offset is None:
        rng = rng_for(seed)
        offset = (int(rng.integers(0, h - ch + 1)), int(rng.integers(0, w - cw + 1)))
    y0, x0 = offset
    if not (0 <= y0 <= h - ch and 0 <= x0 <= w - cw):
        raise ValueError(f"offset {offset} does not fit a {ch}x{cw} window")
    return resize(img[y0 : y0 + ch, x0 : x0 + cw], h, w)


def crop_window(h: int, w: int, fraction: float) -> tuple[int, int]:
    return max(1, math.floor(fraction * h)), max(1, math.floor(fraction * w))


def _domain_transform_pass(img: np.ndarray, dct: np.ndarray, sigma_h: float, axis: int) -> np.ndarray:
    # recursive edge-aware filter along `axis`, forward then backward sweep
    a = math.exp(-math.sqrt(2.0) / sigma_h)
    out = np.moveaxis(img.copy(), axis, 0)
    weights = np.moveaxis(a ** dct, axis, 0)
    n = out.shape[0]
    for i in range(1, n):
        wgt = weights[i][..., None]
        out[i] = out[i] + wgt * (out[i - 1] - out[i])
    for i in range(n - 2, -1, -1):
        wgt = weights[i + 1][..., None]
        out[i] = out[i] + wgt * (out[i + 1] - out[i])
    return np.moveaxis(out, 0, axis)


def edge_preserving_smooth(
    img: np.ndarray, sigma_s: float, sigma_r: float, iterations: int = 3
) -> np.ndarray:
    """Iterated joint-bilateral approximation (recursive domain transform).

    The input image is the joint guide: the domain distance between
    neighbours grows with their intensity difference scaled by
    ``sigma_s / sigma_r``, so every output value is a convex combination of
    input values.
    """
    guide_dx = np.zeros(img.shape[:2])
    guide_dy = np.zeros(img.shape[:2])
    guide_dx[:, 1:] = np.abs(np.diff(img, axis=1)).sum(axis=2)
    guide_dy[1:, :] = np.abs(np.diff(img, axis=0)).sum(axis=2)
    ratio = sigma_s / sigma_r
    dct_x = 1.0 + ratio * guide_dx
    dct_y = 1.0 + ratio * guide_dy
    out = img.copy()
    for i in range(iterations):
        sigma_h = sigma_s * math.sqrt(3.0) * 2 ** (iterations - i - 1) / math.sqrt(4**iterations - 1)
        out = _domain_transform_pass(out, dct_x, sigma_h, axis=1)
        out = _domain_transform_pass(out, dct_y, sigma_h, axis=0)
    return out


def _luminance(img: np.ndarray) -> np.ndarray:
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ np.array([0.299, 0.587, 0.114])


def stylize(img: np.ndarray, sigma_s: float, sigma_r: float, edge_strength: float = 0.5) -> np.ndarray:
    """Flatten the image with edge-preserving smoothing and darken its edges.

    Edges pull each pixel toward its channel minimum, so the output stays
    within the per-channel input range.
    """
    if sigma_s <= 0 or not 0 < sigma_r <= 1:
        raise ValueError("need sigma_s > 0 and sigma_r in (0, 1]")
    smooth = edge_preserving_smooth(img, sigma_s, sigma_r)
    lum = _luminance(smooth)
    gy, gx = np.gradient(lum)
    mag = np.hypot(gx, gy)
    edge = edge_strength * mag / (mag + 0.05)
    lo = img.min(axis=(0, 1))
    hi = img.max(axis=(0, 1))
    out = smooth - edge[..., None] * (smooth - lo)
    return np.clip(out, lo, hi)


def convex(img: np.ndarray, radius_fraction: float) -> np.ndarray:
    """Radial bulge around the center with a quadratic displacement profile.

    Inside radius ``R`` an output pixel at distance ``r`` samples the source
    at distance ``r**2 / R``; pixels at ``r >= R`` are copied unchanged.
    """
    h, w, _ = img.shape
    radius = radius_fraction * min(h, w) / 2
    out = img.copy()
    if radius <= 0:
        return out
    cy, cx = (h - 1) / 2, (w - 1) / 2
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = rr - cy, cc - cx
    dist = np.hypot(dy, dx)
    inside = dist < radius
    if not inside.any():
        return out
    scale = dist[inside] / radius
    src = _sample_bilinear(img, cy + dy[inside] * scale, cx + dx[inside] * scale, cval=None)
    out[inside] = src
    return out


def pencil_sketch(img: np.ndarray, sigma_s: float, sigma_r: float, shade: float) -> np.ndarray:
    """Grayscale dodge-blend sketch, broadcast back to the input's channels.

    The inverted grayscale is blurred with a Gaussian of width
    ``sigma_s * sigma_r / 10`` pixels; ``shade`` darkens in proportion to the
    original darkness.
    """
    gray = _luminance(img)
    blur_sigma = max(sigma_s * sigma_r / 10.0, 1e-3)
    inv = gaussian_blur((1.0 - gray)[:, :, None], blur_sigma)[:, :, 0]
    dodge = np.clip(gray / np.maximum(1.0 - inv, 1e-6), 0.0, 1.0)
    tone = 1.0 - shade * (1.0 - gray)
    out = np.clip(dodge * tone, 0.0, 1.0)
    return np.repeat(out[:, :, None], img.shape[2], axis=2)


def cutmix(img: np.ndarray, donor: np.ndarray, patch_side: int, seed: int) -> np.ndarray:
    """Paste a square window of ``donor`` into ``img`` at the same location."""
    if donor.shape != img.shape:
        raise ValueError(f"donor shape {donor.shape} != image shape {img.shape}")
    h, w, _ = img.shape
    side = min(int(patch_side), h, w)
    rng = rng_for(seed)
    y0 = int(rng.integers(0, h - side + 1))
    x0 = int(rng.integers(0, w - side + 1))
    out = img.copy()
    out[y0 : y0 + side, x0 : x0 + side] = donor[y0 : y0 + side, x0 : x0 + side]
    return out


def apply(
    spec: DistortionSpec,
    img: np.ndarray,
    donor: np.ndarray | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Apply the operation named by ``spec`` with its table parameters."""
    p = spec.params
    kind = spec.kind
    if kind is Kind.NONE:
        return img.copy()
    if kind is Kind.GAUSSIAN_NOISE:
        return gaussian_noise(img, p[0], seed)
    if kind is Kind.QUANTIZATION:
        return quantize(img, int(p[0]))
    if kind is Kind.GAUSSIAN_BLUR:
        return gaussian_blur(img, p[0])
    if kind is Kind.EXPOSURE:
        return exposure(img, p[0])
    if kind is Kind.ROTATION:
        return rotate(img, p[0])
    if kind is Kind.CROPPING:
        return crop(img, p[0], seed)
    if kind is Kind.STYLIZATION:
        return stylize(img, p[0], p[1])
    if kind is Kind.CONVEX:
        return convex(img, p[0])
    if kind is Kind.PENCIL_SKETCH:
        return pencil_sketch(img, p[0], p[1], p[2])
    if kind is Kind.CUTMIX:
        if donor is None:
            raise ValueError("cutmix needs a donor image")
        return cutmix(img, donor, int(p[0]), seed)
    raise ValueError(f"unhandled kind {kind}")
