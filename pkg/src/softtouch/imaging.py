"""Tactile image pipeline and image-similarity measures.

A raw camera frame of the marker-pin membrane passes through two parallel
branches of the same pipeline:

* grayscale branch: center crop + block-mean subsampling down to the
  processed 240x135 size.  This feeds the structural-similarity
  deformation measure used for contact feedback.
* thresholded branch: adaptive Gaussian thresholding at raw resolution,
  then the same subsampling.  This binarized view feeds the pose
  regressor.

The deformation measure is ``1 - SSIM(I, I_ref)`` against a reference
image of the undeformed membrane.  SSIM is computed from local means,
variances and cross-covariance over a sliding window, here implemented
directly so its semantics are pinned by an independent per-window oracle
in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter, uniform_filter

RAW_STAGE = "raw"
PROCESSED_STAGE = "processed"
_STAGES = (RAW_STAGE, PROCESSED_STAGE)

# Processed images are exactly this shape (rows, cols).
PROCESSED_SHAPE = (135, 240)

# Regularizers of the similarity ratio for a unit dynamic range.
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2

# Guards float round-off in the local-mean comparison so constant images
# threshold to all-zero.
_THRESHOLD_EPS = 1e-9


@dataclass(frozen=True)
class TactileImage:
    """Immutable grayscale image with intensities in [0, 1]."""

    pixels: np.ndarray
    stage: str = RAW_STAGE

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2D pixel grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("pixel intensities must be finite")
        if arr.min() < -1e-12 or arr.max() > 1.0 + 1e-12:
            raise ValueError("pixel intensities must lie in [0, 1]")
        if self.stage not in _STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.stage == PROCESSED_STAGE and arr.shape != PROCESSED_SHAPE:
            raise ValueError(
                f"processed images must be {PROCESSED_SHAPE}, got {arr.shape}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class DeformationMeasure:
    """Contact deformation 1 - SSIM(I, I_ref); 0 at no deformation."""

    value: float

    def __post_init__(self):
        if not (-1e-12 <= self.value <= 2.0 + 1e-12):
            raise ValueError(f"deformation {self.value} outside [0, 2]")


def adaptive_threshold(img: TactileImage, window: int = 39, offset: float = 0.0) -> TactileImage:
    """Binarize a raw image against its Gaussian-weighted local mean.

    A pixel becomes 1 when its intensity strictly exceeds the local mean
    (Gaussian weights, std = window / 6, kernel truncated to the window)
    minus ``offset``, else 0.  Bright pin markers on a dark field survive;
    slow illumination gradients do not.
    """
    if img.stage != RAW_STAGE:
        raise ValueError("adaptive_threshold expects a raw-stage image")
    if window % 2 == 0 or window < 3:
        raise ValueError(f"window must be an odd integer >= 3, got {window}")
    sigma = window / 6.0
    radius = (window - 1) // 2
    local_mean = gaussian_filter(
        img.pixels, sigma=sigma, mode="reflect", truncate=radius / sigma
    )
    out = (img.pixels > local_mean - offset + _THRESHOLD_EPS).astype(np.float64)
    return TactileImage(out, RAW_STAGE)


def subsample_crop(img: TactileImage) -> TactileImage:
    """Center-crop and block-mean an image down to the processed size.

    The subsample factor is the largest integer that fits; a 480x270
    input reduces by 2x2 block means with no crop.
    """
    h, w = img.pixels.shape
    th, tw = PROCESSED_SHAPE
    factor = min(h // th, w // tw)
    if factor < 1:
        raise ValueError(
            f"input {w}x{h} is smaller than the processed size {tw}x{th}"
        )
    ch, cw = th * factor, tw * factor
    top = (h - ch) // 2
    left = (w - cw) // 2
    crop = img.pixels[top:top + ch, left:left + cw]
    out = crop.reshape(th, factor, tw, factor).mean(axis=(1, 3))
    return TactileImage(out, PROCESSED_STAGE)


def preprocess(raw: TactileImage, threshold: bool = True,
               window: int = 39, offset: float = 0.0) -> TactileImage:
    """Full pipeline from a raw frame to a processed image.

    ``threshold=True`` gives the binarized regressor input,
    ``threshold=False`` the grayscale image used by the deformation
    measure.
    """
    if threshold:
        raw = adaptive_threshold(raw, window=window, offset=offset)
    return subsample_crop(raw)


def _check_pair(a: TactileImage, b: TactileImage):
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(
            f"image dimensions differ: {a.pixels.shape} vs {b.pixels.shape}"
        )
    if a.stage != b.stage:
        raise ValueError(f"image stages differ: {a.stage} vs {b.stage}")


def ssim(a: TactileImage, b: TactileImage, window: int = 7,
         gaussian: bool = False, sigma: float = 1.5) -> float:
    """Mean structural similarity over all fully-interior window positions.

    Per window the similarity is

        (2*mu_a*mu_b + C1) * (2*cov_ab + C2)
        -------------------------------------
        (mu_a^2 + mu_b^2 + C1) * (var_a + var_b + C2)

    with C1 = (0.01*L)^2, C2 = (0.03*L)^2 for dynamic range L = 1.  The
    default window is a uniform ``window x window`` average with unbiased
    (sample) variance and covariance estimates; ``gaussian=True`` weights
    the window with a Gaussian of the given sigma instead.  Windows that
    would overlap the border are excluded, so no padding semantics enter
    the result.  Identical images give exactly 1.0; the value always lies
    in [-1, 1].
    """
    _check_pair(a, b)
    if window % 2 == 0 or window < 3:
        raise ValueError(f"window must be an odd integer >= 3, got {window}")
    pa, pb = a.pixels, b.pixels
    h, w = pa.shape
    if h < window or w < window:
        raise ValueError(f"images {w}x{h} are smaller than the {window}-pixel window")

    if gaussian:
        radius = (window - 1) // 2

        def local_mean(x):
            return gaussian_filter(x, sigma=sigma, mode="constant",
                                   truncate=radius / sigma)

        cov_norm = 1.0
    else:

        def local_mean(x):
            return uniform_filter(x, size=window, mode="constant")

        n = window * window
        cov_norm = n / (n - 1.0)

    r = (window - 1) // 2
    valid = (slice(r, h - r), slice(r, w - r))
    ua = local_mean(pa)[valid]
    ub = local_mean(pb)[valid]
    uaa = local_mean(pa * pa)[valid]
    ubb = local_mean(pb * pb)[valid]
    uab = local_mean(pa * pb)[valid]
    va = cov_norm * (uaa - ua * ua)
    vb = cov_norm * (ubb - ub * ub)
    cab = cov_norm * (uab - ua * ub)
    s = ((2.0 * ua * ub + _C1) * (2.0 * cab + _C2)) / (
        (ua * ua + ub * ub + _C1) * (va + vb + _C2)
    )
    return float(s.mean())


def deformation(img: TactileImage, ref: TactileImage, window: int = 7) -> DeformationMeasure:
    """Contact deformation of ``img`` relative to the undeformed ``ref``.

    Both images must be processed-stage.  Returns 1 - SSIM, which is 0
    for an undeformed membrane and grows toward 2 as the pin pattern
    decorrelates.
    """
    if img.stage != PROCESSED_STAGE or ref.stage != PROCESSED_STAGE:
        raise ValueError("deformation expects processed-stage images")
    return DeformationMeasure(1.0 - ssim(img, ref, window=window))


def rms_intensity_change(img: TactileImage, ref: TactileImage) -> float:
    """Root-mean-square pixel difference.

    Diagnostic baseline only: it saturates once the pins have moved a
    blob diameter, unlike the SSIM measure.
    """
    if img.pixels.shape != ref.pixels.shape:
        raise ValueError(
            f"image dimensions differ: {img.pixels.shape} vs {ref.pixels.shape}"
        )
    diff = img.pixels - ref.pixels
    return float(np.sqrt(np.mean(diff * diff)))


def save_png(img: TactileImage, path) -> None:
    """Write an image as an 8-bit grayscale PNG."""
    data = np.rint(img.pixels * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


def load_png(path, stage: str = PROCESSED_STAGE) -> TactileImage:
    """Read an 8-bit grayscale PNG back into a TactileImage."""
    with Image.open(path) as im:
        data = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return TactileImage(data, stage)
