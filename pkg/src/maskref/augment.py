"""Paired affine augmentation of a reference frame and its mask.

One affine map is applied to both arrays.  The map is built in a fixed
order: horizontal flip about the frame's vertical center line, then shear,
rotation and isotropic scaling about the (flipped) foreground centroid, then
translation.  Points are ``(x, y) = (col, row)``.  Images are resampled
bilinearly and masks with nearest neighbour; reads outside the frame return
0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .exceptions import ContractError
from .mask_gen import BinaryMask
from .validation import check_image, check_random_state

__all__ = [
    "AffineParams",
    "AugmentConfig",
    "MaskedReference",
    "sample_affine",
    "affine_matrix",
    "apply_affine",
    "make_masked_reference",
    "foreground_hull",
    "bilinear_sample",
    "nearest_sample",
]


@dataclass(frozen=True)
class AffineParams:
    rotation_deg: float = 0.0
    scale: float = 1.0
    shear_deg: float = 0.0
    translate: tuple[float, float] = (0.0, 0.0)
    hflip: bool = False

    @classmethod
    def identity(cls) -> "AffineParams":
        return cls()

    @property
    def is_identity(self) -> bool:
        return self == AffineParams()


@dataclass(frozen=True)
class AugmentConfig:
    """Sampling ranges for :func:`sample_affine`.

    Defaults follow the full-scale recipe: rotation and shear in [-10, 10]
    degrees, scale in [0.8, 2.0], flip with probability 0.5.  ``translate``
    toggles the random shift inside the feasible set; ``enabled=False`` forces
    the identity map (the no-augmentation ablation).
    """

    rotation_range: tuple[float, float] = (-10.0, 10.0)
    scale_range: tuple[float, float] = (0.8, 2.0)
    shear_range: tuple[float, float] = (-10.0, 10.0)
    hflip_prob: float = 0.5
    max_resample_attempts: int = 100
    translate: bool = True
    enabled: bool = True

    def __post_init__(self):
        for name in ("rotation_range", "scale_range", "shear_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ContractError(f"{name} is empty: {lo} > {hi}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.scale_range[0] <= 0:
            raise ContractError("scale_range must be positive")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ContractError(f"hflip_prob={self.hflip_prob} outside [0, 1]")
        if self.max_resample_attempts < 1:
            raise ContractError("max_resample_attempts must be >= 1")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(enabled=False)

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls((0.0, 0.0), (1.0, 1.0), (0.0, 0.0), 0.0, 1, translate=False)


@dataclass(frozen=True, eq=False)
class MaskedReference:
    image: np.ndarray
    mask: BinaryMask
    masked_frame: np.ndarray
    params: AffineParams = field(default_factory=AffineParams)


def _centroid(mask: BinaryMask) -> np.ndarray:
    rows, cols = np.nonzero(mask.data)
    if rows.size == 0:
        return np.array([(mask.width - 1) / 2, (mask.height - 1) / 2])
    return np.array([cols.mean(), rows.mean()])


def _linear_part(params: AffineParams) -> np.ndarray:
    theta = math.radians(params.rotation_deg)
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    shear = np.array([[1.0, math.tan(math.radians(params.shear_deg))], [0.0, 1.0]])
    return params.scale * (rot @ shear)


def affine_matrix(params: AffineParams, mask: BinaryMask) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(linear, offset)`` with ``p' = linear @ p + offset``."""
    width = mask.width
    centroid = _centroid(mask)
    flip = np.diag([-1.0, 1.0]) if params.hflip else np.eye(2)
    flip_offset = np.array([width - 1.0, 0.0]) if params.hflip else np.zeros(2)
    pivot = flip @ centroid + flip_offset
    linear = _linear_part(params)
    # grouped so the identity map yields an exactly zero offset
    offset = linear @ flip_offset + ((pivot + np.asarray(params.translate, dtype=np.float64)) - linear @ pivot)
    return linear @ flip, offset


def foreground_hull(mask: BinaryMask) -> np.ndarray:
    """Vertices (x, y) of the convex hull of all foreground pixel squares."""
    rows, cols = np.nonzero(mask.data)
    if rows.size == 0:
        return np.zeros((0, 2))
    corners = np.concatenate(
        [np.stack([cols + dx, rows + dy], axis=1) for dx in (-0.5, 0.5) for dy in (-0.5, 0.5)]
    ).astype(np.float64)
    corners = np.unique(corners, axis=0)
    try:
        return corners[ConvexHull(corners).vertices]
    except QhullError:
        return corners


def _interior_bounds(mask: BinaryMask):
    # pixel squares must avoid the one-pixel frame border
    return 0.5, mask.width - 1.5, 0.5, mask.height - 1.5


def sample_affine(config: AugmentConfig, mask: BinaryMask, rng) -> AffineParams:
    """Draw affine parameters that keep the whole foreground inside the frame.

    Rotation, scale, shear and flip are resampled until some translation keeps
    the transformed foreground hull off the frame border; the translation is
    then drawn uniformly from that feasible box.  The identity is returned if
    ``max_resample_attempts`` draws all fail.
    """
    rng = check_random_state(rng)
    if mask.foreground_count == 0:
        raise ContractError("sample_affine needs a non-empty mask")
    if not config.enabled:
        return AffineParams()
    hull = foreground_hull(mask)
    xlo, xhi, ylo, yhi = _interior_bounds(mask)
    for _ in range(config.max_resample_attempts):
        draft = AffineParams(
            rotation_deg=float(rng.uniform(*config.rotation_range)),
            scale=float(rng.uniform(*config.scale_range)),
            shear_deg=float(rng.uniform(*config.shear_range)),
            hflip=bool(rng.uniform() < config.hflip_prob),
        )
        linear, offset = affine_matrix(draft, mask)
        pts = hull @ linear.T + offset
        dx_lo, dx_hi = xlo - pts[:, 0].min(), xhi - pts[:, 0].max()
        dy_lo, dy_hi = ylo - pts[:, 1].min(), yhi - pts[:, 1].max()
        if dx_lo > dx_hi or dy_lo > dy_hi:
            continue
        if not config.translate:
            if dx_lo <= 0 <= dx_hi and dy_lo <= 0 <= dy_hi:
                return draft
            continue
        shift = (float(rng.uniform(dx_lo, dx_hi)), float(rng.uniform(dy_lo, dy_hi)))
        return AffineParams(draft.rotation_deg, draft.scale, draft.shear_deg, shift, draft.hflip)
    return AffineParams()


def bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample ``image[y, x]`` bilinearly; taps outside the frame read as 0."""
    height, width = image.shape[:2]
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    out = np.zeros(x.shape + image.shape[2:], dtype=np.float64)
    for oy, wy in ((0, 1 - fy), (1, fy)):
        for ox, wx in ((0, 1 - fx), (1, fx)):
            xi, yi = x0 + ox, y0 + oy
            ok = (xi >= 0) & (xi < width) & (yi >= 0) & (yi < height)
            tap = np.zeros_like(out)
            tap[ok] = image[yi[ok], xi[ok]]
            out += wy * wx * tap
    return out


def nearest_sample(data: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    height, width = data.shape[:2]
    xi = np.floor(x + 0.5).astype(np.int64)
    yi = np.floor(y + 0.5).astype(np.int64)
    ok = (xi >= 0) & (xi < width) & (yi >= 0) & (yi < height)
    out = np.zeros(x.shape + data.shape[2:], dtype=data.dtype)
    out[ok] = data[yi[ok], xi[ok]]
    return out


def apply_affine(image, mask: BinaryMask, params: AffineParams, *, return_matrix: bool = False):
    """Warp ``image`` (bilinear) and ``mask`` (nearest) with the same affine map."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[:2] != mask.shape:
        raise ContractError(f"image {image.shape} and mask {mask.shape} dimensions differ")
    linear, offset = affine_matrix(params, mask)
    inverse = np.linalg.inv(linear)
    rows, cols = np.mgrid[0 : mask.height, 0 : mask.width]
    rel = np.stack([cols - offset[0], rows - offset[1]], axis=-1)
    src = rel @ inverse.T
    # convex combination of taps; clipping only removes rounding overshoot
    warped = np.clip(bilinear_sample(image, src[..., 0], src[..., 1]), image.min(initial=0.0), image.max(initial=0.0))
    warped_mask = BinaryMask(nearest_sample(mask.data, src[..., 0], src[..., 1]))
    if return_matrix:
        return warped, warped_mask, (linear, offset)
    return warped, warped_mask


def make_masked_reference(frame, mask: BinaryMask, config: AugmentConfig, rng) -> MaskedReference:
    """Augment a frame/mask pair and zero the frame outside the warped mask."""
    frame = check_image(frame, name="frame")
    if frame.shape[:2] != mask.shape:
        raise ContractError(f"frame {frame.shape} and mask {mask.shape} dimensions differ")
    if not config.enabled or mask.foreground_count == 0:
        params = AffineParams()
    else:
        params = sample_affine(config, mask, rng)
    if params.is_identity:
        image, warped_mask = frame.copy(), mask
    else:
        image, warped_mask = apply_affine(frame, mask, params)
    masked = image * warped_mask.data[..., None]
    return MaskedReference(image, warped_mask, masked, params)
