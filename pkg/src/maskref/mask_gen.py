"""Random binary masks with an exactly controlled foreground area.

A shape is described by a *gauge* field: for every pixel center, the smallest
scale at which that center falls inside the continuous shape.  The
rasterized mask at scale ``s`` is the 8-connected component of the shape's
center pixel inside ``{gauge <= s}``.  Taking the component keeps masks in one
piece and leaves the area a non-decreasing step function of ``s``, which is
what the bisection over the scale relies on.  Discretization gaps left by the
bisection are closed by growing or shrinking the boundary one pixel at a time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError
from skimage.morphology import reconstruction

from .exceptions import (
    AdjustmentError,
    ContractError,
    GenerationError,
    MonotonicityError,
    UnsatisfiableShapeError,
)
from .validation import check_binary, check_random_state

__all__ = [
    "ShapeKind",
    "ALL_KINDS",
    "ShapeField",
    "MaskSpec",
    "BinaryMask",
    "RatioMixture",
    "EllipseParams",
    "FourierParams",
    "PolygonParams",
    "sample_ratio",
    "sample_kind",
    "sample_shape_params",
    "raster_shape",
    "bisect_scale",
    "adjust_area",
    "generate_mask",
    "exact_target",
    "count_components",
    "is_simple_point",
]

_EIGHT = np.ones((3, 3), dtype=bool)
MAX_BISECT_ITER = 64
BISECT_REL_TOL = 1e-6
ADJUST_MAX_FRACTION = 0.05
RETRY_BUDGET = 8
CENTER_MARGIN = 0.1


class ShapeKind(str, enum.Enum):
    ELLIPSE = "ellipse"
    FOURIER = "fourier"
    CONVEX = "convex"
    CONCAVE = "concave"

    @classmethod
    def parse(cls, value) -> "ShapeKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ContractError(f"unknown shape kind {value!r}; expected one of {names}") from None


ALL_KINDS = tuple(ShapeKind)


@dataclass(frozen=True)
class MaskSpec:
    shape_kind: ShapeKind
    height: int
    width: int
    target_ratio: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape_kind", ShapeKind.parse(self.shape_kind))
        if self.height < 8 or self.width < 8:
            raise ContractError(f"mask must be at least 8x8, got {self.height}x{self.width}")
        if not (0.0 <= self.target_ratio <= 1.0):
            raise ContractError(f"target_ratio={self.target_ratio} outside [0, 1]")

    @property
    def target_count(self) -> int:
        return exact_target(self.target_ratio, self.height, self.width)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """An ``H x W`` raster of 0/1 values."""

    data: np.ndarray

    def __post_init__(self):
        arr = check_binary(self.data, name="BinaryMask.data")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def empty(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=np.uint8))

    @classmethod
    def full(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=np.uint8))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @cached_property
    def foreground_count(self) -> int:
        return int(self.data.sum())

    @property
    def ratio(self) -> float:
        return self.foreground_count / (self.height * self.width)

    def n_components(self) -> int:
        return count_components(self.data)

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __repr__(self):
        return f"BinaryMask({self.height}x{self.width}, foreground={self.foreground_count})"


@dataclass(frozen=True)
class RatioMixture:
    """Mixture of uniform intervals for the foreground area ratio."""

    buckets: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        buckets = tuple((float(p), float(lo), float(hi)) for p, lo, hi in self.buckets)
        if not buckets:
            raise ContractError("RatioMixture needs at least one bucket")
        for p, lo, hi in buckets:
            if p < 0:
                raise ContractError(f"negative bucket probability {p}")
            if not (0.0 <= lo <= hi <= 1.0):
                raise ContractError(f"bucket interval [{lo}, {hi}] not inside [0, 1]")
        total = sum(p for p, _, _ in buckets)
        if abs(total - 1.0) > 1e-9:
            raise ContractError(f"bucket probabilities sum to {total}, expected 1")
        object.__setattr__(self, "buckets", buckets)

    @classmethod
    def default(cls) -> "RatioMixture":
        """10% tiny or empty, 80% typical subject, 10% large/background."""
        return cls(((0.1, 0.0, 0.1), (0.8, 0.1, 0.5), (0.1, 0.5, 1.0)))

    @classmethod
    def fixed(cls, ratio: float) -> "RatioMixture":
        return cls(((1.0, ratio, ratio),))

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for p, _, _ in self.buckets])


def exact_target(ratio: float, height: int, width: int) -> int:
    """Foreground pixel count for ``ratio``, rounding halves up."""
    return int(math.floor(ratio * height * width + 0.5))


def sample_ratio(mixture: RatioMixture, rng) -> float:
    rng = check_random_state(rng)
    idx = rng.choice(len(mixture.buckets), p=mixture.probabilities)
    _, lo, hi = mixture.buckets[idx]
    return float(rng.uniform(lo, hi))


def sample_kind(rng, kinds=ALL_KINDS) -> ShapeKind:
    kinds = [ShapeKind.parse(k) for k in kinds]
    if not kinds:
        raise ContractError("at least one shape kind is required")
    return kinds[int(rng.integers(len(kinds)))]


# --------------------------------------------------------------------------
# shape parameterizations


@dataclass(frozen=True)
class EllipseParams:
    axis_a: float = 1.0
    axis_b: float = 1.0
    angle: float = 0.0


@dataclass(frozen=True)
class FourierParams:
    """Radius ``scale * (1 + sum_n amp[n] * cos((n+1) * phi + phase[n]))``."""

    amplitudes: tuple[float, ...]
    phases: tuple[float, ...]


@dataclass(frozen=True)
class PolygonParams:
    """Vertices as ``(dx, dy)`` offsets from the center, sorted by angle."""

    vertices: tuple[tuple[float, float], ...]
    convex: bool = False


ShapeParams = EllipseParams | FourierParams | PolygonParams


def sample_shape_params(kind, rng) -> ShapeParams:
    kind = ShapeKind.parse(kind)
    if kind is ShapeKind.ELLIPSE:
        return EllipseParams(1.0, float(rng.uniform(0.3, 1.0)), float(rng.uniform(0.0, math.pi)))
    if kind is ShapeKind.FOURIER:
        n = int(rng.integers(2, 7))
        raw = rng.uniform(0.0, 1.0, n) / np.arange(1, n + 1)
        # sum of amplitudes stays below 1 so the radius is positive everywhere
        amps = raw * (rng.uniform(0.2, 0.8) / max(raw.sum(), 1e-12))
        phases = rng.uniform(0.0, 2 * math.pi, n)
        return FourierParams(tuple(amps.tolist()), tuple(phases.tolist()))
    if kind is ShapeKind.CONVEX:
        while True:
            n = int(rng.integers(3, 9))
            radius = np.sqrt(rng.uniform(0.0, 1.0, n))
            theta = rng.uniform(0.0, 2 * math.pi, n)
            pts = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
            try:
                hull = ConvexHull(pts)
            except QhullError:
                continue
            if hull.volume < 0.1:
                continue
            poly = pts[hull.vertices]
            poly = poly - _polygon_centroid(poly)
            return PolygonParams(_sort_by_angle(poly), convex=True)
    n = int(rng.integers(5, 11))
    step = 2 * math.pi / n
    theta = (np.arange(n) + rng.uniform(-0.35, 0.35, n)) * step + rng.uniform(0, 2 * math.pi)
    radius = rng.uniform(0.3, 1.0, n)
    poly = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    return PolygonParams(_sort_by_angle(poly), convex=False)


def _polygon_centroid(poly):
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = cross.sum() / 2
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6 * area)


def _sort_by_angle(poly):
    order = np.argsort(np.arctan2(poly[:, 1], poly[:, 0]))
    return tuple(map(tuple, poly[order].tolist()))


# --------------------------------------------------------------------------
# gauge fields and rasterization


def _gauge(params: ShapeParams, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Minimal scale at which each offset ``(dy, dx)`` is inside the shape."""
    if isinstance(params, EllipseParams):
        if min(params.axis_a, params.axis_b) <= 1e-9:
            raise UnsatisfiableShapeError("ellipse axes must be positive")
        c, s = math.cos(params.angle), math.sin(params.angle)
        u = c * dx + s * dy
        v = -s * dx + c * dy
        return np.hypot(u / params.axis_a, v / params.axis_b)
    if isinstance(params, FourierParams):
        amps = np.asarray(params.amplitudes, dtype=np.float64)
        phases = np.asarray(params.phases, dtype=np.float64)
        orders = np.arange(1, len(amps) + 1)
        probe = np.linspace(0, 2 * math.pi, 2048, endpoint=False)
        if (1 + (amps * np.cos(np.outer(probe, orders) + phases)).sum(1)).min() <= 1e-6:
            raise UnsatisfiableShapeError("Fourier blob radius reaches zero")
        phi = np.arctan2(dy, dx)[..., None]
        profile = 1 + (amps * np.cos(orders * phi + phases)).sum(-1)
        return np.hypot(dx, dy) / profile
    if isinstance(params, PolygonParams):
        verts = np.asarray(params.vertices, dtype=np.float64)
        if verts.ndim != 2 or verts.shape[0] < 3:
            raise UnsatisfiableShapeError("polygon needs at least three vertices")
        nxt = np.roll(verts, -1, axis=0)
        edge = nxt - verts
        normal = np.stack([edge[:, 1], -edge[:, 0]], axis=1)
        support = (normal * verts).sum(1)
        flip = support < 0
        normal[flip] *= -1
        support[flip] *= -1
        scale = np.abs(verts).max()
        if scale <= 1e-9 or (support <= 1e-9 * scale * np.linalg.norm(edge, axis=1)).any():
            raise UnsatisfiableShapeError("polygon is degenerate or not star-shaped about its center")
        angles = np.arctan2(verts[:, 1], verts[:, 0])
        phi = np.arctan2(dy, dx)
        sector = (np.searchsorted(angles, phi, side="right") - 1) % len(verts)
        return (normal[sector, 0] * dx + normal[sector, 1] * dy) / support[sector]
    raise ContractError(f"unsupported shape parameters {params!r}")


def _connection_field(gauge: np.ndarray, center: tuple[int, int]) -> np.ndarray:
    """Minimax path value from the center pixel through ``gauge``.

    Thresholding the result at ``s`` gives exactly the 8-connected component
    of the center inside ``{gauge <= s}``.
    """
    gauge = gauge.copy()
    gauge[center] = 0.0
    ring = _EIGHT.copy()
    ring[1, 1] = False
    lowest = ndimage.grey_erosion(gauge, footprint=ring, mode="constant", cval=np.inf)
    descends = lowest < gauge
    descends[center] = True
    if descends.all():
        # every pixel has a strictly lower neighbour, so every descent ends at the center
        return gauge
    seed = np.full_like(gauge, gauge.max())
    seed[center] = 0.0
    return reconstruction(seed, gauge, method="erosion", footprint=_EIGHT)


class ShapeField:
    """Precomputed connection field of one shape instance.

    ``area(s)`` and ``raster(s)`` are consistent for every scale ``s``; a
    scale of zero or less rasterizes to the empty mask.
    """

    def __init__(self, kind, center, params: ShapeParams, height: int, width: int):
        self.kind = ShapeKind.parse(kind)
        row, col = int(center[0]), int(center[1])
        if not (0 <= row < height and 0 <= col < width):
            raise ContractError(f"center {center} outside {height}x{width} frame")
        self.center = (row, col)
        self.height, self.width = height, width
        rows, cols = np.mgrid[0:height, 0:width]
        gauge = _gauge(params, (rows - row).astype(np.float64), (cols - col).astype(np.float64))
        self.field = _connection_field(gauge, self.center)
        self._sorted = np.sort(self.field, axis=None)

    @property
    def max_scale(self) -> float:
        return float(self._sorted[-1])

    def area(self, scale: float) -> int:
        if scale <= 0:
            return 0
        return int(np.searchsorted(self._sorted, scale, side="right"))

    def raster(self, scale: float) -> BinaryMask:
        if scale <= 0:
            return BinaryMask.empty(self.height, self.width)
        return BinaryMask(self.field <= scale)


def raster_shape(kind, center, scale: float, shape_params: ShapeParams, height: int, width: int) -> BinaryMask:
    """Rasterize one shape at ``scale`` (pixels), clipped to the frame.

    A pixel is foreground when its center lies inside the continuous shape
    and it is 8-connected to the center pixel through other inside pixels.
    """
    if not scale > 0:
        raise ContractError(f"scale must be positive, got {scale}")
    return ShapeField(kind, center, shape_params, height, width).raster(scale)


def bisect_scale(kind, center, shape_params, target_count: int, height: int, width: int, *, field=None):
    """Bisect the scale so the raster area gets as close as possible to ``target_count``.

    Returns ``(scale, mask)``.  The mask count may still differ from the
    target by the size of one discretization step.
    """
    total = height * width
    if not (0 <= target_count <= total):
        raise ContractError(f"target_count={target_count} outside [0, {total}]")
    if field is None:
        field = ShapeField(kind, center, shape_params, height, width)
    lo, hi = 0.0, field.max_scale
    area_lo, area_hi = 0, field.area(hi)
    if area_hi != total:
        raise MonotonicityError(f"upper bracket covers {area_hi} of {total} pixels")
    if target_count == 0:
        return lo, field.raster(lo)
    if target_count == total:
        return hi, field.raster(hi)
    for _ in range(MAX_BISECT_ITER):
        if hi - lo <= BISECT_REL_TOL * hi:
            break
        mid = 0.5 * (lo + hi)
        area_mid = field.area(mid)
        if not (area_lo <= area_mid <= area_hi):
            raise MonotonicityError(
                f"area {area_mid} at scale {mid} outside bracket [{area_lo}, {area_hi}]"
            )
        if area_mid >= target_count:
            hi, area_hi = mid, area_mid
        else:
            lo, area_lo = mid, area_mid
    if target_count - area_lo <= area_hi - target_count and area_lo > 0:
        return lo, field.raster(lo)
    return hi, field.raster(hi)


# --------------------------------------------------------------------------
# topology-preserving adjustment

_RING = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))
_RING_WEIGHTS = np.zeros((3, 3), dtype=np.int64)
for _bit, (_dr, _dc) in enumerate(_RING):
    _RING_WEIGHTS[_dr + 1, _dc + 1] = 1 << _bit


def _ring_components(members, adjacent) -> list[set]:
    members = set(members)
    comps = []
    while members:
        stack = [members.pop()]
        comp = set(stack)
        while stack:
            a = stack.pop()
            for b in list(members):
                if adjacent(a, b):
                    members.discard(b)
                    comp.add(b)
                    stack.append(b)
        comps.append(comp)
    return comps


def _simple_table() -> np.ndarray:
    table = np.zeros(256, dtype=bool)
    adj8 = lambda a, b: max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1  # noqa: E731
    adj4 = lambda a, b: abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1  # noqa: E731
    four = {(-1, 0), (0, 1), (1, 0), (0, -1)}
    for code in range(256):
        fg = [off for bit, off in enumerate(_RING) if code >> bit & 1]
        bg = [off for bit, off in enumerate(_RING) if not code >> bit & 1]
        n_fg = len(_ring_components(fg, adj8))
        n_bg = sum(1 for comp in _ring_components(bg, adj4) if comp & four)
        table[code] = n_fg == 1 and n_bg == 1
    return table


_SIMPLE = _simple_table()


def is_simple_point(window: np.ndarray) -> bool:
    """Whether removing the center of a 3x3 foreground window keeps topology.

    Uses 8-connectivity for the foreground and 4-connectivity for the
    background.
    """
    return bool(_SIMPLE[int((np.asarray(window, dtype=np.int64) * _RING_WEIGHTS).sum())])


def adjust_area(mask: BinaryMask, target_count: int, rng) -> BinaryMask:
    """Grow or shrink ``mask`` at its boundary until it has ``target_count`` pixels."""
    rng = check_random_state(rng)
    total = mask.height * mask.width
    diff = target_count - mask.foreground_count
    if not (0 <= target_count <= total):
        raise ContractError(f"target_count={target_count} outside [0, {total}]")
    if abs(diff) > ADJUST_MAX_FRACTION * total:
        raise ContractError(f"gap of {abs(diff)} pixels is too large for boundary adjustment")
    if diff == 0:
        return mask
    if mask.foreground_count == 0:
        raise AdjustmentError("cannot grow an empty mask")
    if diff > 0:
        return BinaryMask(_grow(mask.data.astype(bool), diff, rng))
    return BinaryMask(_shrink(mask.data, -diff, rng))


def _grow(data, need, rng):
    data = data.copy()
    while need > 0:
        frontier = np.flatnonzero(ndimage.binary_dilation(data, structure=_EIGHT) & ~data)
        if frontier.size == 0:
            raise AdjustmentError("no background pixel left to grow into")
        picks = rng.choice(frontier, size=min(need, frontier.size), replace=False)
        data.flat[picks] = True
        need -= picks.size
    return data


def _shrink(data, need, rng):
    padded = np.pad(data.astype(np.int64), 1)
    while need > 0:
        inner = padded.astype(bool)
        boundary = inner & ~ndimage.binary_erosion(inner, structure=_EIGHT, border_value=0)
        candidates = np.argwhere(boundary)
        rng.shuffle(candidates)
        removed = 0
        for r, c in candidates:
            window = padded[r - 1 : r + 2, c - 1 : c + 2]
            if _SIMPLE[int((window * _RING_WEIGHTS).sum())]:
                padded[r, c] = 0
                removed += 1
                if removed == need:
                    break
        if removed == 0:
            raise AdjustmentError("every boundary pixel is a cut point")
        need -= removed
    return padded[1:-1, 1:-1]


# --------------------------------------------------------------------------
# composition


def generate_mask(spec: MaskSpec, rng=None) -> BinaryMask:
    """Generate a single-component mask with exactly ``spec.target_count`` pixels.

    The random stream defaults to one seeded from ``spec.seed``.
    """
    rng = check_random_state(spec.seed if rng is None else rng)
    height, width = spec.height, spec.width
    target = spec.target_count
    if target == 0:
        return BinaryMask.empty(height, width)
    margin = int(round(CENTER_MARGIN * min(height, width)))
    last_error = None
    for _ in range(RETRY_BUDGET):
        center = (int(rng.integers(margin, height - margin)), int(rng.integers(margin, width - margin)))
        params = sample_shape_params(spec.shape_kind, rng)
        _, mask = bisect_scale(spec.shape_kind, center, params, target, height, width)
        if abs(mask.foreground_count - target) > ADJUST_MAX_FRACTION * height * width:
            last_error = AdjustmentError("bisection left a gap too large to adjust")
            continue
        try:
            return adjust_area(mask, target, rng)
        except AdjustmentError as exc:
            last_error = exc
    raise GenerationError(f"mask generation failed after {RETRY_BUDGET} attempts: {last_error}")


def count_components(data) -> int:
    """Number of 8-connected foreground components."""
    _, n = ndimage.label(np.asarray(data, dtype=bool), structure=_EIGHT)
    return int(n)
