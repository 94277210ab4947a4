"""Synthetic moving-shape videos with templated captions, and frame-directory IO."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import ContractError
from .validation import check_random_state

__all__ = [
    "PALETTE",
    "BACKGROUNDS",
    "ShapeState",
    "Scene",
    "SyntheticSample",
    "synth_dataset",
    "synth_sample",
    "step_shape",
    "render_frame",
    "shape_coverage",
    "caption_for",
    "to_uint8",
    "from_uint8",
    "save_image",
    "load_image",
    "save_video",
    "load_video",
    "save_dataset",
    "load_dataset",
    "make_grid",
]

PALETTE = {
    "red": (230, 25, 25),
    "orange": (245, 130, 20),
    "yellow": (235, 220, 30),
    "green": (30, 190, 40),
    "cyan": (30, 210, 220),
    "blue": (30, 60, 230),
    "purple": (140, 40, 220),
    "magenta": (225, 35, 190),
}
BACKGROUNDS = {"white": (255, 255, 255), "black": (0, 0, 0), "gray": (128, 128, 128)}
SHAPES = ("circle", "square", "triangle")
DIRECTIONS = ("right", "down-right", "down", "down-left", "left", "up-left", "up", "up-right")
SUPERSAMPLE = 4
FPS = 8


@dataclass(frozen=True)
class ShapeState:
    kind: str
    color: str
    x: float
    y: float
    radius: float
    vx: float
    vy: float


@dataclass(frozen=True)
class Scene:
    background: str
    shapes: tuple[ShapeState, ...]


@dataclass(frozen=True, eq=False)
class SyntheticSample:
    video: np.ndarray
    caption: str
    scene: Scene
    trajectory: tuple[tuple[ShapeState, ...], ...] = ()


def _rgb(name_or_rgb) -> np.ndarray:
    rgb = PALETTE.get(name_or_rgb) or BACKGROUNDS.get(name_or_rgb) or name_or_rgb
    return np.asarray(rgb, dtype=np.float64) / 127.5 - 1.0


def direction_of(vx: float, vy: float) -> str:
    if vx == 0 and vy == 0:
        return "nowhere"
    # image rows grow downward
    sector = int(round(math.atan2(vy, vx) / (math.pi / 4))) % 8
    return DIRECTIONS[sector]


def caption_for(scene: Scene) -> str:
    parts = [
        f"a {s.color} {s.kind} " + ("standing still" if s.vx == s.vy == 0 else f"moving {direction_of(s.vx, s.vy)}")
        for s in scene.shapes
    ]
    return f"{' and '.join(parts)} on a {scene.background} background"


def step_shape(shape: ShapeState, width: float, height: float) -> ShapeState:
    """Advance one frame; a shape touching a wall while moving into it bounces."""
    vx, vy = shape.vx, shape.vy
    if (shape.x + shape.radius >= width and vx > 0) or (shape.x - shape.radius <= 0 and vx < 0):
        vx = -vx
    if (shape.y + shape.radius >= height and vy > 0) or (shape.y - shape.radius <= 0 and vy < 0):
        vy = -vy
    return replace(shape, x=shape.x + vx, y=shape.y + vy, vx=vx, vy=vy)


def _inside(kind: str, dx: np.ndarray, dy: np.ndarray, radius: float) -> np.ndarray:
    if kind == "circle":
        return dx * dx + dy * dy <= radius * radius
    if kind == "square":
        half = radius / math.sqrt(2)
        return (np.abs(dx) <= half) & (np.abs(dy) <= half)
    if kind == "triangle":
        # upright equilateral triangle inscribed in the circle of ``radius``
        inside = np.broadcast_to(dy <= radius / 2, np.broadcast_shapes(dx.shape, dy.shape)).copy()
        for angle in (math.radians(30), math.radians(150)):
            nx, ny = math.cos(angle), -math.sin(angle)
            inside &= nx * dx + ny * dy <= radius / 2
        return inside
    raise ContractError(f"unknown shape {kind!r}")


def shape_coverage(shape: ShapeState, height: int, width: int) -> np.ndarray:
    """Fraction of each pixel covered by ``shape`` (supersampled)."""
    offsets = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    ys = (np.arange(height)[:, None] + offsets[None, :]).reshape(-1)
    xs = (np.arange(width)[:, None] + offsets[None, :]).reshape(-1)
    inside = _inside(shape.kind, xs[None, :] - shape.x, ys[:, None] - shape.y, shape.radius)
    return inside.reshape(height, SUPERSAMPLE, width, SUPERSAMPLE).mean(axis=(1, 3))


def render_frame(background: str, shapes, height: int, width: int) -> np.ndarray:
    frame = np.broadcast_to(_rgb(background), (height, width, 3)).copy()
    for shape in shapes:
        alpha = shape_coverage(shape, height, width)[..., None]
        frame = (1 - alpha) * frame + alpha * _rgb(shape.color)
    return frame


def _random_shape(rng, height, width) -> ShapeState:
    size = min(height, width)
    radius = float(rng.uniform(0.18, 0.28) * size)
    x = float(rng.uniform(radius, width - radius))
    y = float(rng.uniform(radius, height - radius))
    speed = float(rng.uniform(0.04, 0.08) * size)
    if rng.uniform() < 0.1:
        vx = vy = 0.0
    else:
        angle = int(rng.integers(8)) * math.pi / 4
        vx, vy = round(speed * math.cos(angle), 6), round(speed * math.sin(angle), 6)
    return ShapeState(
        kind=SHAPES[int(rng.integers(len(SHAPES)))],
        color=list(PALETTE)[int(rng.integers(len(PALETTE)))],
        x=x, y=y, radius=radius, vx=vx, vy=vy,
    )


def synth_sample(num_frames: int, height: int, width: int, rng, *, max_shapes: int = 2) -> SyntheticSample:
    rng = check_random_state(rng)
    n_shapes = int(rng.integers(1, max_shapes + 1))
    shapes = []
    while len(shapes) < n_shapes:
        shape = _random_shape(rng, height, width)
        if all(shape.color != s.color for s in shapes):
            shapes.append(shape)
    scene = Scene(list(BACKGROUNDS)[int(rng.integers(len(BACKGROUNDS)))], tuple(shapes))
    frames, trajectory = [], []
    state = tuple(shapes)
    for _ in range(num_frames):
        trajectory.append(state)
        frames.append(render_frame(scene.background, state, height, width))
        state = tuple(step_shape(s, width, height) for s in state)
    return SyntheticSample(np.stack(frames), caption_for(scene), scene, tuple(trajectory))


def synth_dataset(n: int, num_frames: int = 5, height: int = 16, width: int = 16, seed: int = 0, **kwargs):
    """``n`` deterministic samples; sample ``i`` depends only on ``(seed, i)``."""
    if num_frames < 1:
        raise ContractError("num_frames must be >= 1")
    return [
        synth_sample(num_frames, height, width, np.random.default_rng([seed, i]), **kwargs) for i in range(n)
    ]


# --------------------------------------------------------------------------
# image / video files


def to_uint8(image) -> np.ndarray:
    return np.clip(np.floor((np.asarray(image) + 1.0) * 127.5 + 0.5), 0, 255).astype(np.uint8)


def from_uint8(image) -> np.ndarray:
    return np.asarray(image, dtype=np.float64) / 127.5 - 1.0


def save_image(path, image) -> None:
    """Save a float image in [-1, 1] (H x W x 3) or a uint8 array."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    Image.fromarray(arr).save(path)


def load_image(path) -> np.ndarray:
    """Load an RGB image as floats in [-1, 1]."""
    with Image.open(path) as img:
        return from_uint8(np.asarray(img.convert("RGB")))


def save_video(directory, frames, caption: str = "", fps: int = FPS) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames = np.asarray(frames)
    for i, frame in enumerate(frames):
        save_image(directory / f"frame_{i:04d}.png", frame)
    num, height, width = frames.shape[:3]
    meta = f"frames {num}\nheight {height}\nwidth {width}\nfps {fps}\ncaption {caption}\n"
    (directory / "meta.txt").write_text(meta)


def load_video(directory) -> tuple[np.ndarray, dict]:
    directory = Path(directory)
    meta = {}
    for line in (directory / "meta.txt").read_text().splitlines():
        key, _, value = line.partition(" ")
        meta[key] = value
    num = int(meta["frames"])
    frames = np.stack([load_image(directory / f"frame_{i:04d}.png") for i in range(num)])
    if frames.shape[1:3] != (int(meta["height"]), int(meta["width"])):
        raise ContractError(f"{directory}: frame size disagrees with meta.txt")
    return frames, meta


def save_dataset(directory, samples) -> None:
    directory = Path(directory)
    for i, sample in enumerate(samples):
        save_video(directory / f"video_{i:05d}", sample.video, sample.caption)


def load_dataset(directory) -> list[SyntheticSample]:
    """Load every ``video_*`` directory; scene descriptors are not stored on disk."""
    directory = Path(directory)
    paths = sorted(p for p in directory.iterdir() if p.is_dir() and (p / "meta.txt").exists())
    if not paths:
        raise ContractError(f"no videos found in {directory}")
    samples = []
    for path in paths:
        frames, meta = load_video(path)
        samples.append(SyntheticSample(frames, meta.get("caption", ""), Scene("unknown", ())))
    return samples


def make_grid(images, cols: int | None = None, pad: int = 1) -> np.ndarray:
    """Tile equally sized images (float in [-1, 1] or uint8) into one uint8 sheet."""
    tiles = [np.asarray(im) if np.asarray(im).dtype == np.uint8 else to_uint8(im) for im in images]
    if not tiles:
        raise ContractError("no images to tile")
    tiles = [t[..., None].repeat(3, -1) if t.ndim == 2 else t for t in tiles]
    height, width = tiles[0].shape[:2]
    cols = cols or int(math.ceil(math.sqrt(len(tiles))))
    rows = int(math.ceil(len(tiles) / cols))
    sheet = np.full((rows * (height + pad) + pad, cols * (width + pad) + pad, 3), 255, dtype=np.uint8)
    for i, tile in enumerate(tiles):
        r, c = divmod(i, cols)
        top, left = pad + r * (height + pad), pad + c * (width + pad)
        sheet[top : top + height, left : left + width] = tile
    return sheet
