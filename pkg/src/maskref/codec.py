"""Exactly invertible stand-ins for the video VAE and the text encoder.

The video codec folds every block of 4 frames x p x p pixels x 3 channels
into one vector and rotates it with a seeded orthonormal matrix, so the
latent grid has 4x temporal and p x spatial compression with ``d = 12 p^2``
channels.  Leading copies of the first frame pad the clip to a multiple of
4 frames, giving ``floor((F - 1) / 4) + 1`` latent frames.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .exceptions import ContractError
from .mask_gen import BinaryMask
from .validation import check_image, check_video

__all__ = [
    "CodecConfig",
    "VideoLatent",
    "TextFeatures",
    "latent_frames",
    "encode_video",
    "decode_video",
    "encode_reference",
    "encode_text",
    "resize_mask_to_latent",
    "zero_video_latent",
    "save_latent",
    "load_latent",
]

TEMPORAL_GROUP = 4
TEXT_VOCAB = 4096
LATENT_MAGIC = 0x4D524C54  # "MRLT"
LATENT_VERSION = 1


@dataclass(frozen=True)
class CodecConfig:
    spatial_patch: int = 2
    projection_seed: int = 0

    def __post_init__(self):
        if self.spatial_patch < 1:
            raise ContractError("spatial_patch must be >= 1")

    @property
    def temporal_group(self) -> int:
        return TEMPORAL_GROUP

    @property
    def latent_dim(self) -> int:
        return 3 * TEMPORAL_GROUP * self.spatial_patch**2


@dataclass(frozen=True, eq=False)
class VideoLatent:
    """``F^ x h x w x d`` latent.  ``source_frames`` is the pixel frame count."""

    data: np.ndarray
    source_frames: int

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ContractError(f"latent must be 4-D, got {self.data.shape}")
        if latent_frames(self.source_frames) != self.data.shape[0]:
            raise ContractError(
                f"{self.data.shape[0]} latent frames do not match {self.source_frames} source frames"
            )

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def channels(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True, eq=False)
class TextFeatures:
    data: np.ndarray
    tokens_text: tuple[str, ...] = ()

    @property
    def tokens(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def latent_frames(num_frames: int) -> int:
    if num_frames < 1:
        raise ContractError("a video needs at least one frame")
    return (num_frames - 1) // TEMPORAL_GROUP + 1


@lru_cache(maxsize=16)
def _projection(dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    q.setflags(write=False)
    return q


def _check_divisible(height, width, p):
    if height % p or width % p:
        raise ContractError(f"frame size {height}x{width} not divisible by patch {p}")


def encode_video(frames, config: CodecConfig = CodecConfig()) -> VideoLatent:
    frames = check_video(frames)
    num, height, width, _ = frames.shape
    p = config.spatial_patch
    _check_divisible(height, width, p)
    groups = latent_frames(num)
    pad = TEMPORAL_GROUP * groups - num
    padded = np.concatenate([np.repeat(frames[:1], pad, axis=0), frames], axis=0)
    h, w = height // p, width // p
    blocks = padded.reshape(groups, TEMPORAL_GROUP, h, p, w, p, 3)
    blocks = blocks.transpose(0, 2, 4, 1, 3, 5, 6).reshape(groups, h, w, config.latent_dim)
    return VideoLatent(blocks @ _projection(config.latent_dim, config.projection_seed).T, num)


def decode_video(latent: VideoLatent, config: CodecConfig = CodecConfig(), *, clamp: bool = True) -> np.ndarray:
    data = np.asarray(latent.data, dtype=np.float64)
    if data.shape[-1] != config.latent_dim:
        raise ContractError(f"latent has {data.shape[-1]} channels, codec expects {config.latent_dim}")
    p = config.spatial_patch
    groups, h, w, _ = data.shape
    blocks = data @ _projection(config.latent_dim, config.projection_seed)
    blocks = blocks.reshape(groups, h, w, TEMPORAL_GROUP, p, p, 3).transpose(0, 3, 1, 4, 2, 5, 6)
    frames = blocks.reshape(groups * TEMPORAL_GROUP, h * p, w * p, 3)
    frames = frames[TEMPORAL_GROUP * groups - latent.source_frames :]
    return np.clip(frames, -1.0, 1.0) if clamp else frames


def encode_reference(image, config: CodecConfig = CodecConfig()) -> np.ndarray:
    """Encode one image as a single-frame video; returns the ``h x w x d`` latent."""
    image = check_image(image)
    return encode_video(image[None], config).data[0]


def zero_video_latent(num_frames: int, height: int, width: int, config: CodecConfig = CodecConfig()) -> np.ndarray:
    """Latent of an all-zero video (a codec constant, cached)."""
    return _zero_latent(num_frames, height, width, config).copy()


@lru_cache(maxsize=32)
def _zero_latent(num_frames, height, width, config):
    return encode_video(np.zeros((num_frames, height, width, 3)), config).data


def _token_row(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % TEXT_VOCAB


@lru_cache(maxsize=8)
def _embedding_table(dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    # last row is the designated null embedding
    table = rng.standard_normal((TEXT_VOCAB + 1, dim)) / np.sqrt(dim)
    table.setflags(write=False)
    return table


def encode_text(prompt: str, dim: int = 32, vocab_seed: int = 0) -> TextFeatures:
    tokens = tuple(prompt.lower().split())
    table = _embedding_table(dim, vocab_seed)
    if not tokens:
        return TextFeatures(table[TEXT_VOCAB : TEXT_VOCAB + 1].copy(), ())
    return TextFeatures(table[[_token_row(t) for t in tokens]].copy(), tokens)


def resize_mask_to_latent(mask: BinaryMask, h: int, w: int) -> np.ndarray:
    """Max-pool a pixel mask to ``h x w`` and replicate it over 4 channels."""
    if h < 1 or w < 1 or h > mask.height or w > mask.width:
        raise ContractError(f"latent size {h}x{w} incompatible with mask {mask.shape}")
    if mask.height % h or mask.width % w:
        raise ContractError(f"mask {mask.shape} not an integer multiple of {h}x{w}")
    ph, pw = mask.height // h, mask.width // w
    pooled = mask.data.reshape(h, ph, w, pw).max(axis=(1, 3))
    return np.repeat(pooled[..., None], TEMPORAL_GROUP, axis=-1).astype(np.float64)


def save_latent(path, latent: VideoLatent, config: CodecConfig) -> None:
    """Write an eight-word uint32 header followed by little-endian float32 data."""
    frames, h, w, d = latent.data.shape
    seed = config.projection_seed & 0xFFFFFFFFFFFFFFFF
    header = struct.pack(
        "<8I", LATENT_MAGIC, LATENT_VERSION, frames, h, w, d, seed & 0xFFFFFFFF, seed >> 32
    )
    Path(path).write_bytes(header + latent.data.astype("<f4").tobytes())


def load_latent(path) -> tuple[VideoLatent, int]:
    """Return the latent and the projection seed recorded in its header."""
    raw = Path(path).read_bytes()
    magic, version, frames, h, w, d, lo, hi = struct.unpack("<8I", raw[:32])
    if magic != LATENT_MAGIC or version != LATENT_VERSION:
        raise ContractError(f"{path} is not a latent file")
    data = np.frombuffer(raw[32:], dtype="<f4").reshape(frames, h, w, d).astype(np.float64)
    return VideoLatent(data, TEMPORAL_GROUP * frames - 3), lo | (hi << 32)
