"""Zero-shot reference-to-video sampling.

References are segmented (or taken whole in background-scene mode),
background-zeroed, resized into the target frame with centered zero padding,
encoded, and appended to the video latent as noise-free slots.  Sampling
integrates the learned velocity from ``t = 1`` (noise) to ``t = 0`` with
uniform Euler steps and classifier-free guidance on the text.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import torch
from scipy import ndimage

from .augment import bilinear_sample
from .codec import (
    CodecConfig,
    VideoLatent,
    decode_video,
    encode_reference,
    encode_text,
    latent_frames,
    resize_mask_to_latent,
    zero_video_latent,
)
from .conditioning import assemble_input, build_attention_mask
from .exceptions import ConfigurationError, ContractError, SegmentationError
from .mask_gen import BinaryMask
from .model import ModelBatch, ToyDiT

__all__ = [
    "ReferenceMode",
    "ReferenceInput",
    "SamplerConfig",
    "segment_subject",
    "resize_and_pad",
    "prepare_reference",
    "sample_video",
]

MIN_CHROMA_DISTANCE = 0.1


class ReferenceMode(str, enum.Enum):
    SUBJECT = "subject"
    BACKGROUND_SCENE = "background"


@dataclass(frozen=True, eq=False)
class ReferenceInput:
    image: np.ndarray
    mode: ReferenceMode = ReferenceMode.SUBJECT
    mask: BinaryMask | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", ReferenceMode(self.mode))


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    guidance_scale: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ContractError("steps must be >= 1")
        if self.guidance_scale < 0:
            raise ContractError("guidance_scale must be >= 0")


def segment_subject(image, mask: BinaryMask | None = None) -> BinaryMask:
    """Foreground mask of ``image``.

    A supplied mask is returned as is.  Otherwise pixels whose color is
    farther from the border-median color than half the largest such distance
    are foreground, and only the largest 8-connected component is kept.
    """
    image = np.asarray(image, dtype=np.float64)
    if mask is not None:
        if mask.shape != image.shape[:2]:
            raise ContractError(f"mask {mask.shape} does not match image {image.shape[:2]}")
        if mask.foreground_count == 0:
            raise SegmentationError("supplied mask is empty; use background-scene mode instead")
        return mask
    border = np.concatenate([image[0], image[-1], image[1:-1, 0], image[1:-1, -1]])
    distance = np.linalg.norm(image - np.median(border, axis=0), axis=-1)
    peak = distance.max()
    if peak < MIN_CHROMA_DISTANCE:
        raise SegmentationError(
            "no foreground found; use background-scene mode or supply a mask"
        )
    labels, n = ndimage.label(distance > peak / 2, structure=np.ones((3, 3)))
    sizes = ndimage.sum(np.ones_like(distance), labels, index=np.arange(1, n + 1))
    return BinaryMask(labels == 1 + int(np.argmax(sizes)))


def _resize_bilinear(image, out_h, out_w):
    in_h, in_w = image.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * in_h / out_h - 0.5, 0, in_h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * in_w / out_w - 0.5, 0, in_w - 1)
    y, x = np.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(image, x, y)


def _resize_nearest(data, out_h, out_w):
    in_h, in_w = data.shape
    rows = np.minimum(((np.arange(out_h) + 0.5) * in_h / out_h).astype(np.int64), in_h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * in_w / out_w).astype(np.int64), in_w - 1)
    return data[np.ix_(rows, cols)]


def resize_and_pad(image, mask: BinaryMask, target) -> tuple[np.ndarray, BinaryMask]:
    """Fit ``image``/``mask`` inside ``target = (H, W)`` keeping the aspect ratio.

    The scaled content is centered; the padding is 0 in the image (mid-gray
    in pixel space) and background in the mask.
    """
    height, width = (int(v) for v in target)
    if height < 1 or width < 1:
        raise ContractError(f"target size must be positive, got {target}")
    image = np.asarray(image, dtype=np.float64)
    src_h, src_w = image.shape[:2]
    if mask.shape != (src_h, src_w):
        raise ContractError(f"mask {mask.shape} does not match image {image.shape[:2]}")
    scale = min(height / src_h, width / src_w)
    new_h = max(1, min(height, int(round(scale * src_h))))
    new_w = max(1, min(width, int(round(scale * src_w))))
    if (new_h, new_w) == (src_h, src_w):
        scaled, scaled_mask = image, mask.data
    else:
        scaled = _resize_bilinear(image, new_h, new_w)
        scaled_mask = _resize_nearest(mask.data, new_h, new_w)
    top, left = (height - new_h) // 2, (width - new_w) // 2
    out = np.zeros((height, width, image.shape[2]))
    out_mask = np.zeros((height, width), dtype=np.uint8)
    out[top : top + new_h, left : left + new_w] = scaled
    out_mask[top : top + new_h, left : left + new_w] = scaled_mask
    return out, BinaryMask(out_mask)


def prepare_reference(ref: ReferenceInput, height: int, width: int):
    """Return the processed ``(image, mask)`` pair at the target resolution."""
    image = np.asarray(ref.image)
    if image.dtype == np.uint8:
        image = image.astype(np.float64) / 127.5 - 1.0
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ContractError(f"reference image must be H x W x 3, got {image.shape}")
    if ref.mode is ReferenceMode.BACKGROUND_SCENE:
        mask = BinaryMask.full(*image.shape[:2])
    else:
        mask = segment_subject(image, ref.mask)
    image = image * mask.data[..., None]
    return resize_and_pad(image, mask, (height, width))


def _reference_batch(refs, prompt, num_frames, height, width, codec, text_dim, vocab_seed, dtype):
    p = codec.spatial_patch
    h, w = height // p, width // p
    z_refs, m_refs = [], []
    for ref in refs:
        image, mask = prepare_reference(ref, height, width)
        z_refs.append(encode_reference(image, codec))
        m_refs.append(resize_mask_to_latent(mask, h, w))
    frames = latent_frames(num_frames)
    z_zero = zero_video_latent(num_frames, height, width, codec)
    z_in = assemble_input(np.zeros_like(z_zero), z_refs, m_refs, z_zero)
    mask = build_attention_mask(frames, h, w, m_refs)
    items = [
        (z_in, encode_text(prompt, text_dim, vocab_seed).data, mask, None),
        (z_in, encode_text("", text_dim, vocab_seed).data, mask, None),
    ]
    return ModelBatch.collate(items, dtype=dtype)


def sample_video(
    model,
    refs,
    prompt: str,
    shape,
    cfg: SamplerConfig = SamplerConfig(),
    *,
    codec: CodecConfig = CodecConfig(),
    text_dim: int | None = None,
    vocab_seed: int = 0,
    on_step=None,
) -> np.ndarray:
    """Generate an ``F x H x W x 3`` video in [-1, 1].

    ``model`` is a :class:`ToyDiT` or any callable ``(batch, z_t, t)``
    returning velocities in the ``z0 - eps`` convention.  ``on_step`` is
    called as ``on_step(i, t, model_input)`` before each step.
    """
    num_frames, height, width = (int(v) for v in shape)
    p = codec.spatial_patch
    if height % p or width % p:
        raise ContractError(f"frame size {height}x{width} not divisible by patch {p}")
    if isinstance(model, ToyDiT):
        if model.cfg.latent_dim != codec.latent_dim:
            raise ConfigurationError(
                f"model latent_dim {model.cfg.latent_dim} != codec latent_dim {codec.latent_dim}"
            )
        text_dim = model.cfg.text_dim if text_dim is None else text_dim
        if text_dim != model.cfg.text_dim:
            raise ConfigurationError(f"text_dim {text_dim} != model text_dim {model.cfg.text_dim}")
        dtype = next(model.parameters()).dtype
        predict = model.predict
    else:
        text_dim = 32 if text_dim is None else text_dim
        dtype = torch.float64
        predict = model
    batch = _reference_batch(refs, prompt, num_frames, height, width, codec, text_dim, vocab_seed, dtype)
    frames = latent_frames(num_frames)
    gen = torch.Generator().manual_seed(cfg.seed)
    z = torch.randn((1, frames, height // p, width // p, codec.latent_dim), generator=gen, dtype=torch.float64)
    s = cfg.guidance_scale
    with torch.no_grad():
        for i in range(cfg.steps):
            t_cur = 1.0 - i / cfg.steps
            t_next = 1.0 - (i + 1) / cfg.steps
            z_pair = z.expand(2, *z.shape[1:]).to(dtype)
            if on_step is not None:
                on_step(i, t_cur, batch.with_latent(z_pair))
            v = predict(batch, z_pair, torch.full((2,), t_cur, dtype=dtype)).to(torch.float64)
            v_cond, v_uncond = v[:1], v[1:]
            guided = v_uncond + s * (v_cond - v_uncond)
            z = z + (t_cur - t_next) * guided
    return decode_video(VideoLatent(z[0].numpy(), num_frames), codec)
