"""Transformer input assembly and the reference-aware attention mask.

Channel layout of every temporal slot of the assembled input::

    [ latent (d) | mask (4) | latent (d) ]

Video slots carry ``z_t | m_zero | z_zero``; reference slots carry
``z_ref | m_ref | z_ref``.  Video slots come first, references are appended
along the temporal axis.  Tokens are the latent cells flattened in
``(slot, row, col)`` order.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
import torch

from .exceptions import ContractError

__all__ = [
    "AssembledInput",
    "AttentionMask",
    "noise_latent",
    "assemble_input",
    "build_attention_mask",
    "masked_attention",
    "MASK_CHANNELS",
]

MASK_CHANNELS = 4
RULE_REFERENCE_AWARE = "reference-aware"
RULE_PERMISSIVE = "permissive"


def noise_latent(z0, t: float, eps):
    """Linear path ``(1 - t) * z0 + t * eps``."""
    if not 0.0 <= float(t) <= 1.0:
        raise ContractError(f"t={t} outside [0, 1]")
    if tuple(z0.shape) != tuple(eps.shape):
        raise ContractError(f"z0 {tuple(z0.shape)} and eps {tuple(eps.shape)} differ in shape")
    return (1 - t) * z0 + t * eps


@dataclass(frozen=True, eq=False)
class AssembledInput:
    data: np.ndarray
    video_frames: int
    ref_frames: int
    latent_dim: int

    @property
    def shape(self):
        return self.data.shape

    @property
    def tokens_per_frame(self) -> int:
        return self.data.shape[1] * self.data.shape[2]

    def _group(self, slots, lo, hi):
        return self.data[slots, ..., lo:hi]

    def extract_video(self) -> np.ndarray:
        return self._group(slice(0, self.video_frames), 0, self.latent_dim)

    def extract_zero_mask(self) -> np.ndarray:
        d = self.latent_dim
        return self._group(slice(0, self.video_frames), d, d + MASK_CHANNELS)

    def extract_zero_latent(self) -> np.ndarray:
        d = self.latent_dim
        return self._group(slice(0, self.video_frames), d + MASK_CHANNELS, None)

    def extract_refs(self) -> list[np.ndarray]:
        return list(self._group(slice(self.video_frames, None), 0, self.latent_dim))

    def extract_ref_masks(self) -> list[np.ndarray]:
        d = self.latent_dim
        return list(self._group(slice(self.video_frames, None), d, d + MASK_CHANNELS))

    def extract_ref_copies(self) -> list[np.ndarray]:
        d = self.latent_dim
        return list(self._group(slice(self.video_frames, None), d + MASK_CHANNELS, None))

    def tokens(self) -> np.ndarray:
        return self.data.reshape(-1, self.data.shape[-1])


def assemble_input(z_t, z_refs, m_refs, z_zero, m_zero=None) -> AssembledInput:
    """Concatenate video and reference latents temporally, then the three rows by channel."""
    z_t = np.asarray(z_t, dtype=np.float64)
    z_zero = np.asarray(z_zero, dtype=np.float64)
    if z_t.ndim != 4:
        raise ContractError(f"z_t must be F x h x w x d, got {z_t.shape}")
    frames, h, w, d = z_t.shape
    if z_zero.shape != z_t.shape:
        raise ContractError(f"z_zero {z_zero.shape} must match z_t {z_t.shape}")
    if m_zero is None:
        m_zero = np.zeros((frames, h, w, MASK_CHANNELS))
    m_zero = np.asarray(m_zero, dtype=np.float64)
    if m_zero.shape != (frames, h, w, MASK_CHANNELS):
        raise ContractError(f"m_zero has shape {m_zero.shape}, expected {(frames, h, w, MASK_CHANNELS)}")
    if len(z_refs) != len(m_refs):
        raise ContractError(f"{len(z_refs)} reference latents but {len(m_refs)} masks")
    refs = np.asarray(z_refs, dtype=np.float64).reshape(len(z_refs), h, w, -1) if z_refs else np.zeros((0, h, w, d))
    masks = (
        np.asarray(m_refs, dtype=np.float64).reshape(len(m_refs), h, w, -1)
        if m_refs
        else np.zeros((0, h, w, MASK_CHANNELS))
    )
    if refs.shape[-1] != d or masks.shape[-1] != MASK_CHANNELS:
        raise ContractError("reference latent or mask channels do not match the video latent")
    top = np.concatenate([z_t, refs], axis=0)
    middle = np.concatenate([m_zero, masks], axis=0)
    bottom = np.concatenate([z_zero, refs], axis=0)
    data = np.concatenate([top, middle, bottom], axis=-1)
    return AssembledInput(data, frames, len(z_refs), d)


@dataclass(frozen=True, eq=False)
class AttentionMask:
    """Which keys each query may attend to.

    Rules, for ``(query -> key)``: video -> video always; video -> reference
    only for valid keys; valid reference -> video always; valid reference ->
    reference only for valid keys; invalid reference -> itself only.
    """

    video_tokens: int
    ref_tokens: int
    valid: np.ndarray
    rule: str = RULE_REFERENCE_AWARE

    def __post_init__(self):
        if self.video_tokens <= 0:
            raise ContractError("attention mask needs at least one video token")
        if self.valid.shape != (self.ref_tokens,):
            raise ContractError(f"valid has shape {self.valid.shape}, expected ({self.ref_tokens},)")

    @property
    def size(self) -> int:
        return self.video_tokens + self.ref_tokens

    def key_valid(self) -> np.ndarray:
        """Per-token flag: video tokens and valid reference tokens."""
        return np.concatenate([np.ones(self.video_tokens, dtype=bool), self.valid])

    def dense(self) -> np.ndarray:
        if self.rule == RULE_PERMISSIVE:
            return np.ones((self.size, self.size), dtype=bool)
        keys = self.key_valid()
        admit = np.repeat(keys[None, :], self.size, axis=0)
        invalid = np.flatnonzero(~keys)
        admit[invalid] = False
        admit[invalid, invalid] = True
        return admit

    def rule_counts(self) -> Counter:
        """Admissible (query, key) pairs broken down by rule."""
        admit = self.dense()
        nv = self.video_tokens
        keys = self.key_valid()
        counts = Counter()
        counts["video->video"] = int(admit[:nv, :nv].sum())
        counts["video->ref"] = int(admit[:nv, nv:].sum())
        valid_q = np.flatnonzero(keys[nv:]) + nv
        invalid_q = np.flatnonzero(~keys[nv:]) + nv
        counts["valid ref->video"] = int(admit[valid_q, :nv].sum())
        counts["valid ref->ref"] = int(admit[np.ix_(valid_q, np.arange(nv, self.size))].sum())
        counts["invalid ref->self"] = int(admit[invalid_q].sum())
        return counts


def build_attention_mask(video_frames: int, h: int, w: int, m_refs, *, permissive: bool = False) -> AttentionMask:
    """A reference token is valid iff its latent mask cell is 1."""
    valid = []
    for m in m_refs:
        m = np.asarray(m)
        if m.shape[:2] != (h, w):
            raise ContractError(f"latent mask {m.shape} does not match {h}x{w}")
        if not np.isin(m, (0, 1)).all():
            raise ContractError("latent masks must be binary")
        cell = m[..., 0] if m.ndim == 3 else m
        valid.append(cell.reshape(-1).astype(bool))
    valid = np.concatenate(valid) if valid else np.zeros(0, dtype=bool)
    if permissive:
        valid = np.ones_like(valid)
    rule = RULE_PERMISSIVE if permissive else RULE_REFERENCE_AWARE
    return AttentionMask(video_frames * h * w, valid.size, valid, rule)


def masked_attention(queries, keys, values, mask):
    """Softmax attention restricted to admissible keys.

    ``mask`` is an :class:`AttentionMask` or a boolean ``(..., n, n)`` array
    indexed ``[query, key]``.  Numpy inputs give a numpy result.
    """
    as_numpy = isinstance(queries, np.ndarray)
    q, k, v = (torch.as_tensor(a) for a in (queries, keys, values))
    admit = mask.dense() if isinstance(mask, AttentionMask) else mask
    admit = torch.as_tensor(admit, dtype=torch.bool, device=q.device)
    if q.shape[-2] != admit.shape[-2] or k.shape[-2] != admit.shape[-1]:
        raise ContractError(f"sequence lengths {q.shape[-2]}/{k.shape[-2]} do not match mask {tuple(admit.shape)}")
    if not bool(admit.any(dim=-1).all()):
        raise ContractError("a query row has no admissible key")
    # boolean attn_mask: True marks an admissible key, False acts as -inf
    out = torch.nn.functional.scaled_dot_product_attention(q, k, v, attn_mask=admit)
    return out.numpy() if as_numpy else out
