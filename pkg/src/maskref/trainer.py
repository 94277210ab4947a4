"""Masked training: random masked frames of each video serve as its references."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentConfig, MaskedReference, make_masked_reference
from .codec import CodecConfig, encode_reference, encode_text, encode_video, resize_mask_to_latent, zero_video_latent
from .conditioning import AssembledInput, AttentionMask, assemble_input, build_attention_mask
from .exceptions import ContractError, GenerationError, TrainingError
from .mask_gen import ALL_KINDS, MaskSpec, RatioMixture, ShapeKind, generate_mask, sample_kind, sample_ratio
from .model import ModelBatch, ModelConfig, ToyDiT, fm_loss

__all__ = [
    "TrainConfig",
    "TrainingExample",
    "TrainResult",
    "build_training_example",
    "collate_examples",
    "validate_example",
    "train",
    "write_loss_trace",
]

logger = logging.getLogger(__name__)

# full-scale recipe, kept for reference; desk-scale defaults below differ
FULL_SCALE_LR = 1e-5
FULL_SCALE_BATCH = 64


@dataclass(frozen=True)
class TrainConfig:
    ref_count_range: tuple[int, int] = (0, 3)
    ratio_mixture: RatioMixture = field(default_factory=RatioMixture.default)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    lr: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 4
    steps: int = 500
    seed: int = 0
    mask_types: tuple[ShapeKind, ...] = ALL_KINDS
    fixed_ratio: float | None = None
    disable_augment: bool = False
    disable_attn_mask: bool = False
    caption_dropout: float = 0.1
    model: ModelConfig = field(default_factory=ModelConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    vocab_seed: int = 0
    debug_validate: bool = False

    def __post_init__(self):
        lo, hi = self.ref_count_range
        if not 0 <= lo <= hi <= 8:
            raise ContractError(f"ref_count_range {self.ref_count_range} must lie within [0, 8]")
        if not self.lr >= 0:
            raise ContractError(f"lr must be non-negative, got {self.lr}")
        if self.batch_size < 1 or self.steps < 0:
            raise ContractError("batch_size must be >= 1 and steps >= 0")
        if self.fixed_ratio is not None and not 0.0 <= self.fixed_ratio <= 1.0:
            raise ContractError(f"fixed_ratio={self.fixed_ratio} outside [0, 1]")
        kinds = tuple(ShapeKind.parse(k) for k in self.mask_types)
        if not kinds:
            raise ContractError("mask_types must not be empty")
        object.__setattr__(self, "mask_types", kinds)
        if self.model.latent_dim != self.codec.latent_dim:
            raise ContractError(
                f"model latent_dim {self.model.latent_dim} != codec latent_dim {self.codec.latent_dim}"
            )

    @property
    def effective_augment(self) -> AugmentConfig:
        return AugmentConfig.disabled() if self.disable_augment else self.augment


@dataclass(eq=False)
class TrainingExample:
    z0: np.ndarray
    z_refs: list
    m_refs: list
    z_zero: np.ndarray
    text: np.ndarray
    caption: str
    attn_mask: AttentionMask
    references: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    frame_indices: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    kinds: list = field(default_factory=list)

    def assembled(self, z_t=None) -> AssembledInput:
        """Assembled input with ``z_t`` (default: zeros) in the video slots."""
        z_t = np.zeros_like(self.z0) if z_t is None else z_t
        return assemble_input(z_t, self.z_refs, self.m_refs, self.z_zero)


@dataclass(eq=False)
class TrainResult:
    model: ToyDiT
    losses: list
    config: TrainConfig


def _masked_reference(frame, cfg: TrainConfig, rng):
    height, width = frame.shape[:2]
    while True:
        ratio = cfg.fixed_ratio if cfg.fixed_ratio is not None else sample_ratio(cfg.ratio_mixture, rng)
        kind = sample_kind(rng, cfg.mask_types)
        spec = MaskSpec(kind, height, width, ratio, seed=int(rng.integers(2**63)))
        try:
            mask = generate_mask(spec)
        except GenerationError:
            logger.debug("mask generation failed for %s; resampling", spec)
            continue
        return make_masked_reference(frame, mask, cfg.effective_augment, rng), mask, ratio, kind


def build_training_example(sample, cfg: TrainConfig, rng, *, z0=None) -> TrainingExample:
    """Turn one video-text pair into a reference-conditioned training example."""
    video = np.asarray(sample.video, dtype=np.float64)
    num, height, width, _ = video.shape
    p = cfg.codec.spatial_patch
    if z0 is None:
        z0 = encode_video(video, cfg.codec).data
    h, w = height // p, width // p
    k = int(rng.integers(cfg.ref_count_range[0], cfg.ref_count_range[1] + 1))
    example = TrainingExample(
        z0=z0, z_refs=[], m_refs=[], z_zero=zero_video_latent(num, height, width, cfg.codec),
        text=None, caption="", attn_mask=None,
    )
    for _ in range(k):
        idx = int(rng.integers(num))
        ref, mask, ratio, kind = _masked_reference(video[idx], cfg, rng)
        example.z_refs.append(encode_reference(ref.masked_frame, cfg.codec))
        example.m_refs.append(resize_mask_to_latent(ref.mask, h, w))
        example.references.append(ref)
        example.masks.append(mask)
        example.frame_indices.append(idx)
        example.ratios.append(ratio)
        example.kinds.append(kind)
    caption = "" if rng.uniform() < cfg.caption_dropout else sample.caption
    example.caption = caption
    example.text = encode_text(caption, cfg.model.text_dim, cfg.vocab_seed).data
    example.attn_mask = build_attention_mask(z0.shape[0], h, w, example.m_refs, permissive=cfg.disable_attn_mask)
    return example


def validate_example(example: TrainingExample, cfg: TrainConfig) -> None:
    """Re-check the invariants delegated to the mask, augmentation and codec stages."""
    from .mask_gen import exact_target

    assembled = example.assembled()
    for ref, z_ref, got in zip(example.references, example.z_refs, assembled.extract_refs()):
        if not np.array_equal(got, z_ref):
            raise ContractError("reference slot differs from its clean latent")
        if not np.array_equal(encode_reference(ref.masked_frame, cfg.codec), z_ref):
            raise ContractError("reference latent is not the encoding of the masked frame")
        if np.any(ref.masked_frame[ref.mask.data == 0] != 0):
            raise ContractError("masked frame is non-zero outside the mask")
    for mask, ratio, ref in zip(example.masks, example.ratios, example.references):
        if mask.foreground_count != exact_target(ratio, mask.height, mask.width):
            raise ContractError("reference mask misses its exact foreground count")
        if not ref.params.is_identity:
            data = ref.mask.data
            if data[0].any() or data[-1].any() or data[:, 0].any() or data[:, -1].any():
                raise ContractError("augmented foreground touches the frame border")


def collate_examples(examples, dtype=torch.float32) -> ModelBatch:
    items = [(ex.assembled(), ex.text, ex.attn_mask, ex.z0) for ex in examples]
    batch = ModelBatch.collate(items, dtype=dtype)
    batch.meta = [ex.caption for ex in examples]
    return batch


def train(
    cfg: TrainConfig, dataset, model: ToyDiT | None = None, *, log_every: int = 0, callback=None
) -> TrainResult:
    """Optimise the flow-matching loss with AdamW on masked-reference batches.

    Deterministic for a fixed ``cfg.seed`` and torch thread count.  When
    given, ``callback(step, model, loss)`` runs after every optimiser step and
    a truthy return value stops training early.
    """
    if not dataset:
        raise ContractError("dataset is empty")
    torch.manual_seed(cfg.seed)
    model = model if model is not None else ToyDiT(cfg.model)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    latents = [encode_video(s.video, cfg.codec).data for s in dataset]
    losses = []
    model.train()
    for step in range(cfg.steps):
        rng = np.random.default_rng([cfg.seed, step])
        picks = rng.integers(len(dataset), size=cfg.batch_size)
        examples = [build_training_example(dataset[i], cfg, rng, z0=latents[i]) for i in picks]
        if cfg.debug_validate:
            for ex in examples:
                validate_example(ex, cfg)
        batch = collate_examples(examples)
        gen = torch.Generator().manual_seed(int(rng.integers(2**63)))
        loss = fm_loss(model, batch, gen)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at step {step} (batch seed {cfg.seed}/{step})")
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        losses.append(value)
        if log_every and step % log_every == 0:
            logger.info("step %d loss %.5f", step, value)
        if callback is not None and callback(step, model, value):
            break
    model.eval()
    return TrainResult(model, losses, cfg)


def write_loss_trace(path, losses) -> None:
    lines = ["step\tloss"] + [f"{i}\t{v:.8g}" for i, v in enumerate(losses)]
    Path(path).write_text("\n".join(lines) + "\n")
