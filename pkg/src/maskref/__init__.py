"""Reference-conditioned video diffusion trained on masked frames of its own videos."""

from .augment import AffineParams, AugmentConfig, MaskedReference, make_masked_reference
from .codec import CodecConfig, VideoLatent, decode_video, encode_text, encode_video, latent_frames
from .conditioning import AttentionMask, assemble_input, build_attention_mask, masked_attention
from .estimators import RandomMaskGenerator, ReferenceVideoModel
from .exceptions import ContractError, MaskRefError
from .inference import ReferenceInput, ReferenceMode, SamplerConfig, sample_video
from .mask_gen import BinaryMask, MaskSpec, RatioMixture, ShapeKind, generate_mask
from .model import ModelConfig, ToyDiT, fm_loss
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AffineParams",
    "AugmentConfig",
    "AttentionMask",
    "BinaryMask",
    "CodecConfig",
    "ContractError",
    "MaskRefError",
    "MaskSpec",
    "MaskedReference",
    "ModelConfig",
    "RandomMaskGenerator",
    "RatioMixture",
    "ReferenceInput",
    "ReferenceMode",
    "ReferenceVideoModel",
    "SamplerConfig",
    "ShapeKind",
    "ToyDiT",
    "TrainConfig",
    "VideoLatent",
    "assemble_input",
    "build_attention_mask",
    "decode_video",
    "encode_text",
    "encode_video",
    "fm_loss",
    "generate_mask",
    "latent_frames",
    "make_masked_reference",
    "masked_attention",
    "sample_video",
    "train",
]
