import dataclasses

import numpy as np
import torch

from maskref.codec import CodecConfig, encode_video
from maskref.data import synth_dataset
from maskref.model import ModelConfig, ToyDiT
from maskref.trainer import TrainConfig, build_training_example, collate_examples


def tiny_config(**model_kw) -> TrainConfig:
    codec = CodecConfig(2)
    model = ModelConfig(latent_dim=codec.latent_dim, **({"model_dim": 16, "blocks": 2, "heads": 2} | model_kw))
    return TrainConfig(codec=codec, model=model, caption_dropout=0.0, ref_count_range=(1, 2))


def tiny_batch(cfg: TrainConfig, n=2, seed=0, frames=5, size=8, dtype=torch.float64):
    samples = synth_dataset(n, frames, size, size, seed=seed)
    rng = np.random.default_rng(seed)
    examples = [build_training_example(s, cfg, rng) for s in samples]
    return collate_examples(examples, dtype=dtype), examples, samples


def tiny_model(cfg: TrainConfig, seed=0, dtype=torch.float64) -> ToyDiT:
    torch.manual_seed(seed)
    return ToyDiT(cfg.model).to(dtype)


def oracle_velocity(z0):
    """Exact velocity for a known clean latent: recover eps from z_t and return z0 - eps."""
    z0 = torch.as_tensor(z0)

    def model(batch, z_t, t):
        tb = torch.as_tensor(t, dtype=z_t.dtype).view(-1, 1, 1, 1, 1)
        target = z0.to(z_t.dtype).expand_as(z_t)
        eps = (z_t - (1 - tb) * target) / tb
        return target - eps

    return model


def clean_latent(video, codec=CodecConfig()):
    return torch.as_tensor(encode_video(video, codec).data)[None]


def with_overrides(cfg, **kw):
    return dataclasses.replace(cfg, **kw)
