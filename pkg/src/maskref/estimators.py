"""scikit-learn style wrappers around the mask generator and the video model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .augment import AugmentConfig
from .codec import CodecConfig
from .data import SyntheticSample
from .exceptions import ContractError
from .inference import ReferenceInput, SamplerConfig, sample_video
from .mask_gen import ALL_KINDS, MaskSpec, RatioMixture, ShapeKind, generate_mask, sample_kind, sample_ratio
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train
from .validation import check_random_state, check_video

__all__ = ["RandomMaskGenerator", "ReferenceVideoModel", "parse_kinds"]


def parse_kinds(kinds) -> tuple[ShapeKind, ...]:
    if kinds is None or kinds == "all":
        return ALL_KINDS
    if isinstance(kinds, str):
        kinds = kinds.split(",")
    return tuple(ShapeKind.parse(k) for k in kinds)


class RandomMaskGenerator(BaseEstimator):
    """Draw exact-area random masks.

    Parameters
    ----------
    height, width : int
        Mask size in pixels.
    shape_kinds : "all", str or sequence of str
        Shape families sampled uniformly.
    ratio : float, optional
        Fixed foreground ratio; when ``None`` ratios come from ``mixture``.
    mixture : RatioMixture, optional
        Defaults to the 10/80/10 mixture over [0, 0.1], [0.1, 0.5], [0.5, 1].
    random_state : int, Generator or None
    """

    def __init__(self, height=64, width=64, shape_kinds="all", ratio=None, mixture=None, random_state=None):
        self.height = height
        self.width = width
        self.shape_kinds = shape_kinds
        self.ratio = ratio
        self.mixture = mixture
        self.random_state = random_state

    def sample_specs(self, n: int) -> list[MaskSpec]:
        rng = check_random_state(self.random_state)
        kinds = parse_kinds(self.shape_kinds)
        mixture = self.mixture or RatioMixture.default()
        specs = []
        for _ in range(n):
            kind = sample_kind(rng, kinds)
            ratio = self.ratio if self.ratio is not None else sample_ratio(mixture, rng)
            specs.append(MaskSpec(kind, self.height, self.width, ratio, seed=int(rng.integers(2**63))))
        return specs

    def sample(self, n: int = 1):
        """Return ``n`` masks paired with the specs that produced them."""
        return [(generate_mask(spec), spec) for spec in self.sample_specs(n)]


class ReferenceVideoModel(BaseEstimator):
    """Train on video-text pairs with masked-frame references, then sample videos.

    ``fit`` takes ``X`` as a sequence of ``F x H x W x 3`` videos in [-1, 1]
    (or :class:`~maskref.data.SyntheticSample` objects) and ``y`` as their
    captions.  All videos must share one shape.
    """

    def __init__(
        self,
        model_dim=128,
        blocks=4,
        heads=4,
        text_dim=32,
        spatial_patch=2,
        steps=500,
        lr=1e-4,
        batch_size=4,
        k_range=(0, 3),
        mask_types="all",
        fixed_ratio=None,
        augment=True,
        attn_mask=True,
        caption_dropout=0.1,
        random_state=0,
    ):
        self.model_dim = model_dim
        self.blocks = blocks
        self.heads = heads
        self.text_dim = text_dim
        self.spatial_patch = spatial_patch
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.k_range = k_range
        self.mask_types = mask_types
        self.fixed_ratio = fixed_ratio
        self.augment = augment
        self.attn_mask = attn_mask
        self.caption_dropout = caption_dropout
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        codec = CodecConfig(self.spatial_patch)
        model = ModelConfig(
            latent_dim=codec.latent_dim, text_dim=self.text_dim, model_dim=self.model_dim,
            blocks=self.blocks, heads=self.heads,
        )
        return TrainConfig(
            ref_count_range=tuple(self.k_range), lr=self.lr, batch_size=self.batch_size, steps=self.steps,
            seed=int(self.random_state or 0), mask_types=parse_kinds(self.mask_types),
            fixed_ratio=self.fixed_ratio, disable_augment=not self.augment,
            disable_attn_mask=not self.attn_mask, caption_dropout=self.caption_dropout,
            model=model, codec=codec, augment=AugmentConfig(),
        )

    def fit(self, X, y=None):
        samples = []
        for i, item in enumerate(X):
            if isinstance(item, SyntheticSample):
                samples.append(item)
                continue
            if y is None:
                raise ContractError("captions y are required when X holds raw videos")
            video = check_video(item, name=f"X[{i}]")
            samples.append(SyntheticSample(video, str(y[i]), None))
        if not samples:
            raise ContractError("X is empty")
        shapes = {s.video.shape for s in samples}
        if len(shapes) != 1:
            raise ContractError(f"all videos must share one shape, got {sorted(shapes)}")
        cfg = self._train_config()
        result = train(cfg, samples)
        self.model_ = result.model
        self.loss_curve_ = np.asarray(result.losses)
        self.video_shape_ = samples[0].video.shape[:3]
        self.codec_ = cfg.codec
        return self

    def generate(self, prompt: str, references=(), *, num_frames=None, steps=50, guidance_scale=5.0, seed=0):
        check_is_fitted(self, "model_")
        frames, height, width = self.video_shape_
        refs = [r if isinstance(r, ReferenceInput) else ReferenceInput(np.asarray(r)) for r in references]
        return sample_video(
            self.model_, refs, prompt, (num_frames or frames, height, width),
            SamplerConfig(steps, guidance_scale, seed), codec=self.codec_,
        )

    def predict(self, X):
        """Text-only generation for each prompt in ``X``."""
        return np.stack([self.generate(prompt, seed=i) for i, prompt in enumerate(X)])

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        extra = {
            "params": {k: list(v) if isinstance(v, tuple) else v for k, v in self.get_params().items()},
            "video_shape": list(self.video_shape_),
            "codec": {"spatial_patch": self.codec_.spatial_patch, "projection_seed": self.codec_.projection_seed},
        }
        save_checkpoint(path, self.model_, extra)

    @classmethod
    def load(cls, path) -> "ReferenceVideoModel":
        model, extra = load_checkpoint(path)
        params = {k: tuple(v) if isinstance(v, list) else v for k, v in extra.get("params", {}).items()}
        est = cls(**params)
        est.model_ = model
        est.video_shape_ = tuple(extra["video_shape"])
        est.codec_ = CodecConfig(**extra["codec"])
        est.loss_curve_ = np.zeros(0)
        return est
