"""Fast invariant checks runnable from an installed package (``maskref selftest``)."""

from __future__ import annotations

import time

import numpy as np
import torch

from .augment import AugmentConfig, make_masked_reference
from .codec import CodecConfig, VideoLatent, decode_video, encode_video, latent_frames
from .conditioning import assemble_input, build_attention_mask, masked_attention
from .inference import SamplerConfig, sample_video
from .mask_gen import ALL_KINDS, MaskSpec, RatioMixture, exact_target, generate_mask, sample_ratio

__all__ = ["run_selftest", "CHECKS"]


def check_masks(rng):
    mixture = RatioMixture.default()
    for kind in ALL_KINDS:
        for _ in range(10):
            ratio = sample_ratio(mixture, rng)
            mask = generate_mask(MaskSpec(kind, 32, 32, ratio, seed=int(rng.integers(2**32))))
            assert mask.foreground_count == exact_target(ratio, 32, 32), (kind, ratio)
            assert mask.foreground_count == 0 or mask.n_components() == 1


def check_augment(rng):
    config = AugmentConfig()
    for _ in range(20):
        ratio = rng.uniform(0.02, 0.3)
        mask = generate_mask(MaskSpec("ellipse", 32, 32, ratio, seed=int(rng.integers(2**32))))
        frame = rng.uniform(-1, 1, (32, 32, 3))
        ref = make_masked_reference(frame, mask, config, rng)
        assert set(np.unique(ref.mask.data)) <= {0, 1}
        assert not ref.masked_frame[ref.mask.data == 0].any()


def check_codec(rng):
    for frames in (1, 5, 9, 17, 81):
        assert latent_frames(frames) == (frames - 1) // 4 + 1
    video = rng.uniform(-1, 1, (5, 8, 8, 3))
    back = decode_video(encode_video(video), clamp=False)
    assert np.abs(back - video).max() < 1e-5


def check_layout(rng):
    z_t = rng.normal(size=(2, 3, 3, 4))
    refs = list(rng.normal(size=(2, 3, 3, 4)))
    masks = list(rng.integers(0, 2, (2, 3, 3, 4)).astype(float))
    z_zero = rng.normal(size=z_t.shape)
    z_in = assemble_input(z_t, refs, masks, z_zero)
    assert z_in.shape == (4, 3, 3, 12)
    assert np.array_equal(z_in.extract_video(), z_t)
    assert all(np.array_equal(a, b) for a, b in zip(z_in.extract_refs(), refs))


def check_attention(rng):
    m_refs = [np.repeat(rng.integers(0, 2, (2, 2, 1)), 4, axis=-1).astype(float)]
    mask = build_attention_mask(1, 2, 2, m_refs)
    n = mask.size
    q, k, v = (rng.normal(size=(n, 4)) for _ in range(3))
    out = masked_attention(q, k, v, mask)
    v2 = v.copy()
    v2[~mask.key_valid()] += 100.0
    assert np.allclose(out[: mask.video_tokens], masked_attention(q, k, v2, mask)[: mask.video_tokens])


def check_sampler(rng):
    codec = CodecConfig()
    video = rng.uniform(-0.9, 0.9, (5, 8, 8, 3))
    z0 = torch.as_tensor(encode_video(video, codec).data)[None]

    def oracle(batch, z_t, t):
        tb = t.view(-1, 1, 1, 1, 1)
        eps = (z_t - (1 - tb) * z0) / tb
        return z0 - eps

    for steps in (1, 10):
        out = sample_video(oracle, [], "", video.shape[:3], SamplerConfig(steps, 1.0, 0), codec=codec)
        assert np.abs(out - video).max() < 1e-5


CHECKS = {
    "masks": check_masks,
    "augment": check_augment,
    "codec": check_codec,
    "layout": check_layout,
    "attention": check_attention,
    "sampler": check_sampler,
}


def run_selftest(seed: int = 0, verbose: bool = False) -> bool:
    ok = True
    for name, check in CHECKS.items():
        start = time.perf_counter()
        try:
            check(np.random.default_rng(seed))
            status = "ok"
        except AssertionError as exc:
            ok = False
            status = f"FAIL {exc}"
        if verbose:
            print(f"{name:10s} {status} ({time.perf_counter() - start:.2f}s)")
    return ok
