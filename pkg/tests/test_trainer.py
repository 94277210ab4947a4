import numpy as np
import pytest
import torch

from maskref.conditioning import MASK_CHANNELS
from maskref.data import synth_dataset
from maskref.exceptions import ContractError, TrainingError
from maskref.mask_gen import exact_target
from maskref.trainer import (
    TrainConfig,
    build_training_example,
    collate_examples,
    train,
    validate_example,
    write_loss_trace,
)

from .helpers import tiny_config, with_overrides


def test_example_structure(rng):
    cfg = with_overrides(tiny_config(), ref_count_range=(3, 3), debug_validate=True)
    sample = synth_dataset(1, 5, 8, 8, seed=0)[0]
    ex = build_training_example(sample, cfg, rng)
    validate_example(ex, cfg)
    z_in = ex.assembled()
    assert z_in.shape == (2 + 3, 4, 4, 2 * 48 + MASK_CHANNELS)
    assert ex.caption == sample.caption
    assert len(ex.frame_indices) == 3 and all(0 <= i < 5 for i in ex.frame_indices)
    for mask, ratio in zip(ex.masks, ex.ratios):
        assert mask.foreground_count == exact_target(ratio, 8, 8)
    valid_tokens = sum(int(m[..., 0].sum()) for m in ex.m_refs)
    assert int(ex.attn_mask.valid.sum()) == valid_tokens


def test_zero_references(rng):
    cfg = with_overrides(tiny_config(), ref_count_range=(0, 0))
    ex = build_training_example(synth_dataset(1, 5, 8, 8)[0], cfg, rng)
    assert ex.assembled().ref_frames == 0 and ex.attn_mask.ref_tokens == 0


def test_caption_dropout_always(rng):
    cfg = with_overrides(tiny_config(), caption_dropout=1.0)
    ex = build_training_example(synth_dataset(1, 5, 8, 8)[0], cfg, rng)
    assert ex.caption == ""


def test_ablation_configs(rng):
    sample = synth_dataset(1, 5, 8, 8)[0]
    cfg = with_overrides(tiny_config(), ref_count_range=(2, 2), mask_types=("ellipse",), fixed_ratio=0.3,
                         disable_augment=True, disable_attn_mask=True)
    ex = build_training_example(sample, cfg, rng)
    assert {k.value for k in ex.kinds} == {"ellipse"}
    assert ex.ratios == [0.3, 0.3]
    assert all(r.params.is_identity for r in ex.references)
    assert ex.attn_mask.rule == "permissive" and ex.attn_mask.dense().all()


def test_collate_pads_references(rng):
    cfg = tiny_config()
    samples = synth_dataset(2, 5, 8, 8)
    a = build_training_example(samples[0], with_overrides(cfg, ref_count_range=(0, 0)), rng)
    b = build_training_example(samples[1], with_overrides(cfg, ref_count_range=(2, 2)), rng)
    batch = collate_examples([a, b])
    assert batch.context.shape[:2] == (2, 4)
    n = batch.attn.shape[-1]
    pad = torch.arange(32, n)
    assert not batch.keep[0, 32:].any()
    assert batch.attn[0, pad, pad].all() and batch.attn[0, pad].sum() == len(pad)
    assert not batch.context[:, :2, ..., :48].any()


def test_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(ref_count_range=(3, 1))
    with pytest.raises(ContractError):
        TrainConfig(fixed_ratio=2.0)
    with pytest.raises(ContractError):
        TrainConfig(mask_types=())
    with pytest.raises(ContractError):
        train(TrainConfig(), [])


def test_training_is_reproducible():
    cfg = with_overrides(tiny_config(), steps=4, batch_size=2, lr=1e-3)
    data = synth_dataset(3, 5, 8, 8)
    a = train(cfg, data)
    b = train(cfg, data)
    assert a.losses == b.losses and len(a.losses) == 4


def test_callback_stops_early():
    cfg = with_overrides(tiny_config(), steps=10, batch_size=1)
    result = train(cfg, synth_dataset(1, 5, 8, 8), callback=lambda step, model, loss: step == 2)
    assert len(result.losses) == 3


def test_non_finite_loss_raises():
    cfg = with_overrides(tiny_config(), steps=2, batch_size=1)
    from maskref.model import ToyDiT

    model = ToyDiT(cfg.model)
    with torch.no_grad():
        model.head.bias.fill_(float("nan"))
    with pytest.raises(TrainingError):
        train(cfg, synth_dataset(1, 5, 8, 8), model=model)


def test_loss_trace(tmp_path):
    write_loss_trace(tmp_path / "loss.tsv", [1.5, 0.25])
    assert (tmp_path / "loss.tsv").read_text().splitlines() == ["step\tloss", "0\t1.5", "1\t0.25"]


def test_zero_learning_rate_leaves_weights_unchanged():
    cfg = with_overrides(tiny_config(), steps=3, batch_size=1, lr=0.0)
    from maskref.model import ToyDiT

    torch.manual_seed(0)
    model = ToyDiT(cfg.model)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    train(cfg, synth_dataset(1, 5, 8, 8), model=model)
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())
