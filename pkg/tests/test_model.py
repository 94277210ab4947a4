import numpy as np
import pytest
import torch

from maskref.exceptions import ConfigurationError, ContractError
from maskref.model import (
    ModelBatch,
    ModelConfig,
    ToyDiT,
    fm_loss,
    load_checkpoint,
    positional_encoding,
    save_checkpoint,
    velocity_target,
)

from .helpers import tiny_batch, tiny_config, tiny_model


def _finite_difference_check(model, batch, t, eps, step=1e-6, per_tensor=6, seed=0):
    rng = np.random.default_rng(seed)
    model.zero_grad()
    fm_loss(model, batch, t=t, eps=eps).backward()
    worst = 0.0
    for name, p in model.named_parameters():
        analytic = p.grad.detach().clone().reshape(-1)
        picks = rng.choice(p.numel(), size=min(per_tensor, p.numel()), replace=False)
        numeric = torch.zeros(len(picks), dtype=p.dtype)
        flat = p.data.view(-1)
        with torch.no_grad():
            for j, idx in enumerate(picks):
                old = flat[idx].item()
                flat[idx] = old + step
                up = fm_loss(model, batch, t=t, eps=eps).item()
                flat[idx] = old - step
                down = fm_loss(model, batch, t=t, eps=eps).item()
                flat[idx] = old
                numeric[j] = (up - down) / (2 * step)
        a = analytic[picks]
        # floor: key biases have an exactly zero gradient (softmax shift invariance)
        scale = max(a.norm().item(), numeric.norm().item(), 1e-6)
        worst = max(worst, (a - numeric).norm().item() / scale)
        assert (a - numeric).norm().item() / scale < 1e-3, name
    return worst


def test_gradients_match_finite_differences():
    cfg = tiny_config()
    batch, _, _ = tiny_batch(cfg, n=2)
    model = tiny_model(cfg)
    g = torch.Generator().manual_seed(0)
    t = torch.tensor([0.3, 0.8], dtype=torch.float64)
    eps = torch.randn(batch.z0.shape, generator=g, dtype=torch.float64)
    assert _finite_difference_check(model, batch, t, eps) < 1e-3


def test_oracle_prediction_has_zero_loss():
    cfg = tiny_config()
    batch, _, _ = tiny_batch(cfg)
    g = torch.Generator().manual_seed(1)
    eps = torch.randn(batch.z0.shape, generator=g, dtype=torch.float64)
    loss = fm_loss(lambda b, z_t, t: velocity_target(b.z0, eps), batch, t=torch.tensor([0.2, 0.9]), eps=eps)
    assert loss.item() == 0.0


def test_output_shape_and_video_only_readout():
    cfg = tiny_config()
    batch, examples, _ = tiny_batch(cfg, n=2, dtype=torch.float32)
    model = ToyDiT(cfg.model)
    out = model.predict(batch, batch.z0, torch.tensor([0.5, 0.5]))
    assert out.shape == batch.z0.shape


def test_invalid_reference_tokens_do_not_leak():
    cfg = tiny_config()
    batch, _, _ = tiny_batch(cfg, n=2, seed=3)
    model = tiny_model(cfg)
    t = torch.tensor([0.4, 0.6], dtype=torch.float64)
    base = model.predict(batch, batch.z0, t)
    n_video = batch.video_frames * batch.context.shape[2] * batch.context.shape[3]
    invalid = ~batch.keep
    assert invalid[:, n_video:].any()
    context = batch.context.clone()
    flat = context.view(context.shape[0], -1, context.shape[-1])
    noise = torch.randn(flat.shape, dtype=flat.dtype) * 10
    flat[invalid] += noise[invalid]
    perturbed = ModelBatch(batch.z0, context, batch.text, batch.text_mask, batch.attn, batch.keep, batch.video_frames)
    out = model.predict(perturbed, batch.z0, t)
    assert torch.equal(out, base)


def test_reference_order_does_not_matter():
    cfg = tiny_config()
    batch, examples, _ = tiny_batch(cfg, n=1, seed=5)
    ex = examples[0]
    from maskref.conditioning import build_attention_mask

    model = tiny_model(cfg)
    t = torch.tensor([0.5], dtype=torch.float64)
    if len(ex.z_refs) < 2:
        ex.z_refs.append(ex.z_refs[0] * 0.5)
        ex.m_refs.append(np.ones_like(ex.m_refs[0]))
    h, w = ex.z0.shape[1:3]

    def run(order):
        z_refs = [ex.z_refs[i] for i in order]
        m_refs = [ex.m_refs[i] for i in order]
        from maskref.conditioning import assemble_input

        z_in = assemble_input(np.zeros_like(ex.z0), z_refs, m_refs, ex.z_zero)
        mask = build_attention_mask(ex.z0.shape[0], h, w, m_refs)
        b = ModelBatch.collate([(z_in, ex.text, mask, ex.z0)], dtype=torch.float64)
        return model.predict(b, b.z0, t)

    torch.testing.assert_close(run([0, 1]), run([1, 0]), atol=1e-10, rtol=0)


def test_positional_encoding_reference_slots_share_index():
    code = positional_encoding(4, 2, 2, 2, 24, torch.float64).reshape(4, 2, 2, 24)
    assert torch.equal(code[2], code[3])
    assert not torch.equal(code[0], code[1])


def test_model_rejects_wrong_input():
    cfg = tiny_config()
    batch, _, _ = tiny_batch(cfg, n=1, dtype=torch.float32)
    model = ToyDiT(ModelConfig(latent_dim=12, model_dim=16, heads=2, blocks=1))
    with pytest.raises(ContractError):
        model.predict(batch, batch.z0, torch.tensor([0.5]))
    with pytest.raises(ContractError):
        ModelConfig(model_dim=10, heads=3)


def test_fm_loss_requires_clean_latent():
    cfg = tiny_config()
    batch, _, _ = tiny_batch(cfg, n=1)
    batch.z0 = None
    with pytest.raises(ContractError):
        fm_loss(tiny_model(cfg), batch)


def test_checkpoint_round_trip(tmp_path):
    cfg = tiny_config()
    model = ToyDiT(cfg.model)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, {"note": 1})
    back, extra = load_checkpoint(path)
    assert extra == {"note": 1} and back.cfg == model.cfg
    for (n1, a), (n2, b) in zip(model.state_dict().items(), back.state_dict().items()):
        assert n1 == n2 and torch.equal(a, b)
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(ConfigurationError):
        load_checkpoint(tmp_path / "bad")
