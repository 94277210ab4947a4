"""A small velocity-prediction diffusion transformer.

Each block runs masked self-attention over video and reference tokens,
cross-attention from every token to the text features, and an FFN whose
input is modulated by a timestep embedding.  Reference tokens marked invalid
by the attention mask are zeroed at every block input, so nothing about them
reaches the video outputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .conditioning import MASK_CHANNELS, AssembledInput, AttentionMask, masked_attention
from .exceptions import ConfigurationError, ContractError

__all__ = [
    "ModelConfig",
    "ToyDiT",
    "ModelBatch",
    "ConditioningBundle",
    "fm_loss",
    "velocity_target",
    "predict_velocity",
    "save_checkpoint",
    "load_checkpoint",
]

REF_FRAME_INDEX = -1.0
CKPT_MAGIC = "TOYDIT-CKPT 1"


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 48
    text_dim: int = 32
    model_dim: int = 128
    blocks: int = 4
    heads: int = 4
    ffn_mult: int = 4
    time_freqs: int = 32

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ContractError(f"model_dim={self.model_dim} not divisible by heads={self.heads}")

    @property
    def in_channels(self) -> int:
        return 2 * self.latent_dim + MASK_CHANNELS

    @property
    def out_channels(self) -> int:
        return self.latent_dim


@dataclass(frozen=True)
class ConditioningBundle:
    text: np.ndarray
    timestep: float
    refs: tuple = ()

    def __post_init__(self):
        if not 0.0 <= self.timestep <= 1.0:
            raise ContractError(f"timestep {self.timestep} outside [0, 1]")


@dataclass
class ModelBatch:
    """Batched, padded model inputs.

    ``context`` is the assembled input with the noised-latent channels of the
    video slots left at zero; :func:`fm_loss` and the sampler write ``z_t``
    there.
    """

    z0: torch.Tensor | None
    context: torch.Tensor
    text: torch.Tensor
    text_mask: torch.Tensor
    attn: torch.Tensor
    keep: torch.Tensor
    video_frames: int
    meta: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.context.shape[0]

    @property
    def latent_dim(self) -> int:
        return (self.context.shape[-1] - MASK_CHANNELS) // 2

    def with_latent(self, z_t: torch.Tensor) -> torch.Tensor:
        d = self.latent_dim
        video = torch.cat([z_t, self.context[:, : self.video_frames, ..., d:]], dim=-1)
        return torch.cat([video, self.context[:, self.video_frames :]], dim=1)

    def to(self, dtype) -> "ModelBatch":
        conv = lambda x: None if x is None else x.to(dtype)  # noqa: E731
        return ModelBatch(
            conv(self.z0), conv(self.context), conv(self.text), self.text_mask, self.attn,
            self.keep, self.video_frames, self.meta,
        )

    @classmethod
    def collate(cls, items, dtype=torch.float32) -> "ModelBatch":
        """Stack ``(z_in, text, mask, z0)`` tuples, padding references and text.

        Padded reference tokens are invalid: they attend only to themselves
        and are never keys.
        """
        frames = {z.video_frames for z, _, _, _ in items}
        if len(frames) != 1:
            raise ContractError(f"mixed video lengths in one batch: {sorted(frames)}")
        video_frames = frames.pop()
        _, h, w, channels = items[0][0].data.shape
        max_refs = max(z.ref_frames for z, _, _, _ in items)
        max_text = max(np.asarray(txt).shape[0] for _, txt, _, _ in items)
        slots = video_frames + max_refs
        n = slots * h * w
        context = np.zeros((len(items), slots, h, w, channels))
        text_dim = np.asarray(items[0][1]).shape[1]
        text = np.zeros((len(items), max_text, text_dim))
        text_mask = np.zeros((len(items), max_text), dtype=bool)
        attn = np.zeros((len(items), n, n), dtype=bool)
        keep = np.zeros((len(items), n), dtype=bool)
        z0 = None if items[0][3] is None else np.zeros((len(items), video_frames, h, w, items[0][3].shape[-1]))
        for i, (z_in, txt, mask, latent) in enumerate(items):
            if mask.video_tokens != video_frames * h * w or mask.ref_tokens != z_in.ref_frames * h * w:
                raise ContractError("attention mask does not match the assembled input")
            context[i, : z_in.data.shape[0]] = z_in.data
            context[i, :video_frames, ..., : z_in.latent_dim] = 0.0
            txt = np.asarray(txt)
            text[i, : txt.shape[0]] = txt
            text_mask[i, : txt.shape[0]] = True
            size = mask.size
            attn[i, :size, :size] = mask.dense()
            attn[i, np.arange(size, n), np.arange(size, n)] = True
            keep[i, :size] = True if mask.rule == "permissive" else mask.key_valid()
            if z0 is not None:
                z0[i] = latent
        as_t = lambda a: torch.as_tensor(a, dtype=dtype)  # noqa: E731
        return cls(
            None if z0 is None else as_t(z0), as_t(context), as_t(text),
            torch.as_tensor(text_mask), torch.as_tensor(attn), torch.as_tensor(keep), video_frames,
        )


def _sinusoid(positions: torch.Tensor, dim: int, base: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(base) * torch.arange(half, dtype=positions.dtype) / max(half, 1))
    angles = positions[..., None] * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


def positional_encoding(slots: int, video_frames: int, h: int, w: int, dim: int, dtype=torch.float32):
    """3-D sinusoidal (frame, row, col) code; every reference slot shares one frame index."""
    axis = (dim // 3) // 2 * 2
    frame_idx = torch.arange(slots, dtype=dtype)
    frame_idx[video_frames:] = REF_FRAME_INDEX
    f, r, c = torch.meshgrid(frame_idx, torch.arange(h, dtype=dtype), torch.arange(w, dtype=dtype), indexing="ij")
    code = torch.cat([_sinusoid(f, axis), _sinusoid(r, axis), _sinusoid(c, axis)], dim=-1)
    pad = dim - code.shape[-1]
    if pad:
        code = torch.cat([code, torch.zeros(code.shape[:-1] + (pad,), dtype=dtype)], dim=-1)
    return code.reshape(-1, dim)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int, kv_dim: int | None = None):
        super().__init__()
        kv_dim = kv_dim or dim
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(kv_dim, dim)
        self.v = nn.Linear(kv_dim, dim)
        self.out = nn.Linear(dim, dim)

    def _split(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.heads, -1).transpose(1, 2)

    def forward(self, x, context, admit):
        q, k, v = self._split(self.q(x)), self._split(self.k(context)), self._split(self.v(context))
        y = masked_attention(q, k, v, admit[:, None])
        b, _, n, _ = y.shape
        return self.out(y.transpose(1, 2).reshape(b, n, -1))


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        dim = cfg.model_dim
        self.norm_self = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, cfg.heads)
        self.norm_cross = nn.LayerNorm(dim)
        self.cross_attn = Attention(dim, cfg.heads, cfg.text_dim)
        self.norm_ffn = nn.LayerNorm(dim, elementwise_affine=False)
        self.modulation = nn.Linear(dim, 2 * dim)
        self.ffn = nn.Sequential(nn.Linear(dim, cfg.ffn_mult * dim), nn.GELU(), nn.Linear(cfg.ffn_mult * dim, dim))

    def forward(self, x, keep, attn, text, text_admit, temb):
        x = x * keep[..., None]
        h = self.norm_self(x)
        x = x + self.self_attn(h, h, attn)
        x = x + self.cross_attn(self.norm_cross(x), text, text_admit)
        scale, shift = self.modulation(temb)[:, None].chunk(2, dim=-1)
        return x + self.ffn(self.norm_ffn(x) * (1 + scale) + shift)


class ToyDiT(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        dim = cfg.model_dim
        self.embed = nn.Linear(cfg.in_channels, dim)
        self.time_mlp = nn.Sequential(nn.Linear(2 * cfg.time_freqs, dim), nn.SiLU(), nn.Linear(dim, dim))
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.blocks))
        self.norm_out = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, cfg.out_channels)

    def forward(self, z_in, text, text_mask, t, attn, keep, video_frames: int):
        """``z_in``: (B, S, h, w, C).  Returns velocities of shape (B, F^, h, w, d)."""
        b, slots, h, w, channels = z_in.shape
        if channels != self.cfg.in_channels:
            raise ContractError(f"input has {channels} channels, model expects {self.cfg.in_channels}")
        n = slots * h * w
        if attn.shape != (b, n, n) or keep.shape != (b, n):
            raise ContractError("attention mask shape does not match the token count")
        if text.shape[-1] != self.cfg.text_dim:
            raise ContractError(f"text dim {text.shape[-1]} != {self.cfg.text_dim}")
        keep = keep.to(z_in.dtype)
        x = self.embed(z_in.reshape(b, n, channels))
        x = x + positional_encoding(slots, video_frames, h, w, self.cfg.model_dim, z_in.dtype)
        t = torch.as_tensor(t, dtype=z_in.dtype).reshape(b)
        temb = self.time_mlp(_sinusoid(t * 1000.0, 2 * self.cfg.time_freqs))
        text_admit = text_mask[:, None, :].expand(b, n, text_mask.shape[-1])
        for block in self.blocks:
            x = block(x, keep, attn, text, text_admit, temb)
        n_video = video_frames * h * w
        out = self.head(self.norm_out(x[:, :n_video]))
        return out.reshape(b, video_frames, h, w, self.cfg.out_channels)

    def predict(self, batch: ModelBatch, z_t, t, text=None, text_mask=None):
        return self(
            batch.with_latent(z_t),
            batch.text if text is None else text,
            batch.text_mask if text_mask is None else text_mask,
            t, batch.attn, batch.keep, batch.video_frames,
        )


def predict_velocity(model: ToyDiT, z_in: AssembledInput, cond: ConditioningBundle, mask: AttentionMask):
    """Single-example forward on an already assembled input; returns a numpy array."""
    batch = ModelBatch.collate([(z_in, cond.text, mask, None)], dtype=next(model.parameters()).dtype)
    d = z_in.latent_dim
    z_t = torch.as_tensor(z_in.extract_video(), dtype=batch.context.dtype)[None]
    with torch.no_grad():
        out = model(batch.with_latent(z_t), batch.text, batch.text_mask,
                    torch.tensor([cond.timestep]), batch.attn, batch.keep, batch.video_frames)
    assert out.shape[-1] == d
    return out[0].numpy()


def velocity_target(z0, eps):
    """Regression target of the flow-matching loss: ``z0 - eps``."""
    return z0 - eps


def fm_loss(model, batch: ModelBatch, generator: torch.Generator | None = None, *, t=None, eps=None):
    """Mean squared error between the predicted and the target velocity.

    ``t`` defaults to ``U[0, 1]`` per example and ``eps`` to standard normal
    noise, both drawn from ``generator``.  ``model`` is any callable with the
    :meth:`ToyDiT.predict` signature ``(batch, z_t, t)``.
    """
    z0 = batch.z0
    if z0 is None:
        raise ContractError("batch carries no clean latent")
    if t is None:
        t = torch.rand(batch.size, generator=generator, dtype=z0.dtype)
    t = torch.as_tensor(t, dtype=z0.dtype).reshape(batch.size)
    if eps is None:
        eps = torch.randn(z0.shape, generator=generator, dtype=z0.dtype)
    tb = t.view(-1, 1, 1, 1, 1)
    z_t = (1 - tb) * z0 + tb * eps
    predict = model.predict if isinstance(model, ToyDiT) else model
    pred = predict(batch, z_t, t)
    return ((velocity_target(z0, eps) - pred) ** 2).mean()


def save_checkpoint(path, model: ToyDiT, extra: dict | None = None) -> None:
    """Text header (config + tensor names/shapes) then a little-endian float32 blob."""
    state = model.state_dict()
    lines = [CKPT_MAGIC, "config " + json.dumps(asdict(model.cfg), sort_keys=True)]
    lines.append("extra " + json.dumps(extra or {}, sort_keys=True))
    for name, tensor in state.items():
        lines.append(f"tensor {name} {' '.join(map(str, tensor.shape)) or '-'}")
    lines.append("end")
    blob = b"".join(t.detach().cpu().numpy().astype("<f4").tobytes() for t in state.values())
    Path(path).write_bytes(("\n".join(lines) + "\n").encode() + blob)


def load_checkpoint(path) -> tuple[ToyDiT, dict]:
    raw = Path(path).read_bytes()
    marker = b"\nend\n"
    cut = raw.find(marker)
    if not raw.startswith(CKPT_MAGIC.encode()) or cut < 0:
        raise ConfigurationError(f"{path} is not a model checkpoint")
    header = raw[:cut].decode().splitlines()
    blob = raw[cut + len(marker):]
    cfg = ModelConfig(**json.loads(header[1].removeprefix("config ")))
    extra = json.loads(header[2].removeprefix("extra "))
    model = ToyDiT(cfg)
    state = {}
    offset = 0
    for line in header[3:]:
        _, name, dims = line.split(" ", 2)
        shape = () if dims == "-" else tuple(int(x) for x in dims.split())
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        state[name] = torch.from_numpy(arr.astype(np.float32))
        offset += 4 * count
    if offset != len(blob):
        raise ConfigurationError(f"{path}: parameter blob has {len(blob) - offset} trailing bytes")
    model.load_state_dict(state)
    return model, extra
