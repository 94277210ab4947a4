"""Command-line entry point: ``maskref <command> [flags]``.

Exit status is 0 on success, 1 on usage errors and 2 on runtime errors.
Every command that writes files also writes ``run_config.txt`` (the
effective arguments) into its output directory.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import MaskRefError

logger = logging.getLogger("maskref")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage().strip()}")


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        h, w = int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def _unit_interval(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{value} outside [0, 1]")
    return value


def _k_range(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(",")
    return int(lo), int(hi or lo)


def _echo_config(out_dir: Path, args) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"command {args.command}", f"version {__version__}"]
    lines += [f"{k} {v}" for k, v in sorted(vars(args).items()) if k not in ("command", "func")]
    (out_dir / "run_config.txt").write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# commands


def cmd_maskgen(args) -> int:
    from .data import save_image
    from .mask_gen import ALL_KINDS, MaskSpec, RatioMixture, ShapeKind, generate_mask, sample_kind, sample_ratio

    out = Path(args.out)
    _echo_config(out, args)
    rng = np.random.default_rng(args.seed)
    kinds = ALL_KINDS if args.shape == "all" else (ShapeKind.parse(args.shape),)
    mixture = RatioMixture.default()
    height, width = args.size
    manifest = ["index\tkind\tratio\tcount\tseed"]
    for i in range(args.count):
        kind = sample_kind(rng, kinds)
        ratio = args.ratio if args.ratio is not None else sample_ratio(mixture, rng)
        spec = MaskSpec(kind, height, width, ratio, seed=int(rng.integers(2**63)))
        mask = generate_mask(spec)
        save_image(out / f"mask_{i:05d}.png", (mask.data * 255).astype(np.uint8))
        manifest.append(f"{i}\t{kind.value}\t{ratio:.6f}\t{mask.foreground_count}\t{spec.seed}")
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n")
    print(f"wrote {args.count} masks to {out}")
    return 0


def cmd_augment(args) -> int:
    from .augment import AugmentConfig, make_masked_reference
    from .data import load_image, save_image
    from .mask_gen import BinaryMask

    out = Path(args.out)
    _echo_config(out, args)
    image = load_image(args.image)
    mask = BinaryMask(load_image(args.mask)[..., 0] > 0)
    config = AugmentConfig.disabled() if args.no_aug else AugmentConfig()
    ref = make_masked_reference(image, mask, config, np.random.default_rng(args.seed))
    save_image(out / "image.png", ref.image)
    save_image(out / "mask.png", (ref.mask.data * 255).astype(np.uint8))
    save_image(out / "masked.png", ref.masked_frame)
    (out / "params.txt").write_text(f"{ref.params}\n")
    print(ref.params)
    return 0


def cmd_synth_data(args) -> int:
    from .data import save_dataset, synth_dataset

    out = Path(args.out)
    _echo_config(out, args)
    height, width = args.size
    samples = synth_dataset(args.count, args.frames, height, width, seed=args.seed)
    save_dataset(out, samples)
    print(f"wrote {len(samples)} videos to {out}")
    return 0


def _dataset(args):
    from .data import load_dataset, synth_dataset

    if args.data:
        return load_dataset(args.data)
    height, width = args.size
    return synth_dataset(args.synth_count, args.frames, height, width, seed=args.seed)


def cmd_inspect_input(args) -> int:
    from .codec import CodecConfig
    from .model import ModelConfig
    from .trainer import TrainConfig, build_training_example

    samples = _dataset(args)
    sample = samples[args.index % len(samples)]
    codec = CodecConfig(args.patch)
    cfg = TrainConfig(
        ref_count_range=(args.k, args.k), codec=codec, caption_dropout=0.0,
        model=ModelConfig(latent_dim=codec.latent_dim), disable_attn_mask=args.no_attn_mask,
    )
    example = build_training_example(sample, cfg, np.random.default_rng(args.seed))
    z_in = example.assembled()
    d = z_in.latent_dim
    lines = [
        f"caption: {example.caption}",
        f"assembled input: {' x '.join(map(str, z_in.shape))} (slots x h x w x channels)",
        f"video slots: 0..{z_in.video_frames - 1}, reference slots: "
        + (f"{z_in.video_frames}..{z_in.video_frames + z_in.ref_frames - 1}" if z_in.ref_frames else "none"),
        f"channels [0, {d}): noised latent (video) / reference latent",
        f"channels [{d}, {d + 4}): zero mask (video) / reference mask",
        f"channels [{d + 4}, {2 * d + 4}): zero-video latent (video) / reference latent",
    ]
    for k, (mask, ratio, kind) in enumerate(zip(example.masks, example.ratios, example.kinds)):
        lines.append(f"reference {k}: frame {example.frame_indices[k]}, {kind.value}, ratio {ratio:.4f}, "
                     f"{mask.foreground_count} px, {int(example.m_refs[k][..., 0].sum())} valid latent cells")
    mask = example.attn_mask
    lines.append(f"attention: {mask.video_tokens} video tokens, {mask.ref_tokens} reference tokens, "
                 f"rule {mask.rule}")
    for rule, count in mask.rule_counts().items():
        lines.append(f"  {rule}: {count}")
    print("\n".join(lines))
    return 0


def cmd_train(args) -> int:
    from .augment import AugmentConfig
    from .codec import CodecConfig
    from .estimators import parse_kinds
    from .model import ModelConfig, save_checkpoint
    from .trainer import TrainConfig, train, write_loss_trace

    import torch

    torch.manual_seed(args.seed)
    ckpt = Path(args.out)
    out_dir = ckpt.parent
    _echo_config(out_dir, args)
    codec = CodecConfig(args.patch)
    cfg = TrainConfig(
        ref_count_range=args.k_range, lr=args.lr, batch_size=args.batch, steps=args.steps, seed=args.seed,
        mask_types=parse_kinds(args.mask_types), fixed_ratio=args.fixed_ratio, disable_augment=args.no_aug,
        disable_attn_mask=args.no_attn_mask, augment=AugmentConfig(), codec=codec,
        model=ModelConfig(latent_dim=codec.latent_dim, model_dim=args.model_dim, blocks=args.blocks,
                          heads=args.heads),
        debug_validate=args.debug,
    )
    samples = _dataset(args)
    result = train(cfg, samples, log_every=args.log_every)
    frames, height, width = samples[0].video.shape[:3]
    extra = {
        "codec": {"spatial_patch": codec.spatial_patch, "projection_seed": codec.projection_seed},
        "video_shape": [frames, height, width],
        "vocab_seed": cfg.vocab_seed,
    }
    save_checkpoint(ckpt, result.model, extra)
    write_loss_trace(out_dir / "loss.tsv", result.losses)
    print(f"trained {args.steps} steps; final loss {result.losses[-1] if result.losses else float('nan'):.5f}")
    return 0


def _parse_ref(spec: str):
    from .data import load_image
    from .inference import ReferenceInput, ReferenceMode
    from .mask_gen import BinaryMask

    parts = spec.split(":")
    mode = ReferenceMode.SUBJECT
    if parts[-1] == "bg":
        mode = ReferenceMode.BACKGROUND_SCENE
        parts = parts[:-1]
    if not 1 <= len(parts) <= 2:
        raise UsageError(f"--ref expects IMG[:MASK][:bg], got {spec!r}")
    image = load_image(parts[0])
    mask = BinaryMask(load_image(parts[1])[..., 0] > 0) if len(parts) == 2 else None
    return ReferenceInput(image, mode, mask)


def cmd_generate(args) -> int:
    from .codec import CodecConfig
    from .data import make_grid, save_image, save_video
    from .inference import SamplerConfig, sample_video
    from .model import load_checkpoint

    refs = [_parse_ref(r) for r in args.ref]
    model, extra = load_checkpoint(args.ckpt)
    codec = CodecConfig(**extra.get("codec", {}))
    out = Path(args.out)
    _echo_config(out, args)
    default_shape = extra.get("video_shape", [5, 16, 16])
    frames = args.frames or default_shape[0]
    height, width = args.size or tuple(default_shape[1:])
    video = sample_video(
        model, refs, args.prompt, (frames, height, width), SamplerConfig(args.steps, args.cfg, args.seed),
        codec=codec, vocab_seed=extra.get("vocab_seed", 0),
    )
    save_video(out, video, args.prompt)
    save_image(out / "grid.png", make_grid(list(video), cols=len(video)))
    print(f"wrote {len(video)} frames to {out}")
    return 0


def cmd_grid(args) -> int:
    from .data import load_image, make_grid, save_image

    images = []
    for directory in args.inputs:
        images.extend(load_image(p) for p in sorted(Path(directory).glob("*.png")) if p.name != "grid.png")
    if not images:
        raise UsageError("no .png frames found in the given directories")
    out = Path(args.out)
    _echo_config(out.parent, args)
    save_image(out, make_grid(images, cols=args.cols))
    print(f"wrote {out}")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest(verbose=True) else 2


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="maskref", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("maskgen", help="write random exact-area masks")
    p.add_argument("--shape", choices=["ellipse", "fourier", "convex", "concave", "all"], default="all")
    p.add_argument("--size", type=_size, default=(64, 64))
    group = p.add_mutually_exclusive_group()
    group.add_argument("--ratio", type=_unit_interval)
    group.add_argument("--mixture", choices=["default"], default="default")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_maskgen)

    p = sub.add_parser("augment", help="augment one image/mask pair")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--no-aug", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("synth-data", help="write a synthetic moving-shapes dataset")
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--size", type=_size, default=(16, 16))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    def data_flags(p):
        p.add_argument("--data", help="dataset directory (default: synthesize in memory)")
        p.add_argument("--synth-count", type=int, default=8)
        p.add_argument("--frames", type=int, default=5)
        p.add_argument("--size", type=_size, default=(16, 16))
        p.add_argument("--patch", type=int, default=2)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("inspect-input", help="print the assembled input layout for one example")
    data_flags(p)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--no-attn-mask", action="store_true")
    p.set_defaults(func=cmd_inspect_input)

    p = sub.add_parser("train", help="train the toy model with masked references")
    data_flags(p)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--k-range", type=_k_range, default=(0, 3))
    p.add_argument("--mask-types", default="all")
    p.add_argument("--fixed-ratio", type=_unit_interval)
    p.add_argument("--no-aug", action="store_true")
    p.add_argument("--no-attn-mask", action="store_true")
    p.add_argument("--model-dim", type=int, default=128)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--debug", action="store_true", help="validate every training example")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample a video from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--prompt", default="")
    p.add_argument("--ref", action="append", default=[], help="IMG[:MASK][:bg]")
    p.add_argument("--frames", type=int)
    p.add_argument("--size", type=_size)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--cfg", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("grid", help="tile frame directories into a contact sheet")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--cols", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("selftest", help="run the built-in invariant checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (MaskRefError, OSError, ValueError) as exc:
        print(f"maskref: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
