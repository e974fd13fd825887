"""Command-line front end mirroring TrainingConfig."""

from __future__ import annotations

import argparse
import sys

from .config import TrainingConfig
from .training import DivergenceError, train


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpwgan-train",
                                description="Train a WGAN fingerprint generator "
                                            "and export .lvw weights")
    p.add_argument("--dataset", default=None,
                   help="image directory; omit for synthetic ridge textures")
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=5e-5)
    p.add_argument("--critic-steps", type=int, default=5)
    p.add_argument("--updates", type=int, default=120_000)
    p.add_argument("--latent-dim", type=int, default=100)
    p.add_argument("--crop-size", type=int, default=128)
    p.add_argument("--width", type=float, default=1.0,
                   help="channel multiplier for desk-scale runs")
    p.add_argument("--gradient-penalty", type=float, default=0.0,
                   help="> 0 replaces weight clipping with gradient penalty")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = TrainingConfig(
        dataset_dir=args.dataset, out_dir=args.out, batch_size=args.batch_size,
        learning_rate=args.learning_rate, critic_steps_per_gen=args.critic_steps,
        generator_updates=args.updates, latent_dim=args.latent_dim,
        crop_size=args.crop_size, width=args.width,
        gradient_penalty=args.gradient_penalty, seed=args.seed)

    def on_step(step, w, g_loss):
        if not args.quiet and (step % 100 == 0 or step == 1):
            print(f"step {step:6d}  W {w:+.4f}  G {g_loss:+.4f}", file=sys.stderr)

    try:
        train(cfg, on_step=on_step)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    print(f"done: weights at {cfg.out_path / 'generator.lvw'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
