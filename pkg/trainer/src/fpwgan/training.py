"""WGAN training loop: RMSProp at 5e-5, batch 64, five critic steps per
generator update, weight clipping at 0.01 (gradient penalty available as a
config switch). Metrics land in a CSV, checkpoints every 1000 generator
updates, and a non-finite loss aborts with the last checkpoint intact.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import autograd

from .config import TrainingConfig
from .data import prepare_dataset
from .export import export_weights
from .models import Critic, Generator


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; the last checkpoint survives."""


@dataclass
class TrainingMetrics:
    steps: list[int]
    critic_w: list[float]       # Wasserstein estimate per generator update
    gen_loss: list[float]
    wall_time: list[float]

    def rows(self):
        return zip(self.steps, self.critic_w, self.gen_loss, self.wall_time)


def _critic_loss(critic: Critic, real: torch.Tensor, fake: torch.Tensor,
                 gp_weight: float):
    d_real = critic(real).mean()
    d_fake = critic(fake).mean()
    w_estimate = d_real - d_fake
    loss = -w_estimate
    if gp_weight > 0:
        eps = torch.rand(real.size(0), 1, 1, 1, device=real.device)
        mixed = (eps * real + (1 - eps) * fake).requires_grad_(True)
        grad = autograd.grad(critic(mixed).sum(), mixed, create_graph=True)[0]
        penalty = ((grad.flatten(1).norm(2, dim=1) - 1.0) ** 2).mean()
        loss = loss + gp_weight * penalty
    return loss, float(w_estimate.detach())


def save_checkpoint(path: Path, step: int, g: Generator, c: Critic,
                    opt_g, opt_c) -> None:
    torch.save({"step": step, "generator": g.state_dict(),
                "critic": c.state_dict(), "opt_g": opt_g.state_dict(),
                "opt_c": opt_c.state_dict()}, path)


def train(cfg: TrainingConfig, on_step=None) -> tuple[Generator, TrainingMetrics]:
    """Run the adversarial schedule and export the final generator.

    Writes out_dir/{generator.lvw, metrics.csv, checkpoint.pt}. Returns the
    trained generator (eval mode) and the recorded metrics.
    """
    torch.manual_seed(cfg.seed)
    out = cfg.out_path
    out.mkdir(parents=True, exist_ok=True)

    dataset = prepare_dataset(cfg.dataset_dir, cfg.crop_size, cfg.seed,
                              cfg.synthetic_images)
    batches = dataset.batches(cfg.batch_size, seed=cfg.seed + 1)

    g = Generator(cfg.latent_dim, cfg.crop_size, cfg.width)
    c = Critic(cfg.crop_size, cfg.width, clip_value=cfg.clip_value)
    opt_g = torch.optim.RMSprop(g.parameters(), lr=cfg.learning_rate)
    opt_c = torch.optim.RMSprop(c.parameters(), lr=cfg.learning_rate)

    metrics = TrainingMetrics([], [], [], [])
    ckpt = out / "checkpoint.pt"
    t0 = time.time()
    for step in range(1, cfg.generator_updates + 1):
        w_last = 0.0
        for _ in range(cfg.critic_steps_per_gen):
            real = next(batches)
            z = torch.randn(cfg.batch_size, cfg.latent_dim)
            with torch.no_grad():
                fake = g(z)
            loss_c, w_last = _critic_loss(c, real, fake, cfg.gradient_penalty)
            opt_c.zero_grad(set_to_none=True)
            loss_c.backward()
            opt_c.step()
            if cfg.gradient_penalty == 0:
                with torch.no_grad():
                    for p in c.parameters():
                        p.clamp_(-cfg.clip_value, cfg.clip_value)

        z = torch.randn(cfg.batch_size, cfg.latent_dim)
        loss_g = -c(g(z)).mean()
        opt_g.zero_grad(set_to_none=True)
        loss_g.backward()
        opt_g.step()

        if not (torch.isfinite(loss_g) and abs(w_last) < float("inf")):
            raise DivergenceError(f"non-finite loss at step {step}; "
                                  f"last checkpoint: {ckpt}")
        metrics.steps.append(step)
        metrics.critic_w.append(w_last)
        metrics.gen_loss.append(float(loss_g.detach()))
        metrics.wall_time.append(time.time() - t0)
        if on_step is not None:
            on_step(step, w_last, float(loss_g.detach()))
        if step % cfg.checkpoint_every == 0 or step == cfg.generator_updates:
            save_checkpoint(ckpt, step, g, c, opt_g, opt_c)

    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "critic_wasserstein", "generator_loss", "wall_time"])
        writer.writerows(metrics.rows())

    g.eval()
    export_weights(g, out / "generator.lvw")
    return g, metrics
