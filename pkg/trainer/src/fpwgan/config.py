"""Training configuration with the canonical adversarial schedule."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path


@dataclass
class TrainingConfig:
    dataset_dir: str | None = None      # None: synthetic ridge textures
    out_dir: str = "wgan_out"
    batch_size: int = 64
    learning_rate: float = 5e-5         # RMSProp for both networks
    critic_steps_per_gen: int = 5
    generator_updates: int = 120_000    # desk-scale runs override this
    latent_dim: int = 100
    crop_size: int = 128                # 128 rolled-style, 144 capacitive
    width: float = 1.0                  # channel multiplier (tests shrink it)
    clip_value: float = 0.01            # original weight-clipping WGAN
    gradient_penalty: float = 0.0       # > 0 switches to gradient-penalty mode
    checkpoint_every: int = 1000
    synthetic_images: int = 512         # synthetic dataset size when no dir given
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "learning_rate", "critic_steps_per_gen",
                     "generator_updates", "latent_dim", "crop_size",
                     "checkpoint_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.crop_size % 16 != 0:
            raise ValueError("crop_size must be a multiple of 16")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)
