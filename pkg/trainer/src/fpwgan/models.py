"""Generator and critic. The generator follows the canonical inference
architecture exactly (dense to 8x8x256-style base, four upsample+conv5
blocks narrowing 256->128->64->32, final conv5 to one channel, tanh); the
critic is its mirror with strided subsampling and LeakyReLU(0.2).
Upsample+conv is used instead of transposed convolution to avoid blocky
artifacts.
"""

from __future__ import annotations

import torch
from torch import nn

CHANNELS = (256, 128, 64, 32, 32)


def scaled_channels(width: float) -> list[int]:
    return [max(1, int(round(c * width))) for c in CHANNELS]


class Generator(nn.Module):
    def __init__(self, latent_dim: int = 100, output_size: int = 128,
                 width: float = 1.0):
        super().__init__()
        if output_size % 16 != 0:
            raise ValueError("output_size must be a multiple of 16")
        self.latent_dim = latent_dim
        self.output_size = output_size
        self.base = output_size // 16
        chans = scaled_channels(width)
        self.chans = chans
        self.fc = nn.Linear(latent_dim, chans[0] * self.base * self.base)
        blocks = []
        c_in = chans[0]
        for c_out in chans[1:]:
            blocks.append(nn.Upsample(scale_factor=2, mode="nearest"))
            blocks.append(nn.Conv2d(c_in, c_out, 5, stride=1, padding=2))
            blocks.append(nn.BatchNorm2d(c_out))
            blocks.append(nn.ReLU())
            c_in = c_out
        self.blocks = nn.Sequential(*blocks)
        self.final = nn.Conv2d(c_in, 1, 5, stride=1, padding=2)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        x = self.fc(z).view(-1, self.chans[0], self.base, self.base)
        x = self.blocks(x)
        return torch.tanh(self.final(x))


class Critic(nn.Module):
    """Mirror of the generator: five conv5 layers, the middle ones strided,
    LeakyReLU activations, linear head (no sigmoid, Wasserstein output).

    No normalization layers, and weights start inside the clipping box.
    Learnable norm scales would be crushed by weight clipping (gamma
    1.0 -> 0.01 after the first clip) and batch-wise normalization erases
    the coarse intensity statistics the Wasserstein estimate should track,
    pinning it at a ceiling regardless of generator progress.
    """

    def __init__(self, input_size: int = 128, width: float = 1.0,
                 clip_value: float = 0.01):
        super().__init__()
        chans = scaled_channels(width)
        down = list(reversed(chans[1:]))  # e.g. 32, 32, 64, 128
        layers = [nn.Conv2d(1, down[0], 5, stride=1, padding=2),
                  nn.LeakyReLU(0.2)]
        c_in = down[0]
        size = input_size
        for c_out in down[1:] + [chans[0]]:
            layers.append(nn.Conv2d(c_in, c_out, 5, stride=2, padding=2))
            layers.append(nn.LeakyReLU(0.2))
            c_in = c_out
            size = (size + 1) // 2
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(c_in * size * size, 1)
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                nn.init.normal_(m.weight, 0.0, 0.8 * clip_value)
                nn.init.zeros_(m.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.features(x)
        return self.head(h.flatten(1)).squeeze(1)
