"""Serialize a trained generator to the ".lvw" wire format.

This writer is the trainer's half of the cross-component contract:

    magic "LVEW" | u32 version=1 | u32 latent_dim | u32 layer_count
    per layer: u8 kind | u32 shape header fields | float32 params (LE)
    u32 CRC32 over everything before it

Layer kinds: 1 dense (in, out_c, out_h, out_w; weight then bias),
2 upsample (factor), 3 conv2d (out, in, kh, kw, stride, pad 0=same;
weight (out, in, kh, kw) then bias), 4 batchnorm (channels; gamma, beta,
running mean, running var), 5 activation (0 relu, 1 tanh).
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np
import torch

from .models import Generator

KIND_DENSE = 1
KIND_UPSAMPLE = 2
KIND_CONV2D = 3
KIND_BATCHNORM = 4
KIND_ACTIVATION = 5
ACT_RELU = 0
ACT_TANH = 1
PAD_SAME = 0


def _f32(t: torch.Tensor) -> bytes:
    arr = t.detach().cpu().numpy().astype("<f4")
    if not np.all(np.isfinite(arr)):
        raise ValueError("refusing to export non-finite weights")
    return np.ascontiguousarray(arr).tobytes()


def serialize_generator(g: Generator) -> bytes:
    out = bytearray()
    out += b"LVEW"

    layers: list[bytes] = []

    def layer(kind: int, header: tuple[int, ...], *params: torch.Tensor):
        rec = struct.pack("<B", kind)
        rec += struct.pack(f"<{len(header)}I", *header)
        for p in params:
            rec += _f32(p)
        layers.append(rec)

    base = g.base
    layer(KIND_DENSE, (g.latent_dim, g.chans[0], base, base),
          g.fc.weight, g.fc.bias)
    mods = list(g.blocks)
    for i in range(0, len(mods), 4):
        up, conv, bn, _relu = mods[i:i + 4]
        layer(KIND_UPSAMPLE, (int(up.scale_factor),))
        oc, ic, kh, kw = conv.weight.shape
        layer(KIND_CONV2D, (oc, ic, kh, kw, 1, PAD_SAME), conv.weight, conv.bias)
        layer(KIND_BATCHNORM, (bn.num_features,),
              bn.weight, bn.bias, bn.running_mean, bn.running_var)
        layer(KIND_ACTIVATION, (ACT_RELU,))
    oc, ic, kh, kw = g.final.weight.shape
    layer(KIND_CONV2D, (oc, ic, kh, kw, 1, PAD_SAME), g.final.weight, g.final.bias)
    layer(KIND_ACTIVATION, (ACT_TANH,))

    out += struct.pack("<III", 1, g.latent_dim, len(layers))
    for rec in layers:
        out += rec
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def export_weights(g: Generator, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize_generator(g))
    return path
