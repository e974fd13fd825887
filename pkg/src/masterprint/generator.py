"""Generator inference runtime and the ".lvw" weight file format.

A model is an ordered chain of layers (dense, nearest-neighbor upsample,
conv2d, inference-mode batchnorm, pointwise activation) mapping a latent
vector to a single-channel image. Inference only: no training, no
gradients. Models are immutable after load and safe to share across
worker threads or processes.

Weight file layout (all integers little-endian):

    magic "LVEW" | u32 version=1 | u32 latent_dim | u32 layer_count
    per layer: u8 kind | kind-specific u32 shape header | float32 params
    trailing u32 CRC32 of every preceding byte

Layer kinds and their headers:

    1 dense      in_features, out_channels, out_height, out_width
                 params: weight[out_features, in_features], bias[out_features]
    2 upsample   factor
    3 conv2d     out_ch, in_ch, kh, kw, stride, padding (0 same, 1 valid)
                 params: weight[out_ch, in_ch, kh, kw], bias[out_ch]
    4 batchnorm  channels
                 params: gamma, beta, running_mean, running_var (each [channels])
    5 activation code (0 relu, 1 tanh, 2 leaky-relu 0.2, 3 identity)
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ModelStructureError, WeightCorruptionError, WeightFormatError
from .image import GrayImage

MAGIC = b"LVEW"
VERSION = 1

KIND_DENSE = 1
KIND_UPSAMPLE = 2
KIND_CONV2D = 3
KIND_BATCHNORM = 4
KIND_ACTIVATION = 5

ACT_RELU = 0
ACT_TANH = 1
ACT_LEAKY_RELU = 2
ACT_IDENTITY = 3

PAD_SAME = 0
PAD_VALID = 1

BATCHNORM_EPS = 1e-5


@dataclass(frozen=True)
class LayerSpec:
    """One layer: integer shape header plus float32 parameter arrays."""

    kind: int
    header: tuple[int, ...]
    params: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        for p in self.params:
            p.setflags(write=False)


@dataclass(frozen=True)
class GeneratorModel:
    latent_dim: int
    layers: tuple[LayerSpec, ...]
    output_shape: tuple[int, int]  # (height, width), derived from the chain
    shapes: tuple[tuple[int, int, int], ...] = field(repr=False, default=())


def _conv_out(size: int, k: int, stride: int, padding: int) -> int:
    if padding == PAD_SAME:
        return -(-size // stride)  # ceil
    return (size - k) // stride + 1


def _layer_out_shape(layer: LayerSpec, shape: tuple[int, int, int]) -> tuple[int, int, int]:
    """Shape propagation; raises ModelStructureError on chain breaks."""
    c, h, w = shape
    if layer.kind == KIND_DENSE:
        in_f, oc, oh, ow = layer.header
        if c * h * w != in_f:
            raise ModelStructureError(
                f"dense expects {in_f} inputs, chain provides {c * h * w}"
            )
        return (oc, oh, ow)
    if layer.kind == KIND_UPSAMPLE:
        (f,) = layer.header
        return (c, h * f, w * f)
    if layer.kind == KIND_CONV2D:
        oc, ic, kh, kw, stride, padding = layer.header
        if ic != c:
            raise ModelStructureError(f"conv2d expects {ic} channels, chain provides {c}")
        if padding == PAD_VALID and (h < kh or w < kw):
            raise ModelStructureError("conv2d valid padding with kernel larger than input")
        return (oc, _conv_out(h, kh, stride, padding), _conv_out(w, kw, stride, padding))
    if layer.kind == KIND_BATCHNORM:
        (ch,) = layer.header
        if ch != c:
            raise ModelStructureError(f"batchnorm expects {ch} channels, chain provides {c}")
        return shape
    if layer.kind == KIND_ACTIVATION:
        return shape
    raise ModelStructureError(f"unknown layer kind {layer.kind}")


def validate_chain(latent_dim: int, layers: tuple[LayerSpec, ...]) -> tuple[tuple[int, int, int], ...]:
    """Propagate shapes through the chain and enforce the output contract."""
    if latent_dim < 1:
        raise ModelStructureError("latent_dim must be >= 1")
    if not layers:
        raise ModelStructureError("model has no layers")
    shape = (1, 1, latent_dim)  # latent treated as a flat vector
    shapes = [shape]
    for layer in layers:
        shape = _layer_out_shape(layer, shape)
        shapes.append(shape)
    c, h, w = shape
    if c != 1:
        raise ModelStructureError(f"final layer must emit 1 channel, got {c}")
    last = layers[-1]
    if last.kind != KIND_ACTIVATION or last.header[0] != ACT_TANH:
        raise ModelStructureError("final layer must be a tanh activation")
    return tuple(shapes)


def build_model(latent_dim: int, layers: list[LayerSpec] | tuple[LayerSpec, ...]) -> GeneratorModel:
    layers = tuple(layers)
    for layer in layers:
        for p in layer.params:
            if not np.all(np.isfinite(p)):
                raise WeightCorruptionError("non-finite weight value")
    shapes = validate_chain(latent_dim, layers)
    _, h, w = shapes[-1]
    return GeneratorModel(latent_dim, layers, (h, w), shapes)


# --- layer parameter bookkeeping ------------------------------------------

def _param_shapes(kind: int, header: tuple[int, ...]) -> list[tuple[int, ...]]:
    if kind == KIND_DENSE:
        in_f, oc, oh, ow = header
        out_f = oc * oh * ow
        return [(out_f, in_f), (out_f,)]
    if kind == KIND_CONV2D:
        oc, ic, kh, kw, _, _ = header
        return [(oc, ic, kh, kw), (oc,)]
    if kind == KIND_BATCHNORM:
        (ch,) = header
        return [(ch,), (ch,), (ch,), (ch,)]
    return []


_HEADER_LEN = {
    KIND_DENSE: 4,
    KIND_UPSAMPLE: 1,
    KIND_CONV2D: 6,
    KIND_BATCHNORM: 1,
    KIND_ACTIVATION: 1,
}


def dense(in_features: int, out_c: int, out_h: int, out_w: int,
          weight: np.ndarray, bias: np.ndarray) -> LayerSpec:
    header = (in_features, out_c, out_h, out_w)
    w = np.ascontiguousarray(weight, dtype=np.float32)
    b = np.ascontiguousarray(bias, dtype=np.float32)
    expect_w, expect_b = _param_shapes(KIND_DENSE, header)
    if w.shape != expect_w or b.shape != expect_b:
        raise ModelStructureError("dense parameter shapes do not match header")
    return LayerSpec(KIND_DENSE, header, (w, b))


def upsample(factor: int = 2) -> LayerSpec:
    if factor < 1:
        raise ModelStructureError("upsample factor must be >= 1")
    return LayerSpec(KIND_UPSAMPLE, (factor,))


def conv2d(weight: np.ndarray, bias: np.ndarray, stride: int = 1,
           padding: int = PAD_SAME) -> LayerSpec:
    w = np.ascontiguousarray(weight, dtype=np.float32)
    b = np.ascontiguousarray(bias, dtype=np.float32)
    if w.ndim != 4:
        raise ModelStructureError("conv weight must be 4-D (out, in, kh, kw)")
    oc, ic, kh, kw = w.shape
    if b.shape != (oc,):
        raise ModelStructureError("conv bias shape mismatch")
    return LayerSpec(KIND_CONV2D, (oc, ic, kh, kw, stride, padding), (w, b))


def batchnorm(gamma, beta, mean, var) -> LayerSpec:
    arrs = tuple(np.ascontiguousarray(a, dtype=np.float32) for a in (gamma, beta, mean, var))
    ch = arrs[0].shape[0]
    if any(a.shape != (ch,) for a in arrs):
        raise ModelStructureError("batchnorm parameter shapes differ")
    return LayerSpec(KIND_BATCHNORM, (ch,), arrs)


def activation(code: int) -> LayerSpec:
    if code not in (ACT_RELU, ACT_TANH, ACT_LEAKY_RELU, ACT_IDENTITY):
        raise ModelStructureError(f"unknown activation code {code}")
    return LayerSpec(KIND_ACTIVATION, (code,))


# --- serialization ----------------------------------------------------------

def serialize_generator(model: GeneratorModel) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<III", VERSION, model.latent_dim, len(model.layers))
    for layer in model.layers:
        out += struct.pack("<B", layer.kind)
        out += struct.pack(f"<{len(layer.header)}I", *layer.header)
        for p in layer.params:
            out += np.ascontiguousarray(p, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def save_generator(model: GeneratorModel, path: str | Path) -> None:
    Path(path).write_bytes(serialize_generator(model))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise WeightCorruptionError("weight blob truncated")
        b = self.blob[self.pos:self.pos + n]
        self.pos += n
        return b

    def u32(self, count: int = 1) -> tuple[int, ...]:
        return struct.unpack(f"<{count}I", self.take(4 * count))

    def u8(self) -> int:
        return self.take(1)[0]

    def f32(self, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape))
        arr = np.frombuffer(self.take(4 * n), dtype="<f4").reshape(shape)
        return np.ascontiguousarray(arr)


def load_generator(blob: bytes) -> GeneratorModel:
    """Parse a weight blob; loading is total, so every failure mode surfaces here."""
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise WeightFormatError("bad magic, not a generator weight blob")
    r = _Reader(blob)
    r.take(4)
    (version,) = r.u32()
    if version != VERSION:
        raise WeightFormatError(f"unsupported weight format version {version}")
    latent_dim, layer_count = r.u32(2)
    layers = []
    for _ in range(layer_count):
        kind = r.u8()
        if kind not in _HEADER_LEN:
            raise WeightFormatError(f"unknown layer kind {kind}")
        header = r.u32(_HEADER_LEN[kind])
        params = tuple(r.f32(s) for s in _param_shapes(kind, header))
        layers.append(LayerSpec(kind, header, params))
    (stored_crc,) = r.u32()
    if r.pos != len(blob):
        raise WeightCorruptionError("trailing bytes after checksum")
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise WeightCorruptionError("CRC32 mismatch")
    return build_model(latent_dim, layers)


def load_generator_file(path: str | Path) -> GeneratorModel:
    return load_generator(Path(path).read_bytes())


# --- forward pass -----------------------------------------------------------

def _conv2d_forward(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    oc, ic, kh, kw, stride, padding = layer.header
    w, b = layer.params
    c, h, w_in = x.shape
    if padding == PAD_SAME:
        oh, ow = _conv_out(h, kh, stride, padding), _conv_out(w_in, kw, stride, padding)
        pad_h = max((oh - 1) * stride + kh - h, 0)
        pad_w = max((ow - 1) * stride + kw - w_in, 0)
        x = np.pad(x, ((0, 0), (pad_h // 2, pad_h - pad_h // 2),
                       (pad_w // 2, pad_w - pad_w // 2)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # (c, oh, ow, kh, kw)
    _, oh, ow = windows.shape[0], windows.shape[1], windows.shape[2]
    col = windows.transpose(1, 2, 0, 3, 4).reshape(oh * ow, ic * kh * kw)
    out = col @ w.reshape(oc, -1).T + b
    return np.ascontiguousarray(out.T.reshape(oc, oh, ow))


def forward_layer(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    """Apply one layer to a (channels, height, width) float32 tensor."""
    if layer.kind == KIND_DENSE:
        in_f, oc, oh, ow = layer.header
        if x.size != in_f:
            raise ModelStructureError(f"dense expects {in_f} inputs, got {x.size}")
        w, b = layer.params
        return (w @ x.reshape(-1) + b).reshape(oc, oh, ow)
    if layer.kind == KIND_UPSAMPLE:
        (f,) = layer.header
        return np.repeat(np.repeat(x, f, axis=1), f, axis=2)
    if layer.kind == KIND_CONV2D:
        if x.shape[0] != layer.header[1]:
            raise ModelStructureError(
                f"conv2d expects {layer.header[1]} channels, got {x.shape[0]}"
            )
        return _conv2d_forward(x, layer)
    if layer.kind == KIND_BATCHNORM:
        gamma, beta, mean, var = layer.params
        if x.shape[0] != gamma.shape[0]:
            raise ModelStructureError("batchnorm channel mismatch")
        scale = gamma / np.sqrt(var + np.float32(BATCHNORM_EPS))
        return (x - mean[:, None, None]) * scale[:, None, None] + beta[:, None, None]
    if layer.kind == KIND_ACTIVATION:
        code = layer.header[0]
        if code == ACT_RELU:
            return np.maximum(x, np.float32(0.0))
        if code == ACT_TANH:
            return np.tanh(x)
        if code == ACT_LEAKY_RELU:
            return np.where(x > 0, x, np.float32(0.2) * x)
        return x
    raise ModelStructureError(f"unknown layer kind {layer.kind}")


def generate_raw(model: GeneratorModel, z) -> np.ndarray:
    """Pre-quantization output in [-1, 1] as a (height, width) float32 array."""
    zv = np.asarray(z, dtype=np.float32).reshape(-1)
    if zv.shape[0] != model.latent_dim:
        raise ValueError(f"latent length {zv.shape[0]} != model latent_dim {model.latent_dim}")
    if not np.all(np.isfinite(zv)):
        raise ValueError("latent vector has non-finite entries")
    x = zv.reshape(1, 1, -1)
    for layer in model.layers:
        x = forward_layer(layer, x).astype(np.float32, copy=False)
    return x[0]


def quantize(raw: np.ndarray) -> GrayImage:
    """Map [-1, 1] to [0, 255] and round half-to-even for bit reproducibility."""
    v = np.rint((raw.astype(np.float64) + 1.0) * 0.5 * 255.0)
    return GrayImage(np.clip(v, 0, 255).astype(np.uint8))


def generate(model: GeneratorModel, z) -> GrayImage:
    """Deterministic latent-to-image map; identical (model, z) gives identical pixels."""
    return quantize(generate_raw(model, z))


# --- the canonical architecture --------------------------------------------

CANONICAL_CHANNELS = (256, 128, 64, 32, 32)


def canonical_model(latent_dim: int = 100, output_size: int = 128, seed: int = 0,
                    width: float = 1.0) -> GeneratorModel:
    """Reference upsample-conv architecture with seeded random weights.

    dense latent -> (256, base, base), then four blocks of
    [upsample x2, conv 5x5 same, batchnorm, relu] narrowing 256->128->64->32,
    a final 5x5 conv to one channel, and tanh. base = output_size / 16.
    ``width`` scales every channel count (test fixtures use < 1).
    """
    if output_size % 16 != 0:
        raise ValueError("output_size must be a multiple of 16")
    base = output_size // 16
    chans = [max(1, int(round(c * width))) for c in CANONICAL_CHANNELS]
    rng = np.random.default_rng(seed)

    def rand(shape, scale):
        return rng.normal(0.0, scale, size=shape).astype(np.float32)

    layers = [
        dense(latent_dim, chans[0], base, base,
              rand((chans[0] * base * base, latent_dim), 0.05),
              rand((chans[0] * base * base,), 0.01)),
    ]
    c_in = chans[0]
    for c_out in chans[1:]:
        layers.append(upsample(2))
        layers.append(conv2d(rand((c_out, c_in, 5, 5), 0.05), rand((c_out,), 0.01)))
        layers.append(batchnorm(np.ones(c_out), np.zeros(c_out),
                                np.zeros(c_out), np.ones(c_out)))
        layers.append(activation(ACT_RELU))
        c_in = c_out
    layers.append(conv2d(rand((1, c_in, 5, 5), 0.05), rand((1,), 0.01)))
    layers.append(activation(ACT_TANH))
    return build_model(latent_dim, layers)
