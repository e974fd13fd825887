import math

import numpy as np
import pytest

from masterprint import generator as gen
from masterprint.gallery import TemplateGallery, TemplateIdentity
from masterprint.minutiae import (KIND_BIFURCATION, KIND_ENDING, Minutia,
                                  make_template, quantize_theta)


def tiny_model() -> gen.GeneratorModel:
    """In-repo fixture generator: latent 8, output 32x32, 5 layers."""
    rng = np.random.default_rng(1234)
    layers = [
        gen.dense(8, 4, 8, 8, rng.normal(0, 0.3, (4 * 8 * 8, 8)).astype(np.float32),
                  rng.normal(0, 0.05, (4 * 8 * 8,)).astype(np.float32)),
        gen.upsample(2),
        gen.upsample(2),
        gen.conv2d(rng.normal(0, 0.2, (1, 4, 5, 5)).astype(np.float32),
                   np.zeros(1, dtype=np.float32)),
        gen.activation(gen.ACT_TANH),
    ]
    return gen.build_model(8, layers)


@pytest.fixture(scope="session")
def tiny_gen() -> gen.GeneratorModel:
    return tiny_model()


@pytest.fixture(scope="session")
def tiny_gen_blob(tiny_gen) -> bytes:
    return gen.serialize_generator(tiny_gen)


@pytest.fixture(scope="session")
def tiny_gen_path(tmp_path_factory, tiny_gen_blob):
    p = tmp_path_factory.mktemp("weights") / "tiny_gen.lvw"
    p.write_bytes(tiny_gen_blob)
    return p


def random_template(n, rng, size=200, spread=None, min_sep=7.0):
    """Random synthetic template with the duplicate-suppression spacing."""
    spread = spread if spread is not None else size / 2 - 14
    ms, pts = [], []
    c = size / 2
    tries = 0
    while len(ms) < n and tries < 60 * max(n, 1):
        tries += 1
        y = rng.uniform(c - spread, c + spread)
        x = rng.uniform(c - spread, c + spread)
        if any((y - py) ** 2 + (x - px) ** 2 <= min_sep ** 2 for py, px in pts):
            continue
        pts.append((y, x))
        kind = KIND_ENDING if rng.random() < 0.6 else KIND_BIFURCATION
        ms.append(Minutia(y, x, quantize_theta(rng.uniform(0, 2 * math.pi)),
                          kind, round(float(rng.uniform(0.3, 1.0)), 4)))
    return make_template(ms, (size, size))


def rigid_transform(t, angle, ty, tx):
    """Rotate about the template center, then translate."""
    size = t.source_shape[0]
    c, s = math.cos(angle), math.sin(angle)
    cy = cx = size / 2
    ms = []
    for m in t.minutiae:
        dy, dx = m.y - cy, m.x - cx
        ms.append(Minutia(cy + s * dx + c * dy + ty, cx + c * dx - s * dy + tx,
                          quantize_theta(m.theta + angle), m.kind, m.quality))
    return make_template(ms, (size, size))


def random_template_gallery(rng, n_identities, k, max_minutiae=15, size=128):
    return TemplateGallery(tuple(
        TemplateIdentity(f"id{i:03d}", tuple(
            random_template(int(rng.integers(0, max_minutiae)), rng, size=size)
            for _ in range(k)))
        for i in range(n_identities)))
