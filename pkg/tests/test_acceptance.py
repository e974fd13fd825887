"""Acceptance suite: one test per promised behavior, each printing a
PASS line with the measured numbers (run with -s to see them inline).
Everything runs from in-repo fixtures: authored weights, synthetic
galleries, seeded randomness.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from masterprint import cmaes, engine, matcher, synthetic
from masterprint import gallery as gal
from masterprint import generator as gen
from masterprint import minutiae as mn
from masterprint.gallery import TemplateGallery, TemplateIdentity

from conftest import random_template, random_template_gallery, rigid_transform


def report(name: str, detail: str) -> None:
    print(f"\nACCEPTANCE {name}: PASS ({detail})")


def enroll_images(images_by_identity) -> TemplateGallery:
    return TemplateGallery(tuple(
        TemplateIdentity(ident, tuple(mn.extract(img) for img in imgs))
        for ident, imgs in images_by_identity))


@pytest.fixture(scope="module")
def train_gallery_100():
    imgs = synthetic.gallery_images(n_identities=100, k=12, partial_size=88,
                                    seed=11, master_size=152)
    return enroll_images(imgs)


@pytest.fixture(scope="module")
def gallery_50():
    # 104-px partials give ~15-minutiae templates whose impostor-score tail
    # is fine-grained enough for integer thresholds to land near the target.
    imgs = synthetic.gallery_images(n_identities=50, k=12, partial_size=104,
                                    seed=23, master_size=168)
    return enroll_images(imgs)


# --- CMA-ES benchmarks ---------------------------------------------------------

def test_cmaes_sphere_benchmark():
    xstar = np.ones(10)

    def sphere(x):
        return -float(np.sum((x - xstar) ** 2))

    t0 = time.time()
    bests = [cmaes.optimize(sphere, dim=10, sigma0=0.5, budget_evals=5000,
                            seed=seed).best_f for seed in range(20)]
    elapsed = time.time() - t0
    median = float(np.median(bests))
    assert median > -1e-10
    assert elapsed < 30.0
    report("cmaes-sphere", f"median best {median:.3e} in {elapsed:.1f}s")


def test_cmaes_rosenbrock_benchmark():
    def rosen(x):
        return -float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2
                             + (1.0 - x[:-1]) ** 2))

    t0 = time.time()
    solved = sum(cmaes.optimize(rosen, dim=5, sigma0=0.5, budget_evals=30000,
                                seed=seed).best_f > -1e-6
                 for seed in range(20))
    elapsed = time.time() - t0
    assert solved >= 16
    assert elapsed < 120.0
    report("cmaes-rosenbrock", f"{solved}/20 seeds solved in {elapsed:.1f}s")


def test_rank_invariance_bit_identical():
    def trajectory(transform):
        state = cmaes.init(8, 0.7, seed=13)
        xstar = np.linspace(-1, 1, 8)
        sigmas, means = [], []
        for _ in range(40):
            cands = cmaes.ask(state)
            for c in cands:
                c.fitness = transform(-float(np.sum((c.x - xstar) ** 2)))
            cmaes.tell(state, cands)
            sigmas.append(state.sigma)
            means.append(state.mean.copy())
        return sigmas, means, state.C

    s1, m1, c1 = trajectory(lambda v: v)
    s2, m2, c2 = trajectory(lambda v: 0.5 * math.exp(v * 0.25) + 3.0)
    assert s1 == s2
    assert all(np.array_equal(a, b) for a, b in zip(m1, m2))
    assert np.array_equal(c1, c2)
    report("rank-invariance", "40 generations bit-identical under exp transform")


# --- fitness oracle -------------------------------------------------------------

def test_fitness_oracle_equivalence_200_fixtures():
    rng = np.random.default_rng(31)
    params = matcher.MatcherParams()
    for trial in range(200):
        tg = random_template_gallery(rng, int(rng.integers(2, 7)),
                                     int(rng.integers(1, 5)))
        probe = random_template(int(rng.integers(0, 16)), rng)
        score_thr = int(rng.integers(1, 9))
        thr = gal.MatchThreshold(0.01, score_thr, "default", 100, 0.0)
        fast = engine.matching_score(probe, engine.GalleryIndex(tg, "default"), thr)
        brute = sum(
            1 for gi in tg.identities
            if any(matcher.match_score(probe, t, params) >= score_thr
                   for t in gi.templates))
        assert fast == brute, f"trial {trial}: {fast} != {brute}"
    report("fitness-oracle", "early-break count == brute-force n x k on 200 fixtures")


# --- calibration -----------------------------------------------------------------

def test_calibration_hits_target_fmr(gallery_50):
    pairs = gal.sample_impostor_pairs(gallery_50, 45000, seed=5)
    owners, templates = gal._flat_templates(gallery_50)
    params = matcher.MatcherParams()
    tables = [matcher.build_edge_table(t, params) for t in templates]
    scores = np.array([matcher.match_score(tables[a], tables[b], params)
                       for a, b in pairs])
    calib, held = scores[:40000], scores[40000:]

    thr = gal.threshold_for_fmr(calib, 0.01)
    p_hat = float(np.mean(held >= thr.score))
    ci = 1.96 * math.sqrt(0.01 * 0.99 / len(held))
    assert abs(p_hat - 0.01) <= ci, f"held-out fmr {p_hat} outside 0.01 +/- {ci}"

    t1 = gal.threshold_for_fmr(calib, 0.01).score
    t2 = gal.threshold_for_fmr(calib, 0.001).score
    t3 = gal.threshold_for_fmr(calib, 0.0001).score
    assert t3 >= t2 >= t1
    report("calibration",
           f"held-out fmr {p_hat:.4f} in 0.01 +/- {ci:.4f}; "
           f"thresholds {t1} <= {t2} <= {t3}")


# --- extractor -------------------------------------------------------------------

def test_extractor_noise_rejection_and_ridge_sensitivity():
    noise_counts = [len(mn.extract(synthetic.white_noise_image((128, 128), seed=s)))
                    for s in range(100)]
    assert float(np.median(noise_counts)) == 0.0
    assert max(noise_counts) <= 2
    ridge_counts = [len(mn.extract(synthetic.identity_master(seed=s, size=128)))
                    for s in range(5)]
    assert min(ridge_counts) >= 10
    report("extractor-noise",
           f"noise median {np.median(noise_counts)}, max {max(noise_counts)}; "
           f"ridge counts {ridge_counts}")


# --- matcher ---------------------------------------------------------------------

def test_matcher_invariances():
    rng = np.random.default_rng(41)
    # symmetry, exact
    for _ in range(50):
        a = random_template(int(rng.integers(0, 22)), rng)
        b = random_template(int(rng.integers(0, 22)), rng)
        assert matcher.match_score(a, b) == matcher.match_score(b, a)
    # rigid motion, >= 90% of self-score over 100 seeded trials
    hits = 0
    for _ in range(100):
        t = random_template(int(rng.integers(8, 22)), rng, size=400, spread=70)
        moved = rigid_transform(t, rng.uniform(0, 2 * math.pi),
                                *rng.uniform(-25, 25, size=2))
        if matcher.match_score(t, moved) >= 0.9 * matcher.match_score(t, t):
            hits += 1
    assert hits >= 90
    # monotone degradation, exact
    for _ in range(20):
        a = random_template(int(rng.integers(5, 18)), rng)
        ms = list(random_template(int(rng.integers(5, 18)), rng).minutiae)
        prev = matcher.match_score(a, mn.make_template(ms, (200, 200)))
        while ms:
            ms.pop(int(rng.integers(0, len(ms))))
            score = matcher.match_score(a, mn.make_template(ms, (200, 200)))
            assert score <= prev
            prev = score
    report("matcher-invariances",
           f"symmetry exact; rigid self-match {hits}/100; deletion monotone")


# --- end-to-end LVE ---------------------------------------------------------------

_LVE_CTX = {}


def _lve_init(model, index, thr):
    _LVE_CTX.update(model=model, index=index, thr=thr)


def _lve_seed(seed: int) -> float:
    res = engine.run_evolution(_LVE_CTX["model"], _LVE_CTX["index"], _LVE_CTX["thr"],
                               budget=5000, seed=seed, sigma0=1.0, workers=1)
    return res.best_f


def test_lve_dominates_random_baseline(train_gallery_100, tmp_path):
    t0 = time.time()
    weights_path = tmp_path / "fixture_gen.lvw"
    gen.save_generator(synthetic.demo_generator_model(seed=3, size=88), weights_path)
    model = gen.load_generator_file(weights_path)

    scores = gal.impostor_scores(train_gallery_100, 40000, seed=5)
    thr = gal.threshold_for_fmr(scores, 0.01)
    index = engine.GalleryIndex(train_gallery_100, "default")

    baseline = engine.random_baseline(model, index, thr, 1000, seed=99)
    p95 = baseline["p95"]

    with ProcessPoolExecutor(max_workers=2, initializer=_lve_init,
                             initargs=(model, index, thr)) as pool:
        bests = list(pool.map(_lve_seed, range(10)))
    wins = sum(b > p95 for b in bests)
    elapsed = time.time() - t0
    assert wins >= 9, f"evolved bests {bests} vs baseline p95 {p95}"
    assert elapsed < 1800.0
    report("lve-dominance",
           f"threshold {thr.score}, baseline p95 {p95:.1f}, "
           f"evolved {sorted(bests)}, wins {wins}/10, {elapsed / 60:.1f} min")


def test_resume_equivalence(tmp_path):
    rng = np.random.default_rng(51)
    tg = TemplateGallery(tuple(
        TemplateIdentity(f"id{i}", tuple(random_template(12, rng, size=128)
                                         for _ in range(3)))
        for i in range(6)))
    index = engine.GalleryIndex(tg, "default")
    thr = gal.MatchThreshold(0.01, 3, "default", 100, 0.0)
    model = synthetic.demo_generator_model(seed=3, size=64, grid=3, n_angles=2)
    lam = 6
    full = engine.run_evolution(model, index, thr, budget=6 * lam, seed=7,
                                lam=lam, out_dir=tmp_path / "full")
    engine.run_evolution(model, index, thr, budget=3 * lam, seed=7,
                         lam=lam, out_dir=tmp_path / "part")
    resumed = engine.run_evolution(model, index, thr, budget=6 * lam, seed=7,
                                   lam=lam, out_dir=tmp_path / "part",
                                   resume=tmp_path / "part" / "checkpoint.bin")
    assert np.array_equal(full.best_latent, resumed.best_latent)
    assert full.best_f == resumed.best_f
    for name in ("best.png", "best.pgm", "best_latent.csv", "history.csv",
                 "result.json", "checkpoint.bin"):
        assert ((tmp_path / "full" / name).read_bytes()
                == (tmp_path / "part" / name).read_bytes()), name
    report("resume-equivalence", "checkpoint resume bit-matches uninterrupted run")


# --- generator runtime --------------------------------------------------------------

def test_generator_runtime_suite():
    # canonical architecture: shape, range, determinism
    model = gen.canonical_model(latent_dim=100, output_size=128, seed=0)
    z = np.full(100, 0.25)
    img1, img2 = gen.generate(model, z), gen.generate(model, z)
    assert img1.shape == (128, 128)
    assert np.array_equal(img1.pixels, img2.pixels)
    raw = gen.generate_raw(model, z)
    assert raw.min() >= -1.0 and raw.max() <= 1.0

    # randomized fixture architectures
    from test_generator import random_architecture
    rng = np.random.default_rng(61)
    for _ in range(20):
        m = random_architecture(rng)
        zz = rng.standard_normal(m.latent_dim)
        img = gen.generate(m, zz)
        assert img.shape == m.output_shape
        rr = gen.generate_raw(m, zz)
        assert rr.min() >= -1.0 and rr.max() <= 1.0
        assert np.array_equal(img.pixels, gen.generate(m, zz).pixels)

    # identity-kernel convolution, exact
    x = rng.normal(size=(1, 7, 7)).astype(np.float32)
    k = np.zeros((1, 1, 3, 3), dtype=np.float32)
    k[0, 0, 1, 1] = 1.0
    out = gen.forward_layer(gen.conv2d(k, np.zeros(1, dtype=np.float32)), x)
    assert np.array_equal(out, x)

    # hand-computed all-ones convolution, exact
    x = np.arange(1.0, 10.0, dtype=np.float32).reshape(1, 3, 3)
    out = gen.forward_layer(
        gen.conv2d(np.ones((1, 1, 3, 3), dtype=np.float32),
                   np.zeros(1, dtype=np.float32)), x)
    expected = np.array([[12, 21, 16], [27, 45, 33], [24, 39, 28]], dtype=np.float32)
    assert np.array_equal(out[0], expected)
    report("generator-runtime",
           "canonical + 20 random architectures: shape/range/determinism; "
           "conv cases exact")
