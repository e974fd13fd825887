import numpy as np
import pytest

from masterprint import gallery as gal
from masterprint import synthetic
from masterprint.errors import CalibrationError, IngestError
from masterprint.image import GrayImage, save_image
from masterprint.minutiae import template_to_text

from conftest import random_template_gallery


@pytest.fixture(scope="module")
def small_gallery_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("gal")
    synthetic.write_gallery(root, n_identities=3, k=12, partial_size=96,
                            seed=2, master_size=144)
    return root


class TestIngest:
    def test_identity_and_partial_counts(self, small_gallery_dir):
        g = gal.ingest(small_gallery_dir)
        assert len(g) == 3
        assert all(len(gi.images) == 12 for gi in g.identities)
        assert g.ids == sorted(g.ids)

    def test_crop_mode_is_seeded_deterministic(self, tmp_path):
        rng = np.random.default_rng(0)
        for i in range(2):
            img = GrayImage(rng.integers(0, 256, (256, 256), dtype=np.uint8))
            save_image(img, tmp_path / f"id{i}" / "a.png")
        a = gal.ingest(tmp_path, crop_size=128, seed=7)
        b = gal.ingest(tmp_path, crop_size=128, seed=7)
        c = gal.ingest(tmp_path, crop_size=128, seed=8)
        for ga, gb in zip(a.identities, b.identities):
            assert np.array_equal(ga.images[0].pixels, gb.images[0].pixels)
        assert any(not np.array_equal(ga.images[0].pixels, gc.images[0].pixels)
                   for ga, gc in zip(a.identities, c.identities))
        assert a.identities[0].images[0].shape == (128, 128)

    def test_exact_size_image_loads_verbatim(self, tmp_path):
        img = synthetic.white_noise_image((144, 144), seed=1)
        save_image(img, tmp_path / "id0" / "p.png")
        g = gal.ingest(tmp_path, crop_size=144, seed=0)
        assert np.array_equal(g.identities[0].images[0].pixels, img.pixels)

    def test_missing_root_is_ingestion_error(self, tmp_path):
        with pytest.raises(IngestError):
            gal.ingest(tmp_path / "nope")

    def test_empty_root_is_ingestion_error(self, tmp_path):
        with pytest.raises(IngestError):
            gal.ingest(tmp_path)

    def test_unreadable_file_collected_not_fatal(self, tmp_path):
        save_image(synthetic.white_noise_image((64, 64), seed=0), tmp_path / "id0" / "ok.png")
        (tmp_path / "id0" / "bad.png").write_bytes(b"not an image")
        g = gal.ingest(tmp_path)
        assert len(g.identities[0].images) == 1
        assert len(g.errors) == 1 and "bad.png" in g.errors[0]

    def test_manifest_override(self, tmp_path):
        save_image(synthetic.white_noise_image((64, 64), seed=0), tmp_path / "d" / "a.png")
        save_image(synthetic.white_noise_image((64, 64), seed=1), tmp_path / "d" / "b.png")
        (tmp_path / "manifest").write_text("one\td/a.png\ntwo\td/b.png\n")
        g = gal.ingest(tmp_path)
        assert g.ids == ["one", "two"]


class TestEnroll:
    def test_constant_images_give_empty_templates(self):
        img = GrayImage(np.full((64, 64), 80, dtype=np.uint8))
        g = gal.Gallery((gal.GalleryIdentity("a", (img, img)),))
        tg = gal.enroll(g)
        assert all(len(t) == 0 for t in tg.identities[0].templates)

    def test_ridge_gallery_is_minutiae_rich(self, small_gallery_dir):
        tg = gal.enroll(gal.ingest(small_gallery_dir))
        counts = [len(t) for gi in tg.identities for t in gi.templates]
        assert np.mean(counts) > 8

    def test_enrollment_deterministic(self, small_gallery_dir):
        g = gal.ingest(small_gallery_dir)
        a = gal.enroll(g)
        b = gal.enroll(g)
        ser_a = [template_to_text(t) for gi in a.identities for t in gi.templates]
        ser_b = [template_to_text(t) for gi in b.identities for t in gi.templates]
        assert ser_a == ser_b

    def test_template_gallery_roundtrip(self, small_gallery_dir, tmp_path):
        tg = gal.enroll(gal.ingest(small_gallery_dir))
        gal.save_template_gallery(tg, tmp_path)
        assert gal.load_template_gallery(tmp_path) == tg


class TestSplit:
    def test_half_split_disjoint(self):
        ids = [f"id{i}" for i in range(10)]
        train, test = gal.split_identities(ids, ratio=0.5, seed=1)
        assert len(train) == 5 and len(test) == 5
        assert not set(train) & set(test)
        assert sorted(train + test) == sorted(ids)

    def test_split_deterministic(self):
        ids = [f"id{i}" for i in range(11)]
        assert gal.split_identities(ids, seed=3) == gal.split_identities(ids, seed=3)

    def test_split_file_roundtrip(self, tmp_path):
        train, test = ["a", "b"], ["c"]
        gal.write_split(tmp_path / "s.tsv", train, test)
        assert gal.read_split(tmp_path / "s.tsv") == (train, test)

    def test_overlapping_split_file_rejected(self, tmp_path):
        (tmp_path / "s.tsv").write_text("a\ttrain\na\ttest\n")
        with pytest.raises(IngestError):
            gal.read_split(tmp_path / "s.tsv")

    def test_720_identities_split_360_360(self):
        ids = [f"s{i:04d}" for i in range(720)]
        train, test = gal.split_identities(ids, ratio=0.5, seed=0)
        assert len(train) == 360 and len(test) == 360


class TestImpostorScores:
    def test_two_singleton_identities_give_one_pair(self):
        rng = np.random.default_rng(0)
        tg = random_template_gallery(rng, n_identities=2, k=1)
        assert gal.cross_pair_count(tg) == 1
        scores = gal.impostor_scores(tg, 10, seed=0)
        assert len(scores) == 1

    def test_oversampling_uses_every_pair(self):
        rng = np.random.default_rng(1)
        tg = random_template_gallery(rng, n_identities=3, k=2)
        total = gal.cross_pair_count(tg)
        assert total == 12
        scores = gal.impostor_scores(tg, 10_000, seed=0)
        assert len(scores) == total

    def test_seeded_scores_reproducible(self):
        rng = np.random.default_rng(2)
        tg = random_template_gallery(rng, n_identities=8, k=3)
        a = gal.impostor_scores(tg, 50, seed=3)
        b = gal.impostor_scores(tg, 50, seed=3)
        assert np.array_equal(a, b)
        assert len(a) == 50

    def test_single_identity_is_calibration_error(self):
        rng = np.random.default_rng(3)
        tg = random_template_gallery(rng, n_identities=1, k=4)
        with pytest.raises(CalibrationError):
            gal.impostor_scores(tg, 10, seed=0)

    def test_sampled_pairs_are_cross_identity_and_unique(self):
        rng = np.random.default_rng(4)
        tg = random_template_gallery(rng, n_identities=5, k=3)
        pairs = gal.sample_impostor_pairs(tg, 40, seed=1)
        owners, _ = gal._flat_templates(tg)
        assert len(set(pairs)) == len(pairs)
        for a, b in pairs:
            assert owners[a] != owners[b]


class TestThresholds:
    def test_fmr_one_passes_everything(self):
        scores = np.array([3, 5, 5, 9, 2])
        thr = gal.threshold_for_fmr(scores, 1.0)
        assert thr.score == 2
        assert thr.empirical_fmr == 1.0

    def test_smallest_feasible_threshold(self):
        # One of ten scores may pass at fmr 0.1; the smallest integer
        # threshold admitting at most that one is min+1 here.
        scores = np.array([0] * 9 + [10])
        thr = gal.threshold_for_fmr(scores, 0.1)
        assert thr.score == 1
        assert thr.empirical_fmr <= 0.1
        # consistency: one step lower would overshoot the target rate
        assert np.mean(scores >= thr.score - 1) > 0.1

    def test_monotone_in_fmr(self):
        rng = np.random.default_rng(5)
        scores = rng.poisson(3.0, size=5000)
        t1 = gal.threshold_for_fmr(scores, 0.01).score
        t2 = gal.threshold_for_fmr(scores, 0.001).score
        t3 = gal.threshold_for_fmr(scores, 0.0001).score
        t0 = gal.threshold_for_fmr(scores, 1.0).score
        assert t3 >= t2 >= t1 >= t0

    def test_calibration_consistency_property(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            scores = rng.negative_binomial(2, 0.3, size=2000)
            fmr = float(rng.choice([0.5, 0.1, 0.01, 0.004]))
            thr = gal.threshold_for_fmr(scores, fmr)
            assert np.mean(scores >= thr.score) <= fmr
            if thr.score > scores.min():
                assert np.mean(scores >= thr.score - 1) > fmr

    def test_rejects_empty_and_bad_fmr(self):
        with pytest.raises(CalibrationError):
            gal.threshold_for_fmr(np.array([]), 0.01)
        with pytest.raises(ValueError):
            gal.threshold_for_fmr(np.array([1]), 0.0)

    def test_threshold_file_roundtrip(self, tmp_path):
        thr = gal.MatchThreshold(0.01, 12, "default", 50000, 0.0094)
        gal.save_threshold(thr, tmp_path / "t.json")
        assert gal.load_threshold(tmp_path / "t.json") == thr


class TestEmpiricalFmr:
    def test_threshold_above_all_scores(self):
        rng = np.random.default_rng(7)
        tg = random_template_gallery(rng, n_identities=6, k=2)
        thr = gal.MatchThreshold(0.01, 10_000, "default", 1, 0.0)
        assert gal.empirical_fmr(tg, thr, 30, seed=0) == 0.0

    def test_threshold_zero_passes_all(self):
        rng = np.random.default_rng(8)
        tg = random_template_gallery(rng, n_identities=6, k=2)
        thr = gal.MatchThreshold(1.0, 0, "default", 1, 1.0)
        assert gal.empirical_fmr(tg, thr, 30, seed=0) == 1.0
