"""Desk-scale training behavior, including the adversarial schedule and the
Wasserstein-estimate trend the full runs are expected to show."""

import numpy as np
import pytest
import torch

from fpwgan.config import TrainingConfig
from fpwgan.data import prepare_dataset
from fpwgan.training import DivergenceError, train

from conftest import sample_minutiae_counts


def desk_config(out_dir, seed, updates=2000):
    # 48-px crops: large enough for the extractor's border margin to leave
    # room for minutiae on generated samples, small enough to train on a CPU.
    return TrainingConfig(dataset_dir=None, out_dir=str(out_dir), batch_size=16,
                          generator_updates=updates, latent_dim=24, crop_size=48,
                          width=0.125, checkpoint_every=500,
                          synthetic_images=256, seed=seed)


class TestSchedule:
    def test_five_critic_batches_per_generator_update(self, tmp_path, monkeypatch):
        consumed = {"n": 0}
        original = prepare_dataset

        def counting_prepare(*args, **kwargs):
            ds = original(*args, **kwargs)
            inner = ds.batches

            def counted(batch_size, seed):
                for batch in inner(batch_size, seed):
                    consumed["n"] += 1
                    yield batch
            ds.batches = counted
            return ds

        monkeypatch.setattr("fpwgan.training.prepare_dataset", counting_prepare)
        cfg = desk_config(tmp_path, seed=0, updates=4)
        cfg.batch_size = 8
        train(cfg)
        assert consumed["n"] == 4 * cfg.critic_steps_per_gen

    def test_clipping_bounds_critic_weights(self, tmp_path):
        cfg = desk_config(tmp_path, seed=1, updates=3)
        torch.manual_seed(cfg.seed)
        g, _ = train(cfg)
        ckpt = torch.load(tmp_path / "checkpoint.pt", weights_only=True)
        for name, tensor in ckpt["critic"].items():
            if "running" in name or "num_batches" in name:
                continue
            assert tensor.abs().max() <= cfg.clip_value + 1e-7, name

    def test_checkpoint_and_metrics_written(self, tmp_path):
        cfg = desk_config(tmp_path, seed=2, updates=6)
        cfg.checkpoint_every = 3
        _, metrics = train(cfg)
        assert (tmp_path / "checkpoint.pt").exists()
        assert (tmp_path / "generator.lvw").exists()
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert lines[0] == "step,critic_wasserstein,generator_loss,wall_time"
        assert len(lines) == 7
        assert len(metrics.steps) == 6

    def test_divergence_aborts_with_checkpoint(self, tmp_path, monkeypatch):
        cfg = desk_config(tmp_path, seed=3, updates=10)
        cfg.checkpoint_every = 2

        real_train = torch.optim.RMSprop.step
        calls = {"n": 0}

        def sabotage(self, *args, **kwargs):
            calls["n"] += 1
            out = real_train(self, *args, **kwargs)
            if calls["n"] == 40:  # partway through: poison a parameter
                group = self.param_groups[0]["params"]
                with torch.no_grad():
                    group[0].mul_(float("nan"))
            return out

        monkeypatch.setattr(torch.optim.RMSprop, "step", sabotage)
        with pytest.raises(DivergenceError):
            train(cfg)
        assert (tmp_path / "checkpoint.pt").exists()


@pytest.mark.slow
class TestDeskScaleTraining:
    def test_wasserstein_estimate_drops_and_samples_have_minutiae(
            self, tmp_path, inference_cli_available):
        drops = []
        gen_counts = []
        noise_counts = []
        for seed in range(3):
            out = tmp_path / f"run{seed}"
            _, metrics = train(desk_config(out, seed=seed, updates=2000))
            w = np.abs(np.array(metrics.critic_w))
            early = float(np.mean(w[95:106]))  # around step 100
            late = float(np.mean(w[-100:]))
            drops.append(1.0 - late / early)
            summary = sample_minutiae_counts(out / "generator.lvw", n=8,
                                             seed=5, out_dir=out / "samples")
            gen_counts.append(summary["mean_minutiae_generated"])
            noise_counts.append(summary["mean_minutiae_noise_control"])
        median_drop = float(np.median(drops))
        assert median_drop >= 0.30, f"drops {drops}"
        assert float(np.mean(gen_counts)) > 0.0
        assert float(np.mean(noise_counts)) <= 2.0
        print(f"\nSECONDARY wgan-training: PASS (median W drop "
              f"{median_drop:.2f}, drops {[round(d, 2) for d in drops]}, "
              f"sample minutiae {[round(c, 1) for c in gen_counts]}, "
              f"noise {[round(c, 1) for c in noise_counts]})")
