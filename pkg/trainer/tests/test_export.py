import numpy as np
import pytest
import torch

from fpwgan.config import TrainingConfig
from fpwgan.export import export_weights, serialize_generator
from fpwgan.models import Generator
from fpwgan.training import train

from conftest import render_raw, run_inference_cli


@pytest.fixture(scope="module")
def briefly_trained(tmp_path_factory):
    """A handful of real updates so batchnorm statistics are non-trivial."""
    out = tmp_path_factory.mktemp("brief")
    cfg = TrainingConfig(dataset_dir=None, out_dir=str(out), batch_size=8,
                         generator_updates=12, latent_dim=16, crop_size=32,
                         width=0.125, checkpoint_every=12, synthetic_images=32,
                         seed=3)
    g, _ = train(cfg)
    return g, out / "generator.lvw"


class TestSerialization:
    def test_export_is_deterministic(self, briefly_trained):
        g, _ = briefly_trained
        assert serialize_generator(g) == serialize_generator(g)

    def test_non_finite_weights_refused(self):
        g = Generator(latent_dim=8, output_size=32, width=0.0625)
        with torch.no_grad():
            g.fc.weight[0, 0] = float("nan")
        with pytest.raises(ValueError):
            serialize_generator(g)

    def test_magic_and_trailer(self, briefly_trained):
        g, _ = briefly_trained
        blob = serialize_generator(g)
        assert blob[:4] == b"LVEW"
        import struct, zlib
        assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(blob[:-4]) & 0xFFFFFFFF


class TestCrossComponentBoundary:
    def test_inference_runtime_agrees_within_1e4(self, briefly_trained, tmp_path,
                                                 inference_cli_available):
        g, weights = briefly_trained
        g.eval()
        torch.manual_seed(11)
        worst = 0.0
        for i in range(10):
            z = torch.randn(1, g.latent_dim)
            with torch.no_grad():
                ours = g(z)[0, 0].numpy()
            theirs = render_raw(weights, z[0].numpy(), tmp_path / f"r{i}")
            worst = max(worst, float(np.abs(ours - theirs).mean()))
        assert worst <= 1e-4, f"mean abs pre-quantization diff {worst}"

    def test_corrupted_byte_rejected_via_crc(self, briefly_trained, tmp_path,
                                             inference_cli_available):
        _, weights = briefly_trained
        blob = bytearray(weights.read_bytes())
        blob[100] ^= 0x01
        bad = tmp_path / "bad.lvw"
        bad.write_bytes(bytes(blob))
        proc = run_inference_cli("gen-sample", "--weights", bad, "--n", "1",
                                 "--out", tmp_path / "bad_out")
        assert proc.returncode == 3  # data error
        assert "CRC" in proc.stderr or "corrupt" in proc.stderr.lower()

    def test_export_twice_byte_identical_files(self, briefly_trained, tmp_path):
        g, _ = briefly_trained
        a = export_weights(g, tmp_path / "a.lvw")
        b = export_weights(g, tmp_path / "b.lvw")
        assert a.read_bytes() == b.read_bytes()
