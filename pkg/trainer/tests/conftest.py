import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest


def run_inference_cli(*args) -> subprocess.CompletedProcess:
    """Invoke the inference toolkit through its command-line interface;
    together with the .lvw file format this is the whole cross-component
    boundary."""
    return subprocess.run([sys.executable, "-m", "masterprint.cli",
                           *[str(a) for a in args]],
                          capture_output=True, text=True)


@pytest.fixture(scope="session")
def inference_cli_available():
    proc = run_inference_cli("--version")
    if proc.returncode != 0:
        pytest.skip("inference CLI not installed")
    return True


def render_raw(weights: Path, latent: np.ndarray, out_dir: Path) -> np.ndarray:
    """Pre-quantization output of the inference runtime for one latent."""
    out_dir.mkdir(parents=True, exist_ok=True)
    latent_file = out_dir / "latent.csv"
    np.savetxt(latent_file, latent.reshape(1, -1), delimiter=",", fmt="%.17g")
    proc = run_inference_cli("gen-sample", "--weights", weights,
                             "--latent", latent_file, "--raw",
                             "--out", out_dir / "render")
    assert proc.returncode == 0, proc.stderr
    return np.load(out_dir / "render" / "sample_00_raw.npy")


def sample_minutiae_counts(weights: Path, n: int, seed: int, out_dir: Path) -> dict:
    proc = run_inference_cli("gen-sample", "--weights", weights, "--n", n,
                             "--seed", seed, "--out", out_dir)
    assert proc.returncode == 0, proc.stderr
    return json.loads((out_dir / "summary.json").read_text())
