"""WGAN trainer for partial-fingerprint generators. The only contract with
the inference side is the exported ".lvw" weight file."""

__version__ = "0.1.0"

from .config import TrainingConfig
from .models import Critic, Generator
from .export import export_weights, serialize_generator
from .training import train

__all__ = ["TrainingConfig", "Generator", "Critic", "export_weights",
           "serialize_generator", "train"]
