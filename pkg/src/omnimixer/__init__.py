"""Snapshot-to-panorama conditional GAN with MLP-mixer and depthwise-convolution blocks."""

from .config import Ablations, Config, LossWeights, ModelConfig, TrainConfig
from .discriminator import Discriminator
from .generator import Generator, generate

__version__ = "0.1.0"

__all__ = ["Ablations", "Config", "Discriminator", "Generator", "LossWeights", "ModelConfig",
           "TrainConfig", "generate", "__version__"]
