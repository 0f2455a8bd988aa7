"""Learned image codec with a tunable importance mask and adversarial training."""

from .bitstream import decode_stream, encode_stream
from .checkpoint import Checkpoint, load_model, save_model
from .codec import compress, decompress
from .config import TrainConfig
from .pipeline import PipelineConfig
from .train import train

__version__ = "0.1.0"
