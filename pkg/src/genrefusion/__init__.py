"""Music genre classification from mel spectrograms and lyrics, fused late.

A small numpy autodiff engine drives a 1-D CNN over spectrograms and a
hierarchical attention GRU encoder over lyrics.
"""
from .model import FMA_GENRES, GenreClassifier, ModelShape
from .train import TrainConfig, Trainer, predict

__all__ = ["FMA_GENRES", "GenreClassifier", "ModelShape", "TrainConfig", "Trainer", "predict"]
__version__ = "0.1.0"
