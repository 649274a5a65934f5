"""Sub-string matching text recognizer.

Trains on short synthetic text images only and recognizes much longer ones by
iteratively matching a fixed-length character window inside the image and
reading off its neighbors in both directions.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .images import ImageTensor
from .model import ModelConfig, init_params
from .synth import CorpusSpec, default_font, render_text, sample_corpus
from .tensor import Tensor, no_grad
from .training import TrainConfig, train
from .vocab import CharVocab

__all__ = [
    "CharVocab", "CorpusSpec", "ImageTensor", "ModelConfig", "Tensor",
    "TrainConfig", "default_font", "init_params", "load_checkpoint", "no_grad",
    "render_text", "sample_corpus", "save_checkpoint", "train",
]

__version__ = "0.1.0"
