"""Attention-based CNN/BiLSTM text segmentation in numpy."""

from .config import TrainConfig
from .corpus import Document, SynthSpec, read_corpus, synth_corpus
from .errors import SegError
from .metrics import evaluate_corpus, pk, window_size, windiff
from .model import ModelParams, forward, predict_document, predict_documents
from .training import fit, load_checkpoint, save_checkpoint

__version__ = "0.1.0"
