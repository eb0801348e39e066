"""Hierarchical predictive vision: sparse coding, predictive Complex layers, readouts."""
from .hierarchy import HierarchySpec, Model, build, load_checkpoint, save_checkpoint, step, train_on_stream
from .kernels import BACKEND
from .sparse_coding import Dictionary, SimpleParams, asc_encode, encode_batch

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Dictionary", "HierarchySpec", "Model", "SimpleParams", "asc_encode", "build",
    "encode_batch", "load_checkpoint", "save_checkpoint", "step", "train_on_stream",
]
