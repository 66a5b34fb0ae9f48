"""Model zoo: tiny attackable classifiers, training, persistence, data."""

from .base import DifferentiableClassifier, ImageBatch, LabelBatch, loss_gradient
from .cnn import TinyCNN, TinyCnnConfig, build_tiny_cnn
from .data import load_dataset, make_stripes, save_dataset
from .io import WeightFormatError, load_model, load_weights, save_weights
from .train import train_classifier
from .vit import AttentionTrace, TinyViT, TinyViTConfig, build_tiny_vit, collect_attention

__all__ = [
    "AttentionTrace",
    "DifferentiableClassifier",
    "ImageBatch",
    "LabelBatch",
    "TinyCNN",
    "TinyCnnConfig",
    "TinyViT",
    "TinyViTConfig",
    "WeightFormatError",
    "build_tiny_cnn",
    "build_tiny_vit",
    "collect_attention",
    "load_dataset",
    "load_model",
    "load_weights",
    "loss_gradient",
    "make_stripes",
    "save_dataset",
    "save_weights",
    "train_classifier",
]
