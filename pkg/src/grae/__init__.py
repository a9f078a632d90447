"""Geometry-regularised autoencoders.

A diffusion-potential embedding (adaptive alpha-decay kernel, entropy-chosen
diffusion time, SMACOF) supplies reference coordinates that an MLP
autoencoder is pulled towards early in training. The trained encoder then
extends the embedding to new points and the decoder inverts it.
"""
from . import autoencoder, datasets, diffusion, mds, metrics, numerics, stitch
from .autoencoder import TrainConfig, decode, encode, init_network, train
from .datasets import LabeledDataset, SplitSpec, make_rotating_object, make_swiss_roll, split
from .mds import Embedding, reference_embed

__version__ = "0.1.0"

__all__ = [
    "autoencoder",
    "datasets",
    "diffusion",
    "mds",
    "metrics",
    "numerics",
    "stitch",
    "Embedding",
    "LabeledDataset",
    "SplitSpec",
    "TrainConfig",
    "decode",
    "encode",
    "init_network",
    "make_rotating_object",
    "make_swiss_roll",
    "reference_embed",
    "split",
    "train",
]
