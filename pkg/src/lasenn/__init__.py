"""Latent-space nearest-neighbor augmented classifier inference."""

__version__ = "0.1.0"

from .combiner import LasennConfig, combine, predict, predict_batch, predict_union
from .knn_index import KnnIndex, Metric, NeighborSet
from .tensor_io import LabeledCorpus, LabelVector, read_labels, read_tensor, write_labels, write_tensor

__all__ = [
    "__version__", "LasennConfig", "combine", "predict", "predict_batch", "predict_union",
    "KnnIndex", "Metric", "NeighborSet", "LabeledCorpus", "LabelVector",
    "read_labels", "read_tensor", "write_labels", "write_tensor",
]
