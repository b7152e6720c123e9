"""LaSeNN prediction: blend a sample's network output with its neighbors' outputs.

The combined output is ``w_q * C(x) + (1 - w_q) * mean(C(nn) for nn in NN_k(x))``
and the predicted class is its argmax (lowest index on ties).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .knn_index import KnnIndex, Metric, NeighborSet
from .tensor_io import LabeledCorpus


@dataclass(frozen=True)
class LasennConfig:
    k: int = 3
    w_q: float = 0.88
    metric: Metric = Metric.SQUARED_L2
    # 1-based hidden layer feeding the index; None means the last hidden layer
    layer_index: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric.parse(self.metric))
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0.0 <= self.w_q <= 1.0:
            raise ValueError(f"w_q must lie in [0, 1], got {self.w_q}")
        if self.layer_index is not None and self.layer_index < 1:
            raise ValueError(f"layer_index must be >= 1, got {self.layer_index}")


@dataclass(frozen=True)
class CombinedPrediction:
    combined_output: np.ndarray
    predicted_class: int
    native_class: int
    neighbors: NeighborSet

    @property
    def changed(self) -> bool:
        return self.predicted_class != self.native_class


@dataclass(frozen=True)
class BatchSummary:
    n: int
    acc_lasenn: float
    acc_native: float
    delta_acc: float
    same_pred_fraction: float


@dataclass
class BatchResult:
    labels: np.ndarray
    native_class: np.ndarray
    lasenn_class: np.ndarray
    neighbor_indices: np.ndarray
    neighbor_scores: np.ndarray
    combined: np.ndarray
    summary: BatchSummary
    metric: Metric = field(default=Metric.SQUARED_L2)

    @property
    def changed(self) -> np.ndarray:
        return self.native_class != self.lasenn_class

    def __len__(self) -> int:
        return len(self.labels)

    def prediction(self, i: int) -> CombinedPrediction:
        return CombinedPrediction(
            self.combined[i],
            int(self.lasenn_class[i]),
            int(self.native_class[i]),
            NeighborSet(self.neighbor_indices[i], self.neighbor_scores[i], self.metric),
        )

    def predictions(self) -> list[CombinedPrediction]:
        return [self.prediction(i) for i in range(len(self))]


def combine(query_logits, neighbor_logits, w_q: float) -> np.ndarray:
    """Weighted average of a query output and the mean of its neighbors' outputs.

    Works on a single query (``(C,)`` and ``(k, C)``) or a batch
    (``(n, C)`` and ``(n, k, C)``). All arithmetic is float64.
    """
    q = np.asarray(query_logits, dtype=np.float64)
    nn = np.asarray(neighbor_logits, dtype=np.float64)
    if nn.ndim != q.ndim + 1:
        raise ValueError(f"neighbor_logits must have one more axis than query_logits")
    if nn.shape[-2] == 0:
        raise ValueError("at least one neighbor is required")
    if nn.shape[-1] != q.shape[-1] or nn.shape[:-2] != q.shape[:-1]:
        raise ValueError(f"shape mismatch: query {q.shape}, neighbors {nn.shape}")
    return w_q * q + (1.0 - w_q) * nn.mean(axis=-2)


def predict(
    config: LasennConfig,
    corpus: LabeledCorpus,
    index: KnnIndex,
    query_embedding,
    query_logits,
) -> CombinedPrediction:
    q_logits = np.asarray(query_logits, dtype=np.float64)
    if q_logits.shape != (corpus.num_classes,):
        raise ValueError(f"query_logits shape {q_logits.shape} != ({corpus.num_classes},)")
    neighbors = index.query(query_embedding, config.k)
    out = combine(q_logits, corpus.logits[neighbors.indices], config.w_q)
    return CombinedPrediction(out, int(np.argmax(out)), int(np.argmax(q_logits)), neighbors)


def predict_union(
    config: LasennConfig,
    corpus: LabeledCorpus,
    index: KnnIndex,
    query_embeddings,
    query_logits,
) -> CombinedPrediction:
    """Like :func:`predict`, but neighbors come from several views of the query
    (e.g. augmented copies); the k closest rows over all views are used."""
    q_logits = np.asarray(query_logits, dtype=np.float64)
    if q_logits.shape != (corpus.num_classes,):
        raise ValueError(f"query_logits shape {q_logits.shape} != ({corpus.num_classes},)")
    neighbors = index.query_union(query_embeddings, config.k)
    out = combine(q_logits, corpus.logits[neighbors.indices], config.w_q)
    return CombinedPrediction(out, int(np.argmax(out)), int(np.argmax(q_logits)), neighbors)


def predict_batch(
    config: LasennConfig,
    corpus: LabeledCorpus,
    index: KnnIndex,
    query_embeddings,
    query_logits,
    labels,
) -> BatchResult:
    """LaSeNN and native predictions for a labeled query set, with accuracies."""
    q_logits = np.asarray(query_logits, dtype=np.float64)
    y = np.asarray(getattr(labels, "labels", labels), dtype=np.int64)
    if q_logits.ndim != 2 or q_logits.shape[0] == 0:
        raise ValueError("predict_batch needs a non-empty query set")
    if q_logits.shape[1] != corpus.num_classes:
        raise ValueError(f"query outputs have {q_logits.shape[1]} classes, corpus {corpus.num_classes}")
    if len(y) != q_logits.shape[0]:
        raise ValueError(f"{len(y)} labels for {q_logits.shape[0]} queries")
    idx, scores = index.query_batch(query_embeddings, config.k)
    if idx.shape[0] != q_logits.shape[0]:
        raise ValueError("query embeddings and outputs disagree on the number of queries")
    combined = combine(q_logits, corpus.logits[idx], config.w_q)
    native = np.argmax(q_logits, axis=1)
    lasenn = np.argmax(combined, axis=1)
    acc_l = float(np.mean(lasenn == y))
    acc_n = float(np.mean(native == y))
    summary = BatchSummary(
        n=len(y),
        acc_lasenn=acc_l,
        acc_native=acc_n,
        delta_acc=acc_l - acc_n,
        same_pred_fraction=float(np.mean(lasenn == native)),
    )
    return BatchResult(y, native, lasenn, idx, scores, combined, summary, index.metric)


def predictions_csv(result: BatchResult) -> str:
    """Per-query CSV followed by one ``# summary`` line."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    k = result.neighbor_indices.shape[1]
    w.writerow(["query_id", "label", "native_class", "lasenn_class", "changed"]
               + [f"nn{j + 1}" for j in range(k)])
    for i in range(len(result)):
        w.writerow([i, int(result.labels[i]), int(result.native_class[i]),
                    int(result.lasenn_class[i]), int(result.changed[i])]
                   + result.neighbor_indices[i].tolist())
    s = result.summary
    buf.write(
        f"# summary n={s.n} acc_lasenn={s.acc_lasenn:.10f} acc_native={s.acc_native:.10f} "
        f"delta_acc={s.delta_acc:.10f} same_pred_fraction={s.same_pred_fraction:.10f}\n"
    )
    return buf.getvalue()
