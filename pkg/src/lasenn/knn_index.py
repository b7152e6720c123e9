"""Exact brute-force k-nearest-neighbor search over corpus embeddings.

Two metrics are supported. ``SquaredL2`` is a distance (smaller is better),
``Cosine`` is a similarity (larger is better). Results are always ordered
best-first with ties broken by the lower corpus row index, so every query is
fully deterministic.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .tensor_io import as_tensor

# bytes of float64 scratch per distance chunk
_CHUNK_BYTES = 32 * 2**20


class Metric(str, enum.Enum):
    SQUARED_L2 = "l2"
    COSINE = "cosine"

    @classmethod
    def parse(cls, value) -> "Metric":
        if isinstance(value, Metric):
            return value
        key = str(value).strip().lower()
        aliases = {"l2": cls.SQUARED_L2, "squaredl2": cls.SQUARED_L2,
                   "squared_l2": cls.SQUARED_L2, "cosine": cls.COSINE, "cos": cls.COSINE}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown metric {value!r}") from None

    @property
    def larger_is_better(self) -> bool:
        return self is Metric.COSINE


def score(a, b, metric: Metric) -> float:
    """Pairwise metric value between two vectors, in float64."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if metric is Metric.SQUARED_L2:
        diff = a - b
        return float((diff * diff).sum())
    na = np.sqrt((a * a).sum())
    nb = np.sqrt((b * b).sum())
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float((a * b).sum() / (na * nb))


@dataclass(frozen=True)
class NeighborSet:
    """Neighbors of one query, best first."""

    indices: np.ndarray
    scores: np.ndarray
    metric: Metric

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self) -> Iterator[tuple[int, float]]:
        return zip(self.indices.tolist(), self.scores.tolist())

    @property
    def k(self) -> int:
        return len(self.indices)


class KnnIndex:
    """Immutable exact index over the rows of an embedding matrix.

    Parameters
    ----------
    embeddings : array of shape (rows, dims)
        Corpus embeddings; stored as float32, scored in float64.
    metric : Metric or str
        ``"l2"`` (squared Euclidean distance) or ``"cosine"``.

    Rows with zero norm cannot be ranked under cosine similarity; they are
    dropped from the candidate set and a warning is issued.
    """

    def __init__(self, embeddings, metric=Metric.SQUARED_L2):
        emb = as_tensor(embeddings)
        if emb.shape[0] == 0:
            raise ValueError("cannot index an empty matrix")
        self.metric = Metric.parse(metric)
        self._data = emb.astype(np.float64)
        self._data.setflags(write=False)
        self.rows, self.dims = self._data.shape
        self._norms = np.sqrt((self._data * self._data).sum(axis=1))
        self._norms.setflags(write=False)
        if self.metric is Metric.COSINE:
            self.zero_rows = np.flatnonzero(self._norms == 0)
            if self.zero_rows.size:
                warnings.warn(
                    f"{self.zero_rows.size} zero-norm row(s) excluded from cosine index",
                    RuntimeWarning,
                    stacklevel=2,
                )
        else:
            self.zero_rows = np.empty(0, dtype=np.int64)
        self._valid = np.ones(self.rows, dtype=bool)
        self._valid[self.zero_rows] = False
        self._valid.setflags(write=False)

    @property
    def candidate_rows(self) -> int:
        return int(self._valid.sum())

    def _exact(self, queries: np.ndarray, cand: np.ndarray) -> np.ndarray:
        """Metric values for the candidate rows ``cand`` (n_queries, c) of each query."""
        rows = self._data[cand]
        if self.metric is Metric.SQUARED_L2:
            diff = queries[:, None, :] - rows
            return (diff * diff).sum(axis=-1)
        qnorm = np.sqrt((queries * queries).sum(axis=1))
        dots = (queries[:, None, :] * rows).sum(axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return dots / (qnorm[:, None] * self._norms[cand])

    def _prefilter(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cheap matrix-product ranking key (smaller is better) for every row,
        plus a per-query bound on its deviation from the exact metric."""
        dots = queries @ self._data.T
        qnorm = np.sqrt((queries * queries).sum(axis=1))
        slack = 16 * (self.dims + 4) * np.finfo(np.float64).eps
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.metric is Metric.SQUARED_L2:
                key = (qnorm * qnorm)[:, None] + (self._norms * self._norms)[None, :] - 2 * dots
                tol = slack * (qnorm + self._norms.max()) ** 2
            else:
                key = -dots / (qnorm[:, None] * self._norms[None, :])
                tol = np.full(len(queries), slack)
        return key, tol

    def _check_queries(self, queries) -> np.ndarray:
        q = np.asarray(queries, dtype=np.float64)
        if q.ndim == 1:
            q = q[None, :]
        if q.ndim != 2 or q.shape[1] != self.dims:
            raise ValueError(f"query dimension {q.shape[-1]} != index dimension {self.dims}")
        if not np.all(np.isfinite(q)):
            raise ValueError("query contains NaN or Inf")
        if self.metric is Metric.COSINE and np.any((q * q).sum(axis=1) == 0):
            raise ValueError("zero query vector has no cosine similarity")
        return q

    def query_batch(self, queries, k: int, exclude=None) -> tuple[np.ndarray, np.ndarray]:
        """k best rows for each query.

        Returns ``(indices, scores)`` of shape ``(n_queries, m)`` with
        ``m = min(k, available rows)``. `exclude` is either a single row id
        applied to every query or one row id per query (``-1`` for none).
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        q = self._check_queries(queries)
        n = q.shape[0]
        excl = None
        if exclude is not None:
            excl = np.broadcast_to(np.asarray(exclude, dtype=np.int64), (n,))
        available = self.candidate_rows
        if excl is not None and n:
            # every query loses at most one row
            hits = (excl >= 0) & (excl < self.rows)
            hits[hits] &= self._valid[excl[hits]]
            if hits.any():
                available -= 1
        m = min(k, available)
        out_idx = np.empty((n, m), dtype=np.int64)
        out_score = np.empty((n, m), dtype=np.float64)
        if m == 0 or n == 0:
            return out_idx, out_score
        worst = -np.inf if self.metric.larger_is_better else np.inf
        width = min(self.rows, m + 16)
        step = max(1, _CHUNK_BYTES // (16 * self.rows))
        for lo in range(0, n, step):
            hi = min(n, lo + step)
            qc = q[lo:hi]
            key, tol = self._prefilter(qc)
            blocked = np.broadcast_to(~self._valid, key.shape).copy()
            if excl is not None:
                e = excl[lo:hi]
                ok = (e >= 0) & (e < self.rows)
                blocked[np.flatnonzero(ok), e[ok]] = True
            key[blocked] = np.inf
            full = np.ones(hi - lo, dtype=bool)
            cand = None
            if width < self.rows:
                # keep the `width` best approximate rows; the selection is exact
                # when every dropped row trails the m-th kept one by > 2 tol
                part = np.argpartition(key, width, axis=1)
                cand = part[:, :width]
                first_out = np.take_along_axis(key, part[:, width:width + 1], axis=1)[:, 0]
                kept = np.partition(np.take_along_axis(key, cand, axis=1), m - 1, axis=1)[:, m - 1]
                full = ~(first_out > kept + 2 * tol)
            for sel, c in ((np.flatnonzero(~full), cand), (np.flatnonzero(full), None)):
                if sel.size == 0:
                    continue
                if c is None:
                    c = np.broadcast_to(np.arange(self.rows), (sel.size, self.rows))
                else:
                    c = np.sort(c[sel], axis=1)
                s = self._exact(qc[sel], c)
                s[np.take_along_axis(blocked[sel], c, axis=1)] = worst
                rank = -s if self.metric.larger_is_better else s
                # stable sort over ascending row ids: ties keep the lower row
                order = np.argsort(rank, axis=1, kind="stable")[:, :m]
                out_idx[lo + sel] = np.take_along_axis(c, order, axis=1)
                out_score[lo + sel] = np.take_along_axis(s, order, axis=1)
        return out_idx, out_score

    def query(self, q, k: int, exclude: Optional[int] = None) -> NeighborSet:
        q = np.asarray(q)
        if q.ndim != 1:
            raise ValueError("query() takes a single vector; use query_batch()")
        idx, sc = self.query_batch(q, k, exclude=exclude)
        return NeighborSet(idx[0], sc[0], self.metric)

    def query_union(self, queries: Sequence, k: int) -> NeighborSet:
        """Neighbors of several views of one sample, merged.

        Each query contributes its own k best rows; rows found by more than one
        query keep their best score; the k best of the union are returned.
        """
        q = np.asarray(queries, dtype=np.float64)
        if q.ndim == 1:
            q = q[None, :]
        if q.shape[0] == 0:
            raise ValueError("query_union needs at least one query")
        idx, sc = self.query_batch(q, k)
        best: dict[int, float] = {}
        better = (lambda a, b: a > b) if self.metric.larger_is_better else (lambda a, b: a < b)
        for row, s in zip(idx.ravel().tolist(), sc.ravel().tolist()):
            if row not in best or better(s, best[row]):
                best[row] = s
        sign = -1.0 if self.metric.larger_is_better else 1.0
        merged = sorted(best.items(), key=lambda rs: (sign * rs[1], rs[0]))[:k]
        return NeighborSet(
            np.array([r for r, _ in merged], dtype=np.int64),
            np.array([s for _, s in merged], dtype=np.float64),
            self.metric,
        )
