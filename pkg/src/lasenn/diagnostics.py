"""Density diagnostics for latent neighborhoods and two-class projection histograms."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields

import numpy as np
from scipy import stats

from .combiner import LasennConfig, predict_batch
from .knn_index import KnnIndex, NeighborSet
from .tensor_io import LabeledCorpus, LabelVector


def pureness(neighbors: NeighborSet, labels: LabelVector, query_label: int) -> int:
    """Number of neighbors carrying the query's label."""
    if len(neighbors) == 0:
        raise ValueError("empty neighbor set")
    lab = getattr(labels, "labels", labels)
    return int(np.sum(np.asarray(lab)[neighbors.indices] == query_label))


def avg_l2(neighbors: NeighborSet, embeddings, query) -> float:
    """Mean Euclidean (not squared) distance from `query` to its neighbors."""
    if len(neighbors) == 0:
        raise ValueError("empty neighbor set")
    diff = np.asarray(embeddings, dtype=np.float64)[neighbors.indices] - np.asarray(query, dtype=np.float64)
    return float(np.sqrt((diff * diff).sum(axis=1)).mean())


def pearson(x, y) -> tuple[float, float]:
    """Pearson r and its two-sided p-value (t-test, n - 2 degrees of freedom).

    Returns ``(nan, nan)`` when either series is constant.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    if n != y.size:
        raise ValueError("series lengths differ")
    if n < 3:
        raise ValueError("need at least 3 points for a correlation")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = (dx * dx).sum()
    syy = (dy * dy).sum()
    if sxx == 0 or syy == 0:
        return math.nan, math.nan
    r = float((dx * dy).sum() / math.sqrt(sxx * syy))
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return r, float(2.0 * stats.t.sf(abs(t), n - 2))


@dataclass(frozen=True)
class DensityReport:
    corr_P_avgL2: float
    p_value: float
    same_pred: float
    avgL2_corr: float
    avgL2_wrong: float
    avgL2_change: float
    avgL2_all: float
    n: int
    # True when P or avgL2 is constant and the correlation is undefined
    degenerate: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = int(v)
            elif isinstance(v, float):
                v = "NA" if math.isnan(v) else f"{v:.10g}"
            w.writerow([f.name, v])
        return buf.getvalue()


def _masked_mean(values: np.ndarray, mask: np.ndarray) -> float:
    return float(values[mask].mean()) if mask.any() else math.nan


def density_report(
    corpus: LabeledCorpus,
    index: KnnIndex,
    test_embeddings,
    test_logits,
    test_labels,
    config: LasennConfig,
) -> DensityReport:
    """Pureness/avgL2 correlation and conditional mean neighbor distances.

    Neighbors come from `index` with ``config.k``. ``avgL2_corr`` and
    ``avgL2_wrong`` split test points by the native prediction,
    ``avgL2_change`` keeps the points whose LaSeNN class differs from it.
    Empty categories are reported as NaN.
    """
    y = np.asarray(getattr(test_labels, "labels", test_labels), dtype=np.int64)
    if len(y) < 3:
        raise ValueError("density_report needs at least 3 test points")
    q = np.asarray(test_embeddings, dtype=np.float64)
    res = predict_batch(config, corpus, index, q, test_logits, y)
    nn = res.neighbor_indices
    P = (corpus.labels.labels[nn] == y[:, None]).sum(axis=1)
    emb = corpus.embeddings.astype(np.float64)
    diff = emb[nn] - q[:, None, :]
    avg = np.sqrt((diff * diff).sum(axis=2)).mean(axis=1)
    r, p = pearson(P, avg)
    correct = res.native_class == y
    return DensityReport(
        corr_P_avgL2=r,
        p_value=p,
        same_pred=res.summary.same_pred_fraction,
        avgL2_corr=_masked_mean(avg, correct),
        avgL2_wrong=_masked_mean(avg, ~correct),
        avgL2_change=_masked_mean(avg, res.changed),
        avgL2_all=float(avg.mean()),
        n=len(y),
        degenerate=math.isnan(r),
    )


@dataclass(frozen=True)
class ProjectionHistogram:
    class_a: int
    class_b: int
    bin_edges: np.ndarray
    counts_a: np.ndarray
    counts_b: np.ndarray
    counts_changed: np.ndarray
    # distance between the two class means, i.e. where the mean of class b projects
    mean_gap: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count_a", "count_b", "count_changed"])
        for i in range(len(self.counts_a)):
            w.writerow([f"{self.bin_edges[i]:.10g}", f"{self.bin_edges[i + 1]:.10g}",
                        int(self.counts_a[i]), int(self.counts_b[i]), int(self.counts_changed[i])])
        return buf.getvalue()

    def to_svg(self, width: int = 640, height: int = 320) -> str:
        """Overlaid bar chart; changed-sample counts use their own (right) scale."""
        nb = len(self.counts_a)
        pad = 40
        plot_w, plot_h = width - 2 * pad, height - 2 * pad
        bw = plot_w / nb
        top = max(int(self.counts_a.max(initial=0)), int(self.counts_b.max(initial=0)), 1)
        top_c = max(int(self.counts_changed.max(initial=0)), 1)
        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        ]

        def bars(counts, scale, color, opacity):
            for i, c in enumerate(counts.tolist()):
                if c == 0:
                    continue
                h = plot_h * c / scale
                parts.append(
                    f'<rect x="{pad + i * bw:.2f}" y="{pad + plot_h - h:.2f}" width="{bw:.2f}" '
                    f'height="{h:.2f}" fill="{color}" fill-opacity="{opacity}"/>'
                )

        bars(self.counts_a, top, "#1f77b4", 0.5)
        bars(self.counts_b, top, "#d62728", 0.5)
        bars(self.counts_changed, top_c, "#2ca02c", 0.8)
        parts.append(f'<line x1="{pad}" y1="{pad + plot_h}" x2="{pad + plot_w}" '
                     f'y2="{pad + plot_h}" stroke="black"/>')
        parts.append(f'<text x="{pad}" y="{height - 10}" font-size="11">'
                     f'{self.bin_edges[0]:.3g}</text>')
        parts.append(f'<text x="{pad + plot_w}" y="{height - 10}" font-size="11" '
                     f'text-anchor="end">{self.bin_edges[-1]:.3g}</text>')
        parts.append(f'<text x="{pad}" y="20" font-size="12">class {self.class_a} (blue) vs '
                     f'class {self.class_b} (red); changed (green, right scale max {top_c})</text>')
        parts.append("</svg>")
        return "\n".join(parts) + "\n"


def class_means(embeddings, labels) -> dict[int, np.ndarray]:
    emb = np.asarray(embeddings, dtype=np.float64)
    lab = np.asarray(getattr(labels, "labels", labels))
    return {int(c): emb[lab == c].mean(axis=0) for c in np.unique(lab)}


def projection_histogram(embeddings, labels, native_preds, lasenn_preds,
                         class_a: int, bins: int = 50) -> ProjectionHistogram:
    """Histogram of class a and its nearest-mean class b along the line joining their means.

    Projections are scalar: ``(x - mu_a) . u`` with ``u = (mu_b - mu_a) / |mu_b - mu_a|``,
    so mu_a sits at 0 and mu_b at ``|mu_b - mu_a|``.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    lab = np.asarray(getattr(labels, "labels", labels))
    means = class_means(emb, lab)
    if class_a not in means:
        raise ValueError(f"class {class_a} has no samples")
    if len(means) < 2:
        raise ValueError("need at least two classes")
    mu_a = means[class_a]
    others = sorted(c for c in means if c != class_a)
    gaps = [float(np.linalg.norm(means[c] - mu_a)) for c in others]
    class_b = others[int(np.argmin(gaps))]
    gap = min(gaps)
    if gap == 0:
        raise ValueError(f"classes {class_a} and {class_b} have identical means")
    u = (means[class_b] - mu_a) / gap
    sel = (lab == class_a) | (lab == class_b)
    proj = (emb[sel] - mu_a) @ u
    lo, hi = float(proj.min()), float(proj.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    changed = (np.asarray(native_preds) != np.asarray(lasenn_preds))[sel]
    la = lab[sel]
    return ProjectionHistogram(
        class_a=class_a,
        class_b=class_b,
        bin_edges=edges,
        counts_a=np.histogram(proj[la == class_a], edges)[0],
        counts_b=np.histogram(proj[la == class_b], edges)[0],
        counts_changed=np.histogram(proj[changed], edges)[0],
        mean_gap=gap,
    )


def project(embeddings, mu_a, mu_b) -> np.ndarray:
    """Scalar projections onto the unit direction from `mu_a` to `mu_b`, origin at `mu_a`."""
    mu_a = np.asarray(mu_a, dtype=np.float64)
    d = np.asarray(mu_b, dtype=np.float64) - mu_a
    n = np.linalg.norm(d)
    if n == 0:
        raise ValueError("identical means")
    return (np.asarray(embeddings, dtype=np.float64) - mu_a) @ (d / n)
