"""Small ReLU/softmax MLP with hand-written backprop, plus its data plumbing.

The hidden activations of the network are the latent embeddings searched by
the kNN index. Everything here is float64 and deterministic given a seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .tensor_io import FormatError, LabeledCorpus, LabelVector

MODEL_MAGIC = b"LSNM"
MODEL_VERSION = 1
_DTYPE_FLOAT64 = 1
_MODEL_HEADER = struct.Struct("<4sBBHI")  # magic, version, dtype, reserved, n_sizes


class TrainingDiverged(RuntimeError):
    pass


class MlpClassifier:
    """Feed-forward network: ReLU hidden layers, softmax output.

    ``weights[l]`` has shape ``(layer_sizes[l], layer_sizes[l + 1])`` so a batch
    ``X`` of shape ``(n, in)`` maps through ``X @ W + b``.
    """

    def __init__(self, layer_sizes: Sequence[int], weights=None, biases=None):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {layer_sizes}")
        self.layer_sizes = sizes
        if weights is None:
            weights = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        if biases is None:
            biases = [np.zeros(b) for b in sizes[1:]]
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for l, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            if self.weights[l].shape != (a, b) or self.biases[l].shape != (b,):
                raise ValueError(f"layer {l} parameters do not match sizes {a}->{b}")
            if not (np.all(np.isfinite(self.weights[l])) and np.all(np.isfinite(self.biases[l]))):
                raise ValueError(f"layer {l} has non-finite parameters")

    @classmethod
    def initialize(cls, layer_sizes: Sequence[int], seed: int) -> "MlpClassifier":
        """He-normal weights, zero biases."""
        rng = np.random.default_rng(seed)
        ws = [rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b))
              for a, b in zip(layer_sizes[:-1], layer_sizes[1:])]
        return cls(layer_sizes, ws)

    @property
    def num_hidden(self) -> int:
        return len(self.layer_sizes) - 2

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpClassifier":
        return MlpClassifier(self.layer_sizes, self.weights, self.biases)

    def forward(self, x):
        """Hidden activations and output probabilities.

        Accepts one vector or a batch. Returns ``(hidden, probs)`` where
        ``hidden`` is a list with one post-ReLU array per hidden layer.
        """
        hidden, logits = self._forward(x)
        return hidden, softmax(logits)

    def _forward(self, x):
        a = np.asarray(x, dtype=np.float64)
        if a.shape[-1] != self.layer_sizes[0]:
            raise ValueError(f"input dimension {a.shape[-1]} != {self.layer_sizes[0]}")
        hidden = []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ w + b, 0.0)
            hidden.append(a)
        return hidden, a @ self.weights[-1] + self.biases[-1]

    def logits(self, x) -> np.ndarray:
        return self._forward(x)[1]

    def predict_proba(self, x) -> np.ndarray:
        return softmax(self.logits(x))

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.logits(x), axis=-1)

    def embed(self, x, layer_index: Optional[int] = None) -> np.ndarray:
        """Activations of hidden layer `layer_index` (1-based; default last)."""
        i = self._check_layer(layer_index)
        return self._forward(x)[0][i - 1]

    def _check_layer(self, layer_index: Optional[int]) -> int:
        if self.num_hidden < 1:
            raise ValueError("model has no hidden layer to take embeddings from")
        i = self.num_hidden if layer_index is None else int(layer_index)
        if not 1 <= i <= self.num_hidden:
            raise ValueError(f"layer_index must be in [1, {self.num_hidden}], got {layer_index}")
        return i


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(model: MlpClassifier, X, y) -> float:
    """Mean cross-entropy of integer targets `y`."""
    z = model.logits(X)
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    return float(np.mean(lse - z[np.arange(len(y)), y]))


def _backward(model: MlpClassifier, X, y):
    """Gradients of the summed cross-entropy w.r.t. params and inputs."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    hidden, z = model._forward(X)
    delta = softmax(z)
    delta[np.arange(len(y)), y] -= 1.0
    acts = [X] + hidden
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.weights)
    for l in range(len(model.weights) - 1, -1, -1):
        grads_w[l] = acts[l].T @ delta
        grads_b[l] = delta.sum(axis=0)
        delta = delta @ model.weights[l].T
        if l > 0:
            # ReLU subgradient at 0 is 0
            delta = delta * (acts[l] > 0)
    return grads_w, grads_b, delta


def gradient(model: MlpClassifier, X, y) -> list[np.ndarray]:
    """Analytic gradient of the mean cross-entropy, ordered like ``model.params()``."""
    gw, gb, _ = _backward(model, X, y)
    n = len(np.asarray(y))
    out = []
    for w, b in zip(gw, gb):
        out += [w / n, b / n]
    return out


def input_gradient(model: MlpClassifier, X, y) -> np.ndarray:
    """Per-sample gradient of cross-entropy w.r.t. the input rows."""
    return _backward(model, X, y)[2]


@dataclass
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 128
    weight_decay: float = 5e-4
    epochs: int = 80
    seed: int = 0
    lr_decay: float = 0.1
    # fractions of `epochs` at which lr is multiplied by lr_decay
    milestones: tuple = (0.5, 0.75)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")

    def lr_at(self, epoch: int) -> float:
        passed = sum(epoch >= int(round(m * self.epochs)) for m in self.milestones)
        return self.lr * self.lr_decay**passed


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss: float
    accuracy: float


def sgd_step(params, grads, velocity, lr, momentum, weight_decay) -> None:
    """In-place SGD with momentum and coupled L2 decay: v = m*v + g + wd*p; p -= lr*v."""
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v


def train(model: MlpClassifier, X, y, config: TrainConfig):
    """Mini-batch SGD on mean cross-entropy. Returns ``(model, trace)``.

    The input model is left untouched. The trace holds full-training-set loss
    and accuracy after every epoch.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(getattr(y, "labels", y), dtype=np.int64)
    if X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ValueError("need a non-empty dataset with one label per row")
    model = model.copy()
    params = model.params()
    velocity = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(config.seed)
    n = X.shape[0]
    trace = []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            sel = order[lo:lo + config.batch_size]
            grads = gradient(model, X[sel], y[sel])
            sgd_step(params, grads, velocity, lr, config.momentum, config.weight_decay)
        loss = cross_entropy(model, X, y)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss} in epoch {epoch} (lr={lr})")
        acc = float(np.mean(model.predict(X) == y))
        trace.append(EpochStats(epoch, lr, loss, acc))
    return model, trace


@dataclass
class SyntheticSpec:
    num_classes: int = 4
    samples_per_class: int = 500
    dims: int = 16
    cluster_mean_scale: float = 4.0
    cluster_stddev: float = 1.0
    seed: int = 0
    test_samples_per_class: Optional[int] = None

    def __post_init__(self):
        if min(self.num_classes, self.samples_per_class, self.dims) < 1:
            raise ValueError("counts must be >= 1")
        if self.cluster_stddev <= 0:
            raise ValueError("cluster_stddev must be > 0")
        if self.test_samples_per_class is not None and self.test_samples_per_class < 1:
            raise ValueError("test_samples_per_class must be >= 1")


@dataclass
class Dataset:
    X: np.ndarray
    y: LabelVector

    def __len__(self) -> int:
        return self.X.shape[0]


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, Dataset, np.ndarray]:
    """Isotropic Gaussian clusters, one per class.

    Class means are drawn uniformly from ``[0, cluster_mean_scale]^dims``.
    Returns ``(train, test, means)``; rows are grouped by class.
    """
    rng = np.random.default_rng(spec.seed)
    means = rng.uniform(0.0, spec.cluster_mean_scale, size=(spec.num_classes, spec.dims))
    n_test = spec.test_samples_per_class or spec.samples_per_class

    def draw(per_class):
        X = np.concatenate([
            means[c] + spec.cluster_stddev * rng.standard_normal((per_class, spec.dims))
            for c in range(spec.num_classes)
        ])
        y = np.repeat(np.arange(spec.num_classes), per_class)
        return Dataset(X, LabelVector(y, spec.num_classes))

    train_set = draw(spec.samples_per_class)
    test_set = draw(n_test)
    return train_set, test_set, means


def permute_labels(labels: LabelVector, fraction: float, seed: int) -> LabelVector:
    """Relabel round(fraction * N) random rows with a different, uniformly chosen class."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    n = len(labels)
    m = int(np.floor(fraction * n + 0.5))
    if m == 0:
        return labels
    if labels.num_classes < 2:
        raise ValueError("cannot permute labels with fewer than 2 classes")
    rng = np.random.default_rng(seed)
    rows = rng.choice(n, size=m, replace=False)
    shift = rng.integers(1, labels.num_classes, size=m)
    out = labels.labels.copy()
    out[rows] = (out[rows] + shift) % labels.num_classes
    return LabelVector(out, labels.num_classes)


def export_corpus(model: MlpClassifier, X, labels: LabelVector,
                  layer_index: Optional[int] = None, outputs: str = "probs") -> LabeledCorpus:
    """Embeddings of hidden layer `layer_index` and the model outputs for every row.

    `outputs` selects post-softmax ``"probs"`` (default) or pre-softmax ``"logits"``.
    """
    i = model._check_layer(layer_index)
    hidden, z = model._forward(X)
    if outputs == "probs":
        out = softmax(z)
    elif outputs == "logits":
        out = z
    else:
        raise ValueError(f"outputs must be 'probs' or 'logits', got {outputs!r}")
    return LabeledCorpus(hidden[i - 1], out, labels)


def model_outputs(model: MlpClassifier, X, layer_index: Optional[int] = None,
                  outputs: str = "probs") -> tuple[np.ndarray, np.ndarray]:
    """``(embeddings, outputs)`` for query rows, rounded to float32 like a corpus."""
    i = model._check_layer(layer_index)
    hidden, z = model._forward(X)
    out = softmax(z) if outputs == "probs" else z
    return hidden[i - 1].astype(np.float32), out.astype(np.float32)


def save_model(model: MlpClassifier, path) -> None:
    """LSNM checkpoint: header, u64 layer sizes, then per layer W (row-major) and b, float64 LE."""
    sizes = model.layer_sizes
    with open(path, "wb") as f:
        f.write(_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, _DTYPE_FLOAT64, 0, len(sizes)))
        f.write(np.asarray(sizes, dtype="<u8").tobytes())
        for w, b in zip(model.weights, model.biases):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path) -> MlpClassifier:
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MODEL_MAGIC!r}")
    if len(data) < _MODEL_HEADER.size:
        raise EOFError("truncated LSNM header")
    _, version, dtype, reserved, n_sizes = _MODEL_HEADER.unpack_from(data)
    if version != MODEL_VERSION or dtype != _DTYPE_FLOAT64 or reserved:
        raise FormatError(f"unsupported LSNM header (version={version}, dtype={dtype})")
    off = _MODEL_HEADER.size
    if len(data) < off + 8 * n_sizes:
        raise EOFError("truncated LSNM layer sizes")
    sizes = np.frombuffer(data, dtype="<u8", count=n_sizes, offset=off).astype(int).tolist()
    off += 8 * n_sizes
    ws, bs = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        need = 8 * (a * b + b)
        if len(data) < off + need:
            raise EOFError("truncated LSNM parameters")
        ws.append(np.frombuffer(data, dtype="<f8", count=a * b, offset=off).reshape(a, b))
        off += 8 * a * b
        bs.append(np.frombuffer(data, dtype="<f8", count=b, offset=off))
        off += 8 * b
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes after LSNM parameters")
    return MlpClassifier(sizes, ws, bs)
