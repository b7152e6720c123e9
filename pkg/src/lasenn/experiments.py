"""Desk-scale experiment harness: train, export, index, evaluate, sweep.

Every random stream is derived from the run's seed with :func:`derive_seed`, so
a (setup, seed) pair always yields the same model and the same numbers.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .adversarial import AttackConfig, AttackKind, evaluate_under_attack
from .classifier import (Dataset, MlpClassifier, SyntheticSpec, TrainConfig, export_corpus,
                         generate_synthetic, model_outputs, permute_labels, train)
from .combiner import BatchResult, BatchSummary, LasennConfig, predict_batch
from .diagnostics import DensityReport, density_report
from .knn_index import KnnIndex, Metric

SWEEP_PARAMS = ("metric", "layer", "w_q", "k", "noise")
TABLE_GRIDS = {
    "w_q": (0.0, 0.52, 0.76, 0.88, 0.94, 0.97),
    "k": (8, 4, 3, 2, 1),
    "noise": (0.0, 0.01, 0.04, 0.08, 0.16, 0.32),
    "metric": ("l2", "cosine"),
}


def derive_seed(master: int, *keys) -> int:
    """64-bit seed for a named sub-stream of `master`.

    String keys are folded to integers through their UTF-8 bytes so the mapping
    is stable across processes (no hash randomization).
    """
    ints = []
    for k in keys:
        if isinstance(k, str):
            ints.append(int.from_bytes(k.encode(), "little"))
        else:
            ints.append(int(k))
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(ints))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class ExperimentSetup:
    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    hidden: tuple = (64, 32)
    train: TrainConfig = field(default_factory=TrainConfig)
    lasenn: LasennConfig = field(default_factory=LasennConfig)
    outputs: str = "probs"
    # attack radius as a fraction of the observed feature range, and step count
    attack_eps_fraction: float = 0.1
    attack_steps: int = 10

    def layer_sizes(self) -> list[int]:
        return [self.data.dims, *self.hidden, self.data.num_classes]


class TrainedRun:
    """One trained network with its data, plus cached corpora and indexes."""

    def __init__(self, setup: ExperimentSetup, seed: int, model: MlpClassifier,
                 train_set: Dataset, test_set: Dataset, trace=None, noise_fraction: float = 0.0):
        self.setup = setup
        self.seed = seed
        self.model = model
        self.train_set = train_set
        self.test_set = test_set
        self.trace = trace or []
        self.noise_fraction = noise_fraction
        self._corpora = {}
        self._indexes = {}
        self._queries = {}

    def corpus(self, layer: Optional[int] = None):
        if layer not in self._corpora:
            self._corpora[layer] = export_corpus(
                self.model, self.train_set.X, self.train_set.y, layer, self.setup.outputs)
        return self._corpora[layer]

    def index(self, metric, layer: Optional[int] = None) -> KnnIndex:
        key = (Metric.parse(metric), layer)
        if key not in self._indexes:
            self._indexes[key] = KnnIndex(self.corpus(layer).embeddings, key[0])
        return self._indexes[key]

    def queries(self, layer: Optional[int] = None):
        if layer not in self._queries:
            self._queries[layer] = model_outputs(self.model, self.test_set.X, layer, self.setup.outputs)
        return self._queries[layer]

    def evaluate(self, cfg: Optional[LasennConfig] = None) -> BatchResult:
        cfg = cfg or self.setup.lasenn
        emb, out = self.queries(cfg.layer_index)
        return predict_batch(cfg, self.corpus(cfg.layer_index),
                             self.index(cfg.metric, cfg.layer_index), emb, out, self.test_set.y)

    def density(self, cfg: Optional[LasennConfig] = None) -> DensityReport:
        cfg = cfg or self.setup.lasenn
        emb, out = self.queries(cfg.layer_index)
        return density_report(self.corpus(cfg.layer_index), self.index(cfg.metric, cfg.layer_index),
                              emb, out, self.test_set.y, cfg)

    def feature_range(self) -> tuple[float, float]:
        lo = min(float(self.train_set.X.min()), float(self.test_set.X.min()))
        hi = max(float(self.train_set.X.max()), float(self.test_set.X.max()))
        return lo, hi

    def attack_config(self, kind) -> AttackConfig:
        lo, hi = self.feature_range()
        return AttackConfig.for_range(kind, lo, hi, seed=derive_seed(self.seed, "attack"),
                                      eps_fraction=self.setup.attack_eps_fraction,
                                      num_steps=self.setup.attack_steps)

    def evaluate_attack(self, attack_cfg: AttackConfig,
                        cfg: Optional[LasennConfig] = None) -> BatchSummary:
        cfg = cfg or self.setup.lasenn
        return evaluate_under_attack(
            self.model, self.corpus(cfg.layer_index), self.index(cfg.metric, cfg.layer_index),
            cfg, self.test_set.X, self.test_set.y, attack_cfg, self.setup.outputs)


def load_data(setup: ExperimentSetup) -> tuple[Dataset, Dataset]:
    train_set, test_set, _ = generate_synthetic(setup.data)
    return train_set, test_set


def train_run(setup: ExperimentSetup, seed: int, noise_fraction: float = 0.0,
              data: Optional[tuple[Dataset, Dataset]] = None) -> TrainedRun:
    """Train one network. The dataset is fixed by ``setup.data.seed``; `seed`
    drives initialization, shuffling and label noise."""
    train_set, test_set = data if data is not None else load_data(setup)
    if noise_fraction > 0:
        noisy = permute_labels(train_set.y, noise_fraction, derive_seed(seed, "noise"))
        train_set = Dataset(train_set.X, noisy)
    model = MlpClassifier.initialize(setup.layer_sizes(), derive_seed(seed, "init"))
    cfg = replace(setup.train, seed=derive_seed(seed, "shuffle"))
    model, trace = train(model, train_set.X, train_set.y, cfg)
    return TrainedRun(setup, seed, model, train_set, test_set, trace, noise_fraction)


@dataclass(frozen=True)
class CellStats:
    param: str
    value: str
    n_seeds: int
    acc_lasenn_mean: float
    acc_lasenn_std: float
    acc_native_mean: float
    acc_native_std: float
    delta_acc_mean: float
    delta_acc_std: float
    same_pred_mean: float


def _std(xs: Sequence[float]) -> float:
    return float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0


def aggregate(param: str, value, summaries: Sequence[BatchSummary]) -> CellStats:
    al = [s.acc_lasenn for s in summaries]
    an = [s.acc_native for s in summaries]
    da = [s.delta_acc for s in summaries]
    return CellStats(param, str(value), len(summaries),
                     float(np.mean(al)), _std(al), float(np.mean(an)), _std(an),
                     float(np.mean(da)), _std(da),
                     float(np.mean([s.same_pred_fraction for s in summaries])))


def _cell_config(base: LasennConfig, param: str, value) -> LasennConfig:
    if param == "metric":
        return replace(base, metric=Metric.parse(value))
    if param == "layer":
        return replace(base, layer_index=None if value in (None, "last") else int(value))
    if param == "w_q":
        return replace(base, w_q=float(value))
    if param == "k":
        return replace(base, k=int(value))
    raise ValueError(f"unknown sweep parameter {param!r}")


def sweep(setup: ExperimentSetup, param: str, values: Iterable, seeds: Sequence[int],
          runs: Optional[dict] = None) -> list[CellStats]:
    """Mean/std of LaSeNN accuracy, native accuracy and their delta per grid value.

    Non-noise parameters reuse one trained network per seed; the noise grid
    trains a fresh network per (fraction, seed).
    """
    if param not in SWEEP_PARAMS:
        raise ValueError(f"param must be one of {SWEEP_PARAMS}")
    values = list(values)
    if not values or not seeds:
        raise ValueError("sweep needs a non-empty grid and at least one seed")
    data = load_data(setup)
    rows = []
    if param == "noise":
        for v in values:
            summ = [train_run(setup, s, float(v), data).evaluate().summary for s in seeds]
            rows.append(aggregate(param, v, summ))
        return rows
    if runs is None:
        runs = {}
    for s in seeds:
        if s not in runs:
            runs[s] = train_run(setup, s, 0.0, data)
    for v in values:
        cfg = _cell_config(setup.lasenn, param, v)
        rows.append(aggregate(param, v, [runs[s].evaluate(cfg).summary for s in seeds]))
    return rows


def noise_experiment(setup: ExperimentSetup, fractions: Sequence[float],
                     seeds: Sequence[int]) -> list[CellStats]:
    return sweep(setup, "noise", fractions, seeds)


def density_experiment(setup: ExperimentSetup, seeds: Sequence[int],
                       runs: Optional[dict] = None) -> list[tuple[int, DensityReport]]:
    data = load_data(setup)
    runs = {} if runs is None else runs
    out = []
    for s in seeds:
        if s not in runs:
            runs[s] = train_run(setup, s, 0.0, data)
        out.append((s, runs[s].density()))
    return out


def density_csv(reports: Sequence[tuple[int, DensityReport]]) -> str:
    """One row per seed; NA marks an undefined correlation."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = [f.name for f in fields(DensityReport)]
    w.writerow(["seed"] + names)
    for seed, rep in reports:
        row = [seed]
        for name in names:
            v = getattr(rep, name)
            if isinstance(v, bool):
                row.append(int(v))
            elif isinstance(v, float):
                row.append("NA" if math.isnan(v) else f"{v:.10g}")
            else:
                row.append(v)
        w.writerow(row)
    return buf.getvalue()


def attack_experiment(setup: ExperimentSetup, seeds: Sequence[int],
                      kinds: Sequence[str] = ("none", "bia", "pgd"),
                      runs: Optional[dict] = None) -> list[CellStats]:
    """Clean ("none") and attacked summaries per attack kind, aggregated over seeds."""
    data = load_data(setup)
    runs = {} if runs is None else runs
    per_kind = {k: [] for k in kinds}
    for s in seeds:
        if s not in runs:
            runs[s] = train_run(setup, s, 0.0, data)
        run = runs[s]
        for k in kinds:
            if k == "none":
                per_kind[k].append(run.evaluate().summary)
            else:
                per_kind[k].append(run.evaluate_attack(run.attack_config(AttackKind(k))))
    return [aggregate("attack", k, per_kind[k]) for k in kinds]


def cells_csv(rows: Sequence[CellStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param", "value", "n_seeds", "acc_lasenn_mean", "acc_lasenn_std",
                "acc_native_mean", "acc_native_std", "delta_acc_mean", "delta_acc_std",
                "same_pred_mean"])
    for r in rows:
        w.writerow([r.param, r.value, r.n_seeds] + [
            f"{x:.10f}" for x in (r.acc_lasenn_mean, r.acc_lasenn_std, r.acc_native_mean,
                                  r.acc_native_std, r.delta_acc_mean, r.delta_acc_std,
                                  r.same_pred_mean)])
    return buf.getvalue()
