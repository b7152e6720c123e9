"""Targeted L-inf attacks (FGSM, BIA, PGD) against an MlpClassifier.

All three share one update loop::

    x <- clip(x - step * sign(grad_x CE(model(x), target)), ball(x0, eps), [lo, hi])

FGSM is a single step of size eps, BIA iterates from x0, PGD iterates from a
uniform random start inside the ball.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .classifier import MlpClassifier, input_gradient, model_outputs
from .combiner import BatchSummary, LasennConfig, predict_batch
from .knn_index import KnnIndex
from .tensor_io import LabeledCorpus


class AttackKind(str, enum.Enum):
    FGSM = "fgsm"
    BIA = "bia"
    PGD = "pgd"


@dataclass(frozen=True)
class AttackConfig:
    kind: AttackKind = AttackKind.BIA
    epsilon: float = 0.1
    step_size: float = 0.025
    num_steps: int = 10
    random_start: bool = False
    clamp_lo: float = -np.inf
    clamp_hi: float = np.inf
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.kind, AttackKind):
            object.__setattr__(self, "kind", AttackKind(str(self.kind).lower()))
        if self.epsilon < 0 or not np.isfinite(self.epsilon):
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if self.step_size < 0:
            raise ValueError("step_size must be >= 0")
        if self.kind is not AttackKind.FGSM and self.step_size > self.epsilon:
            raise ValueError(f"step_size {self.step_size} exceeds epsilon {self.epsilon}")
        if self.clamp_lo > self.clamp_hi:
            raise ValueError("clamp_lo must not exceed clamp_hi")

    @classmethod
    def for_range(cls, kind, lo: float, hi: float, seed: int = 0,
                  eps_fraction: float = 0.1, num_steps: int = 10) -> "AttackConfig":
        """Defaults scaled to a feature range: eps = 10% of it, step = eps/4."""
        kind = AttackKind(kind)
        eps = eps_fraction * (hi - lo)
        if kind is AttackKind.FGSM:
            return cls(kind, eps, eps, 1, False, lo, hi, seed)
        return cls(kind, eps, eps / 4, num_steps, kind is AttackKind.PGD, lo, hi, seed)

    def effective(self) -> "AttackConfig":
        """FGSM expressed as the one-step iterative attack it is."""
        if self.kind is AttackKind.FGSM:
            return replace(self, step_size=self.epsilon, num_steps=1, random_start=False)
        return self


def target_label(true_label, num_classes: int):
    """Attack target: the next class index, wrapping around."""
    return (np.asarray(true_label) + 1) % num_classes


def attack(model: MlpClassifier, x, true_label, config: AttackConfig) -> np.ndarray:
    """Adversarial version of `x` (one vector or a batch) aimed at ``target_label``."""
    cfg = config.effective()
    x0 = np.asarray(x, dtype=np.float64)
    single = x0.ndim == 1
    if single:
        x0 = x0[None, :]
    y = np.atleast_1d(np.asarray(true_label, dtype=np.int64))
    if y.shape[0] != x0.shape[0]:
        raise ValueError("one label per input row is required")
    if np.any(x0 < cfg.clamp_lo) or np.any(x0 > cfg.clamp_hi):
        raise ValueError("input lies outside the clamp range")
    target = target_label(y, model.num_classes)
    lo = np.maximum(x0 - cfg.epsilon, cfg.clamp_lo)
    hi = np.minimum(x0 + cfg.epsilon, cfg.clamp_hi)
    adv = x0.copy()
    if cfg.random_start:
        rng = np.random.default_rng(cfg.seed)
        adv = adv + rng.uniform(-cfg.epsilon, cfg.epsilon, size=adv.shape)
        adv = np.clip(adv, lo, hi)
    for _ in range(cfg.num_steps):
        g = input_gradient(model, adv, target)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite input gradient during attack")
        # descend: targeted attacks minimise the loss toward the target class
        adv = np.clip(adv - cfg.step_size * np.sign(g), lo, hi)
    return adv[0] if single else adv


def evaluate_under_attack(
    model: MlpClassifier,
    corpus: LabeledCorpus,
    index: KnnIndex,
    lasenn_config: LasennConfig,
    X_test,
    y_test,
    attack_config: AttackConfig,
    outputs: str = "probs",
) -> BatchSummary:
    """Attack the native model, then score native and LaSeNN on the same inputs."""
    y = np.asarray(getattr(y_test, "labels", y_test), dtype=np.int64)
    adv = attack(model, X_test, y, attack_config)
    emb, out = model_outputs(model, adv, lasenn_config.layer_index, outputs)
    return predict_batch(lasenn_config, corpus, index, emb, out, y).summary
