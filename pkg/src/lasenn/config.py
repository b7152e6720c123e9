"""Plain-text ``key = value`` experiment configuration.

Lines are ``key = value``; ``#`` starts a comment. Every key has a typed
default, unknown keys are rejected, and overrides given on the command line
replace file values. The canonical rendering (all keys, sorted, parsed values
re-serialized) is what gets hashed into the run manifest.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

from .classifier import SyntheticSpec, TrainConfig
from .combiner import LasennConfig
from .experiments import SWEEP_PARAMS, TABLE_GRIDS, ExperimentSetup
from .knn_index import Metric
from .toymodel import ToyDistribution


class ConfigError(ValueError):
    """Invalid configuration: unknown key, unparsable value, missing file."""


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in _items(text))


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in _items(text))


def _items(text: str) -> list[str]:
    out = [t.strip() for t in text.split(",") if t.strip()]
    if not out:
        raise ValueError("empty list")
    return out


def _words(text: str) -> tuple:
    return tuple(t.lower() for t in _items(text))


def _layer(text: str):
    text = text.strip().lower()
    return None if text in ("", "last") else int(text)


def _choice(*allowed: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        v = text.strip().lower()
        if v not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}")
        return v
    return parse


def _path(text: str) -> str:
    return text.strip()


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


# key -> (parser, default text)
SCHEMA: dict[str, tuple[Callable[[str], object], str]] = {
    "out": (_path, "runs/out"),
    "seeds": (_ints, "0,1,2,3,4"),
    "data.num_classes": (int, "4"),
    "data.samples_per_class": (int, "1000"),
    "data.test_samples_per_class": (int, "1000"),
    "data.dims": (int, "32"),
    "data.mean_scale": (float, "4.0"),
    "data.stddev": (float, "2.4"),
    "data.seed": (int, "0"),
    "model.hidden": (_ints, "64,32"),
    "train.lr": (float, "0.05"),
    "train.momentum": (float, "0.9"),
    "train.batch_size": (int, "128"),
    "train.weight_decay": (float, "0.0005"),
    "train.epochs": (int, "80"),
    "train.lr_decay": (float, "0.1"),
    "train.milestones": (_floats, "0.5,0.75"),
    "lasenn.k": (int, "3"),
    "lasenn.w_q": (float, "0.88"),
    "lasenn.metric": (_choice("l2", "cosine"), "l2"),
    "lasenn.layer": (_layer, "last"),
    "lasenn.outputs": (_choice("probs", "logits"), "probs"),
    "attack.kinds": (_words, "bia,pgd"),
    "attack.eps_fraction": (float, "0.1"),
    "attack.num_steps": (int, "10"),
    "noise.fractions": (_floats, "0,0.01,0.04,0.08,0.16,0.32"),
    "sweep.param": (_choice(*SWEEP_PARAMS), "w_q"),
    "sweep.values": (_path, ""),
    "diagnose.class_a": (int, "0"),
    "diagnose.bins": (int, "50"),
    "diagnose.svg": (_bool, "true"),
    "toy.distribution": (_choice("skewed", "uniform", "both"), "both"),
    "toy.c": (_floats, "0,0.05,0.1,0.2"),
    "toy.d": (float, "0.02"),
    "toy.a": (float, "0.02"),
    "toy.w_q": (float, "0.75"),
    "toy.n": (int, "100"),
    "toy.trials": (int, "100000"),
    "toy.seed": (int, "0"),
    "toy.drift_n": (_ints, "100,1000,10000"),
    "toy.drift_seeds": (int, "31"),
    "input.data": (_path, ""),
    "input.model": (_path, ""),
    "input.corpus": (_path, ""),
    "input.queries": (_path, ""),
}

# keys that name files or directories
PATH_KEYS = ("input.data", "input.model", "input.corpus", "input.queries")


def parse_lines(lines: Iterable[str], origin: str = "<config>") -> dict[str, str]:
    raw = {}
    for no, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{origin}:{no}: expected 'key = value', got {line.strip()!r}")
        key, value = (t.strip() for t in text.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{origin}:{no}: unknown key {key!r}")
        raw[key] = value
    return raw


@dataclass(frozen=True)
class Config:
    values: dict

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Iterable[str] = (),
             base_dir: Optional[str] = None) -> "Config":
        """Defaults, then the file at `path`, then ``key=value`` overrides.

        Relative input paths in a file resolve against the file's directory.
        """
        raw = {k: d for k, (_, d) in SCHEMA.items()}
        file_raw = {}
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file {path} does not exist")
            file_raw = parse_lines(p.read_text().splitlines(), str(path))
            for k in PATH_KEYS:
                if file_raw.get(k) and not Path(file_raw[k]).is_absolute():
                    file_raw[k] = str(p.parent / file_raw[k])
        raw.update(file_raw)
        raw.update(parse_lines(overrides, "--set"))
        values = {}
        for key, text in raw.items():
            parser = SCHEMA[key][0]
            try:
                values[key] = parser(text)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None
        cfg = cls(values)
        cfg.validate()
        return cfg

    def __getitem__(self, key: str):
        return self.values[key]

    def validate(self) -> None:
        try:
            self.setup()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        for k in self["attack.kinds"]:
            if k not in ("fgsm", "bia", "pgd"):
                raise ConfigError(f"unknown attack kind {k!r}")
        if not 0 < self["attack.eps_fraction"] <= 1:
            raise ConfigError("attack.eps_fraction must lie in (0, 1]")
        if self["attack.num_steps"] < 1:
            raise ConfigError("attack.num_steps must be >= 1")
        if any(not 0 <= f <= 1 for f in self["noise.fractions"]):
            raise ConfigError("noise fractions must lie in [0, 1]")
        if self["toy.trials"] < 1 or self["toy.drift_seeds"] < 1:
            raise ConfigError("toy.trials and toy.drift_seeds must be >= 1")
        if self["diagnose.bins"] < 1:
            raise ConfigError("diagnose.bins must be >= 1")
        if len(set(self["seeds"])) != len(self["seeds"]):
            raise ConfigError("seeds must be distinct")

    def require_inputs(self, *keys: str) -> None:
        """Every named input must be set and exist on disk."""
        for k in keys:
            v = self[k]
            if not v:
                raise ConfigError(f"{k} is required for this command")
            if not Path(v).exists():
                raise ConfigError(f"{k}: {v} does not exist")
        for k in PATH_KEYS:
            if self[k] and not Path(self[k]).exists():
                raise ConfigError(f"{k}: {self[k]} does not exist")

    # -- derived objects -------------------------------------------------

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            num_classes=self["data.num_classes"],
            samples_per_class=self["data.samples_per_class"],
            dims=self["data.dims"],
            cluster_mean_scale=self["data.mean_scale"],
            cluster_stddev=self["data.stddev"],
            seed=self["data.seed"],
            test_samples_per_class=self["data.test_samples_per_class"],
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self["train.lr"], momentum=self["train.momentum"],
                           batch_size=self["train.batch_size"],
                           weight_decay=self["train.weight_decay"], epochs=self["train.epochs"],
                           lr_decay=self["train.lr_decay"], milestones=self["train.milestones"])

    def lasenn_config(self) -> LasennConfig:
        return LasennConfig(k=self["lasenn.k"], w_q=self["lasenn.w_q"],
                            metric=Metric.parse(self["lasenn.metric"]),
                            layer_index=self["lasenn.layer"])

    def setup(self) -> ExperimentSetup:
        if any(h < 1 for h in self["model.hidden"]):
            raise ValueError("hidden layer sizes must be >= 1")
        return ExperimentSetup(data=self.synthetic_spec(), hidden=self["model.hidden"],
                               train=self.train_config(), lasenn=self.lasenn_config(),
                               outputs=self["lasenn.outputs"],
                               attack_eps_fraction=self["attack.eps_fraction"],
                               attack_steps=self["attack.num_steps"])

    def sweep_values(self) -> tuple:
        param = self["sweep.param"]
        text = self["sweep.values"]
        if not text:
            if param == "layer":
                return tuple(range(1, len(self["model.hidden"]) + 1))
            return TABLE_GRIDS[param]
        try:
            if param == "metric":
                return tuple(Metric.parse(v).value for v in _items(text))
            if param == "layer":
                return tuple(_layer(v) or "last" for v in _items(text))
            if param == "k":
                return _ints(text)
            return _floats(text)
        except ValueError as exc:
            raise ConfigError(f"bad sweep.values {text!r} ({exc})") from None

    def toy_distributions(self) -> tuple:
        d = self["toy.distribution"]
        if d == "both":
            return (ToyDistribution.SKEWED_TRIANGULAR, ToyDistribution.UNIFORM)
        return (ToyDistribution(d),)

    # -- reproducibility -------------------------------------------------

    def canonical(self) -> str:
        lines = []
        for key in sorted(self.values):
            v = self.values[key]
            if isinstance(v, tuple):
                v = ",".join(_fmt(x) for x in v)
            else:
                v = _fmt(v)
            lines.append(f"{key}={v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _fmt(v) -> str:
    if v is None:
        return "last"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)
