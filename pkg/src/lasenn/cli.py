"""Command-line experiment runner.

Every subcommand reads a ``key = value`` config (``--config``) with optional
``--set key=value`` overrides, writes its artifacts under ``out``, and records
a ``manifest.txt`` with the config hash, seeds and toolkit version. Exit status
is 0 on success, 2 for configuration errors and 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .classifier import Dataset, generate_synthetic, load_model, model_outputs, save_model
from .combiner import predict_batch, predictions_csv
from .config import Config, ConfigError
from .diagnostics import projection_histogram
from .experiments import (attack_experiment, cells_csv, density_csv, density_experiment,
                          noise_experiment, sweep, train_run)
from .knn_index import KnnIndex
from .tensor_io import (LabeledCorpus, load_corpus, read_labels, read_tensor, save_corpus,
                        write_labels, write_tensor)
from .toymodel import (ToyModelConfig, boundary_drift, drift_csv, estimate_nn_blue_prob,
                       estimates_csv)

DATA_FILES = ("train.lsnn", "train.lsnl", "test.lsnn", "test.lsnl")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(text)


def _load_data(cfg: Config) -> tuple[Dataset, Dataset]:
    src = cfg["input.data"]
    if not src:
        train_set, test_set, _ = generate_synthetic(cfg.synthetic_spec())
        return train_set, test_set
    d = Path(src)
    missing = [f for f in DATA_FILES if not (d / f).is_file()]
    if missing:
        raise ConfigError(f"input.data {src} lacks {', '.join(missing)}")
    return (Dataset(read_tensor(d / "train.lsnn").astype(np.float64), read_labels(d / "train.lsnl")),
            Dataset(read_tensor(d / "test.lsnn").astype(np.float64), read_labels(d / "test.lsnl")))


def cmd_gen_data(cfg: Config, out: Path) -> list[Path]:
    train_set, test_set, _ = generate_synthetic(cfg.synthetic_spec())
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f for f in DATA_FILES]
    write_tensor(train_set.X, paths[0])
    write_labels(train_set.y, paths[1])
    write_tensor(test_set.X, paths[2])
    write_labels(test_set.y, paths[3])
    return paths


def cmd_train(cfg: Config, out: Path) -> list[Path]:
    data = _load_data(cfg)
    setup = cfg.setup()
    paths = []
    for s in cfg["seeds"]:
        run = train_run(setup, s, 0.0, data)
        mp = out / f"model_seed{s}.lsnm"
        out.mkdir(parents=True, exist_ok=True)
        save_model(run.model, mp)
        lines = ["epoch,lr,loss,accuracy"]
        lines += [f"{e.epoch},{e.lr!r},{e.loss:.10f},{e.accuracy:.10f}" for e in run.trace]
        tp = out / f"trace_seed{s}.csv"
        _write(tp, "\n".join(lines) + "\n")
        paths += [mp, tp]
    return paths


def cmd_export_corpus(cfg: Config, out: Path) -> list[Path]:
    cfg.require_inputs("input.model")
    model = load_model(cfg["input.model"])
    train_set, test_set = _load_data(cfg)
    layer, outputs = cfg["lasenn.layer"], cfg["lasenn.outputs"]
    paths = []
    for name, ds in (("corpus", train_set), ("queries", test_set)):
        emb, logits = model_outputs(model, ds.X, layer, outputs)
        save_corpus(LabeledCorpus(emb, logits, ds.y), out / name)
        paths.append(out / name)
    return paths


def cmd_build_index(cfg: Config, out: Path) -> list[Path]:
    cfg.require_inputs("input.corpus")
    corpus = load_corpus(cfg["input.corpus"])
    index = KnnIndex(corpus.embeddings, cfg["lasenn.metric"])
    text = ("metric,rows,dims,zero_rows,candidate_rows\n"
            f"{index.metric.value},{index.rows},{index.dims},{index.zero_rows.size},"
            f"{index.candidate_rows}\n")
    p = out / "index.csv"
    _write(p, text)
    return [p]


def cmd_predict(cfg: Config, out: Path) -> list[Path]:
    cfg.require_inputs("input.corpus", "input.queries")
    corpus = load_corpus(cfg["input.corpus"])
    queries = load_corpus(cfg["input.queries"])
    lcfg = cfg.lasenn_config()
    index = KnnIndex(corpus.embeddings, lcfg.metric)
    res = predict_batch(lcfg, corpus, index, queries.embeddings, queries.logits, queries.labels)
    p = out / "predictions.csv"
    _write(p, predictions_csv(res))
    s = res.summary
    print(f"n={s.n} acc_lasenn={s.acc_lasenn:.6f} acc_native={s.acc_native:.6f} "
          f"delta_acc={s.delta_acc:+.6f} same_pred={s.same_pred_fraction:.6f}")
    return [p]


def cmd_sweep(cfg: Config, out: Path) -> list[Path]:
    rows = sweep(cfg.setup(), cfg["sweep.param"], cfg.sweep_values(), cfg["seeds"])
    p = out / f"sweep_{cfg['sweep.param']}.csv"
    _write(p, cells_csv(rows))
    return [p]


def cmd_noise_exp(cfg: Config, out: Path) -> list[Path]:
    rows = noise_experiment(cfg.setup(), cfg["noise.fractions"], cfg["seeds"])
    p = out / "noise.csv"
    _write(p, cells_csv(rows))
    return [p]


def cmd_attack_exp(cfg: Config, out: Path) -> list[Path]:
    kinds = ("none",) + tuple(k for k in cfg["attack.kinds"] if k != "none")
    rows = attack_experiment(cfg.setup(), cfg["seeds"], kinds)
    p = out / "attack.csv"
    _write(p, cells_csv(rows))
    return [p]


def cmd_diagnose(cfg: Config, out: Path) -> list[Path]:
    setup = cfg.setup()
    runs: dict = {}
    reports = density_experiment(setup, cfg["seeds"], runs)
    paths = [out / "density.csv"]
    _write(paths[0], density_csv(reports))
    layer = setup.lasenn.layer_index
    for s in cfg["seeds"]:
        run = runs[s]
        res = run.evaluate()
        emb, _ = run.queries(layer)
        hist = projection_histogram(emb, run.test_set.y, res.native_class, res.lasenn_class,
                                    cfg["diagnose.class_a"], cfg["diagnose.bins"])
        p = out / f"projection_seed{s}.csv"
        _write(p, hist.to_csv())
        paths.append(p)
        if cfg["diagnose.svg"]:
            p = out / f"projection_seed{s}.svg"
            _write(p, hist.to_svg())
            paths.append(p)
    return paths


def cmd_toymodel(cfg: Config, out: Path) -> list[Path]:
    paths = []
    for dist in cfg.toy_distributions():
        ests = []
        for c in cfg["toy.c"]:
            tc = ToyModelConfig(dist, c=c, d=cfg["toy.d"], a=cfg["toy.a"], w_q=cfg["toy.w_q"],
                                n=cfg["toy.n"], seed=cfg["toy.seed"])
            ests.append(estimate_nn_blue_prob(tc, cfg["toy.trials"]))
        p = out / f"toymodel_{dist.value}.csv"
        _write(p, estimates_csv(ests))
        rows = boundary_drift(dist, cfg["toy.drift_n"], range(cfg["toy.drift_seeds"]))
        q = out / f"drift_{dist.value}.csv"
        _write(q, drift_csv(rows))
        paths += [p, q]
    return paths


COMMANDS = {
    "gen-data": (cmd_gen_data, "write a synthetic train/test set"),
    "train": (cmd_train, "train one classifier per seed"),
    "export-corpus": (cmd_export_corpus, "export embeddings/outputs of a trained model"),
    "build-index": (cmd_build_index, "validate a corpus and report index statistics"),
    "predict": (cmd_predict, "LaSeNN predictions for an exported query set"),
    "sweep": (cmd_sweep, "grid over metric, layer, w_q, k or noise"),
    "noise-exp": (cmd_noise_exp, "label-noise experiment"),
    "attack-exp": (cmd_attack_exp, "targeted adversarial-attack experiment"),
    "diagnose": (cmd_diagnose, "density metrics and projection histograms"),
    "toymodel": (cmd_toymodel, "Monte-Carlo check of the 1-D boundary model"),
}


def write_manifest(cfg: Config, command: str, out: Path, artifacts: Sequence[Path]) -> Path:
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    lines = [
        f"command={command}",
        f"version={__version__}",
        f"config_hash={cfg.digest()}",
        "seeds=" + ",".join(str(s) for s in cfg["seeds"]),
        f"created={stamp}",
    ]
    lines += ["artifact=" + str(Path(a).relative_to(out)) for a in artifacts]
    lines += ["config." + line for line in cfg.canonical().splitlines()]
    p = out / "manifest.txt"
    _write(p, "\n".join(lines) + "\n")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lasenn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", "-c", help="key = value config file")
        p.add_argument("--set", "-s", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable; wins over the file)")
        p.add_argument("--out", "-o", help="output directory (same as --set out=DIR)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    overrides = list(args.set)
    if args.out:
        overrides.append(f"out={args.out}")
    try:
        cfg = Config.load(args.config, overrides)
        out = Path(cfg["out"])
        fn = COMMANDS[args.command][0]
        artifacts = fn(cfg, out)
        write_manifest(cfg, args.command, out, artifacts)
    except ConfigError as exc:
        print(f"lasenn: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any failure is a runtime error
        print(f"lasenn: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for a in artifacts:
        print(a)
    return 0


if __name__ == "__main__":
    sys.exit(main())
