import csv
import io

import pytest

from lasenn.cli import main
from lasenn.config import Config, ConfigError

TINY = ["data.samples_per_class=30", "data.test_samples_per_class=15", "data.dims=4",
        "data.stddev=1.0", "model.hidden=8,6", "train.epochs=4", "seeds=0,1"]


def run(*args, sets=()):
    argv = list(args)
    for s in list(TINY) + list(sets):
        argv += ["--set", s]
    return main(argv)


def read_rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


class TestConfig:
    def test_defaults_follow_the_canonical_rule(self):
        cfg = Config.load()
        lc = cfg.lasenn_config()
        assert (lc.k, lc.w_q, lc.metric.value, lc.layer_index) == (3, 0.88, "l2", None)
        assert cfg["seeds"] == (0, 1, 2, 3, 4)

    def test_unknown_key_in_file(self, tmp_path):
        p = tmp_path / "a.cfg"
        p.write_text("lasenn.k = 3\nlasenn.kk = 4\n")
        with pytest.raises(ConfigError, match="unknown key"):
            Config.load(str(p))

    def test_override_wins(self, tmp_path):
        p = tmp_path / "a.cfg"
        p.write_text("# comment\nlasenn.k = 5  # trailing\n")
        assert Config.load(str(p))["lasenn.k"] == 5
        assert Config.load(str(p), ["lasenn.k=7"])["lasenn.k"] == 7

    @pytest.mark.parametrize("line", ["lasenn.k=three", "lasenn.metric=manhattan", "seeds=",
                                      "lasenn.w_q=1.5", "attack.kinds=bia,cw", "noise.fractions=0,2",
                                      "seeds=1,1", "no equals sign"])
    def test_bad_values(self, line):
        with pytest.raises(ConfigError):
            Config.load(None, [line])

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError):
            Config.load(str(tmp_path / "absent.cfg"))

    def test_relative_inputs_resolve_against_file(self, tmp_path):
        (tmp_path / "d").mkdir()
        p = tmp_path / "a.cfg"
        p.write_text("input.corpus = d\n")
        cfg = Config.load(str(p))
        cfg.require_inputs("input.corpus")
        assert cfg["input.corpus"] == str(tmp_path / "d")

    def test_hash_tracks_every_key(self):
        base = Config.load()
        assert Config.load().digest() == base.digest()
        assert Config.load(None, ["lasenn.k=3"]).digest() == base.digest()
        assert Config.load(None, ["lasenn.k=4"]).digest() != base.digest()
        assert Config.load(None, ["toy.seed=1"]).digest() != base.digest()

    def test_sweep_values(self):
        assert Config.load(None, ["sweep.param=k"]).sweep_values() == (8, 4, 3, 2, 1)
        assert Config.load(None, ["sweep.param=layer"]).sweep_values() == (1, 2)
        cfg = Config.load(None, ["sweep.param=metric", "sweep.values=cos,l2"])
        assert cfg.sweep_values() == ("cosine", "l2")


class TestCommands:
    def test_toymodel_row(self, tmp_path):
        out = tmp_path / "toy"
        assert run("toymodel", "-o", str(out), sets=["toy.c=0.1", "toy.trials=2000",
                                                     "toy.distribution=skewed"]) == 0
        rows = read_rows(out / "toymodel_skewed.csv")
        assert list(rows[0]) == ["c", "d", "a", "n_trials", "mc_estimate", "mc_stderr", "analytic"]
        assert float(rows[0]["analytic"]) == pytest.approx(0.6)
        assert (out / "drift_skewed.csv").is_file()

    def test_pipeline_and_identity(self, tmp_path):
        assert run("gen-data", "-o", str(tmp_path / "data")) == 0
        assert run("train", "-o", str(tmp_path / "m"), sets=[f"input.data={tmp_path / 'data'}"]) == 0
        assert (tmp_path / "m" / "model_seed1.lsnm").is_file()
        assert run("export-corpus", "-o", str(tmp_path / "c"),
                   sets=[f"input.data={tmp_path / 'data'}",
                         f"input.model={tmp_path / 'm' / 'model_seed0.lsnm'}"]) == 0
        assert run("build-index", "-o", str(tmp_path / "i"),
                   sets=[f"input.corpus={tmp_path / 'c' / 'corpus'}"]) == 0
        assert read_rows(tmp_path / "i" / "index.csv")[0]["rows"] == "120"
        assert run("predict", "-o", str(tmp_path / "p"),
                   sets=[f"input.corpus={tmp_path / 'c' / 'corpus'}",
                         f"input.queries={tmp_path / 'c' / 'queries'}", "lasenn.w_q=1"]) == 0
        text = (tmp_path / "p" / "predictions.csv").read_text()
        assert text.splitlines()[-1].split()[5] == "delta_acc=0.0000000000"
        for row in read_rows(tmp_path / "p" / "predictions.csv")[:-1]:
            assert row["native_class"] == row["lasenn_class"] and row["changed"] == "0"

    def test_sweep_rows(self, tmp_path):
        assert run("sweep", "-o", str(tmp_path), sets=["sweep.param=w_q"]) == 0
        rows = read_rows(tmp_path / "sweep_w_q.csv")
        assert [r["value"] for r in rows] == ["0.0", "0.52", "0.76", "0.88", "0.94", "0.97"]
        assert rows[0]["n_seeds"] == "2"

    @pytest.mark.parametrize("command,artifact", [
        ("noise-exp", "noise.csv"), ("attack-exp", "attack.csv"), ("diagnose", "density.csv"),
        ("sweep", "sweep_k.csv"),
    ])
    def test_rerun_is_byte_identical(self, tmp_path, command, artifact):
        sets = ["noise.fractions=0,0.16", "sweep.param=k", "sweep.values=1,3"]
        for d in ("a", "b"):
            assert run(command, "-o", str(tmp_path / d), sets=sets) == 0
        csvs = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
        assert artifact in csvs
        for name in csvs + sorted(p.name for p in (tmp_path / "a").glob("*.svg")):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        ma = (tmp_path / "a" / "manifest.txt").read_text().splitlines()
        assert ma[0] == f"command={command}" and ma[3] == "seeds=0,1"
        assert any(line.startswith("config_hash=") for line in ma)

    def test_exit_codes(self, tmp_path, capsys):
        assert main(["predict", "--set", "bogus=1"]) == 2
        assert main(["predict", "-o", str(tmp_path)]) == 2
        assert main(["predict", "--set", f"input.corpus={tmp_path / 'nope'}"]) == 2
        bad = tmp_path / "bad"
        bad.mkdir()
        (bad / "embeddings.lsnn").write_bytes(b"XXXX")
        (bad / "queries").mkdir()
        assert main(["predict", "-o", str(tmp_path / "o"), "--set", f"input.corpus={bad}",
                     "--set", f"input.queries={bad / 'queries'}"]) == 1
        assert "error" in capsys.readouterr().err
        assert main(["no-such-command"]) == 2
