import csv
import filecmp
import math

import numpy as np
import pytest

from gsniqa import cli
from gsniqa import tensor as T
from gsniqa import gradsuite
from gsniqa.data import load_manifest
from gsniqa.model import GsnConfig, GsnModel, save_checkpoint


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "tiny.ckpt"
    save_checkpoint(GsnModel(GsnConfig(patch_size=24, width_scale=1 / 8), seed=0), path)
    return path


def oracle_scorer(records):
    """Replays the MOS of ``records``; eval scores records in manifest order.

    Image lookup would not work: level-0 rows of different types share the
    same (ref, ref) pair but carry different MOS.
    """
    mos = iter([r.mos for r in records])
    return lambda ref, dist: next(mos)


class TestSynth:
    def test_prints_count_and_is_deterministic(self, tmp_path, capsys):
        assert cli.main(["synth", "--seed", "1", "--refs", "4", "--out", str(tmp_path / "a")]) == 0
        assert capsys.readouterr().out.strip() == "96"
        cli.main(["synth", "--seed", "1", "--refs", "4", "--out", str(tmp_path / "b")])
        assert filecmp.cmp(tmp_path / "a" / "manifest.csv", tmp_path / "b" / "manifest.csv", shallow=False)

    def test_too_few_refs_is_usage_error(self, tmp_path, capsys):
        assert cli.main(["synth", "--refs", "2", "--out", str(tmp_path)]) == 2
        assert "at least 4" in capsys.readouterr().err

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["synth", "--bogus"])
        assert exc.value.code == 2


class TestConfigPrecedence:
    def test_flag_over_file_over_default(self, tmp_path):
        (tmp_path / "c.cfg").write_text("# run\nepochs = 7\nlr=0.5\nno_kl=true\n")
        args = cli.build_parser().parse_args(["--config", str(tmp_path / "c.cfg"), "train", "--manifest", "m",
                                              "--out", "o", "--epochs", "3"])
        cfg = cli.build_train_config(args)
        assert (cfg.epochs, cfg.lr, cfg.use_kl, cfg.seed, cfg.batch_size) == (3, 0.5, False, 0, 32)

    def test_unknown_key(self, tmp_path):
        (tmp_path / "c.cfg").write_text("colour=red\n")
        args = cli.build_parser().parse_args(["--config", str(tmp_path / "c.cfg"), "train", "--manifest", "m",
                                              "--out", "o"])
        with pytest.raises(cli.ContractError):
            cli.build_train_config(args)


class TestEval:
    def test_oracle_report_and_scatter(self, small_corpus, tmp_path, monkeypatch, capsys):
        manifest = load_manifest(small_corpus / "manifest.csv")
        monkeypatch.setattr(cli, "load_scorer", lambda ckpt: oracle_scorer(manifest.split("test")))
        code = cli.main(["eval", "--manifest", str(small_corpus / "manifest.csv"), "--split", "test",
                         "--ckpt", "unused", "--out", str(tmp_path / "r.csv"), "--scatter", str(tmp_path / "s.csv")])
        assert code == 0
        row = next(csv.DictReader(open(tmp_path / "r.csv")))
        assert [float(row[k]) for k in ("plcc", "srcc", "krcc", "main_score")] == [1.0, 1.0, 1.0, 2.0]
        scatter = list(csv.DictReader(open(tmp_path / "s.csv")))
        assert len(scatter) == len(manifest.split("test")) == int(row["n"])

    def test_missing_checkpoint(self, small_corpus, tmp_path):
        assert cli.main(["eval", "--manifest", str(small_corpus / "manifest.csv"), "--ckpt",
                         str(tmp_path / "nope.ckpt"), "--out", str(tmp_path / "r.csv")]) == 2


class TestScore:
    def test_single_float_on_stdout(self, small_corpus, ckpt, capsys):
        args = ["score", "--ref", str(small_corpus / "refs/ref_000.ppm"),
                "--dist", str(small_corpus / "dist/ref_000_gaussian_blur_3.ppm"), "--ckpt", str(ckpt)]
        assert cli.main(args) == 0
        out = capsys.readouterr().out
        assert out.count("\n") == 1 and math.isfinite(float(out))
        cli.main(args)
        assert capsys.readouterr().out == out

    def test_bad_image_exits_2(self, tmp_path, ckpt, capsys):
        (tmp_path / "x.ppm").write_bytes(b"P3\n")
        assert cli.main(["score", "--ref", str(tmp_path / "x.ppm"), "--dist", str(tmp_path / "x.ppm"),
                         "--ckpt", str(ckpt)]) == 2
        assert capsys.readouterr().out == ""


class TestGradcheck:
    def test_corrupted_backward_exits_1(self, monkeypatch, capsys):
        real = T.sigmoid

        def broken(x):
            good = real(x)
            # forward unchanged, backward off by a factor of two
            return T._make(good.data, (x,), lambda g: (2.0 * g * good.data * (1.0 - good.data),), "sigmoid")

        monkeypatch.setattr(T, "sigmoid", broken)
        monkeypatch.setattr(gradsuite, "COMPONENTS", {k: gradsuite.COMPONENTS[k] for k in ("conv2d", "attention")})
        assert cli.main(["gradcheck"]) == 1
        captured = capsys.readouterr()
        assert "attention" in captured.err
        assert "conv2d                 max_rel_err" in captured.out


class TestTrainAndAblate:
    def test_train_then_eval(self, small_corpus, tmp_path, capsys):
        manifest = str(small_corpus / "manifest.csv")
        flags = ["--patch", "24", "--width-scale", "0.125", "--epochs", "1", "--batch-size", "16"]
        assert cli.main(["train", "--manifest", manifest, "--out", str(tmp_path / "t")] + flags) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].endswith("best.ckpt") and out[1].startswith("val_plcc=")
        assert cli.main(["eval", "--manifest", manifest, "--ckpt", str(tmp_path / "t" / "best.ckpt"),
                         "--out", str(tmp_path / "r.csv")]) == 0

    def test_ablate_table(self, small_corpus, tmp_path, capsys):
        flags = ["--patch", "24", "--width-scale", "0.125", "--epochs", "1", "--batch-size", "16"]
        assert cli.main(["ablate", "--manifest", str(small_corpus / "manifest.csv"), "--out", str(tmp_path)] + flags) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "model,conv_type,loss,plcc,srcc,ms"
        assert [l.split(",")[:3] for l in lines[1:]] == [["M1", "CNN", "MSE"], ["M2", "CNN", "MSE+KL"],
                                                         ["M3", "CDC", "MSE"], ["M4", "CDC", "MSE+KL"]]
        rows = list(csv.reader(open(tmp_path / "ablation.csv")))
        assert rows[0] == ["model", "conv_type", "loss", "plcc", "srcc", "ms"] and len(rows) == 5

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_training_exits_1(self, small_corpus, tmp_path):
        assert cli.main(["train", "--manifest", str(small_corpus / "manifest.csv"), "--out", str(tmp_path),
                         "--patch", "24", "--width-scale", "0.125", "--epochs", "1", "--lr", "1e30"]) == 1
