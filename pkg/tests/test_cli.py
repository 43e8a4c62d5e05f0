import csv
import json
from pathlib import Path

import pytest

from hybridx import cli, data, facial, social
from hybridx.config import dumps_config, load_config
from hybridx.metrics import EvalReport
from hybridx.numerics import layers
from hybridx.numerics.gradcheck import LAYER_TYPES
from hybridx.records import DatasetStats, Label


def run(*argv):
    return cli.main([str(a) for a in argv])


def snapshot(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Separable social file, image tree and paired set, plus trained models."""
    root = tmp_path_factory.mktemp("ws")
    spec = data.SyntheticSpec(DatasetStats.of(100, 100), asd_score_probs=(0, 0, 0.5, 0.5),
                              non_asd_score_probs=(0.5, 0.5, 0, 0), seed=1)
    data.write_social_csv(data.synth_social_data(spec), root / "social.csv")
    data.synth_image_data(data.SyntheticSpec(DatasetStats.of(100, 100), seed=2), root / "images")
    assert run("synth", "--kind", "paired", "--n-asd", 20, "--n-non", 15, "--seed", 3,
               "--out", root / "paired") == 0
    assert run("train-social", "--social-csv", root / "social.csv", "--out", root / "ts") == 0
    assert run("train-facial", "--image-dir", root / "images", "--epochs", 8, "--out", root / "tf") == 0
    return root


class TestSynth:
    def test_paired_235_bundles(self, tmp_path, capsys):
        assert run("synth", "--kind", "paired", "--n-asd", 130, "--n-non", 105, "--seed", 7,
                   "--out", tmp_path / "p") == 0
        assert "n_total=235 n_asd=130 n_non_asd=105" in capsys.readouterr().out
        assert len(data.load_paired_dir(tmp_path / "p")) == 235

    def test_rerun_byte_identical(self, tmp_path):
        args = ("synth", "--kind", "social", "--n-asd", 30, "--n-non", 20, "--seed", 4, "--out", tmp_path / "s")
        assert run(*args) == 0
        first = snapshot(tmp_path / "s")
        assert run(*args) == 0
        assert snapshot(tmp_path / "s") == first

    def test_zero_class_rejected(self, tmp_path, capsys):
        assert run("synth", "--n-asd", 0, "--out", tmp_path / "bad") == 1
        assert "error" in capsys.readouterr().err
        assert not (tmp_path / "bad").exists()
        assert list(tmp_path.iterdir()) == []

    def test_image_counts_pinned(self, tmp_path):
        assert run("synth", "--kind", "paired", "--n-asd", 69, "--n-non", 56, "--n-images-asd", 130,
                   "--n-images-non", 105, "--out", tmp_path / "p") == 0
        bundles = data.load_paired_dir(tmp_path / "p")
        assert len(bundles) == 125 and sum(len(b.images) for b in bundles) == 235


class TestTrainSocial:
    def test_separable_accuracy(self, workspace):
        rep = EvalReport.from_json((workspace / "ts" / "social-report.json").read_text())
        assert rep.accuracy >= 0.95

    def test_report_stats_are_file_stats(self, workspace):
        rep = EvalReport.from_json((workspace / "ts" / "social-report.json").read_text())
        recs = data.load_social_csv(workspace / "social.csv")
        assert rep.stats == DatasetStats.from_labels(r.label for r in recs)

    def test_reloaded_model_reproduces_predictions(self, workspace):
        model = social.loads_model((workspace / "ts" / "svm.model").read_text())
        by_id = {r.patient_id: r for r in data.load_social_csv(workspace / "social.csv")}
        with open(workspace / "ts" / "social-predictions.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert rows
        for row in rows:
            margin = social.predict_margin(model, social.encode_record(by_id[row["id"]]))
            assert repr(margin) == row["margin"]
            assert row["decision"] == str(Label.ASD if margin >= 0 else Label.NON_ASD)

    def test_three_part_split(self, workspace, tmp_path):
        assert run("train-social", "--social-csv", workspace / "social.csv", "--fractions", "0.6 0.2 0.2",
                   "--out", tmp_path / "o") == 0
        rep = EvalReport.from_json((tmp_path / "o" / "social-report.json").read_text())
        assert rep.confusion.total == 40

    def test_missing_input_names_stage(self, tmp_path, capsys):
        assert run("train-social", "--social-csv", tmp_path / "nope.csv", "--out", tmp_path / "o") == 1
        assert "[load]" in capsys.readouterr().err
        assert not (tmp_path / "o").exists()

    def test_deterministic(self, workspace, tmp_path):
        assert run("train-social", "--social-csv", workspace / "social.csv", "--out", workspace / "ts") == 0
        first = snapshot(workspace / "ts")
        assert run("train-social", "--social-csv", workspace / "social.csv", "--out", workspace / "ts") == 0
        assert snapshot(workspace / "ts") == first


class TestTrainFacial:
    def test_accuracy_and_history(self, workspace):
        rep = EvalReport.from_json((workspace / "tf" / "facial-report.json").read_text())
        assert rep.accuracy >= 0.95
        rows = (workspace / "tf" / "facial-history.csv").read_text().splitlines()
        assert len(rows) - 1 == 8
        assert rep.stats == DatasetStats(200, 100, 100)

    def test_same_seed_same_history(self, workspace, tmp_path):
        args = ("train-facial", "--image-dir", workspace / "images", "--epochs", 3, "--seed", 5)
        assert run(*args, "--out", tmp_path / "a") == 0
        assert run(*args, "--out", tmp_path / "b") == 0
        for name in ("facial-history.csv", "densenet.model", "facial-report.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_validation_dir(self, workspace, tmp_path):
        data.synth_image_data(data.SyntheticSpec(DatasetStats.of(10, 10), seed=9), tmp_path / "val")
        assert run("train-facial", "--image-dir", workspace / "images", "--validation-dir", tmp_path / "val",
                   "--fractions", "0.9 0.1", "--epochs", 2, "--out", tmp_path / "o") == 0
        rep = EvalReport.from_json((tmp_path / "o" / "facial-report.json").read_text())
        assert rep.confusion.total == 20

    def test_side_mismatch(self, tmp_path, capsys):
        data.synth_image_data(data.SyntheticSpec(DatasetStats.of(4, 4), side=8), tmp_path / "small")
        assert run("train-facial", "--image-dir", tmp_path / "small", "--out", tmp_path / "o") == 1
        assert "side" in capsys.readouterr().err


class TestFuseEval:
    def fuse(self, ws, out, *extra):
        return run("fuse-eval", "--svm", ws / "ts" / "svm.model", "--densenet", ws / "tf" / "densenet.model",
                   "--paired", ws / "paired", "--out", out, *extra)

    def trace(self, out):
        with open(out / "trace.csv") as fh:
            return list(csv.DictReader(fh))

    def test_explicit_social_only(self, workspace, tmp_path):
        assert self.fuse(workspace, tmp_path / "o", "--weight-mode", "explicit", "--weights", 1, 0) == 0
        rows = self.trace(tmp_path / "o")
        assert len(rows) == 35
        for r in rows:
            social_says = "ASD" if float(r["p_social"]) >= 0.5 else "non-ASD"
            assert r["decision"] == social_says

    def test_prevalence_from_model_counts(self, workspace, tmp_path):
        svm_text = (workspace / "ts" / "svm.model").read_text()
        svm = social.loads_model(svm_text)
        (tmp_path / "svm.model").write_text(svm_text.replace(f"n_asd = {svm.n_asd}\n", "n_asd = 1046\n"))
        net = facial.loads_model((workspace / "tf" / "densenet.model").read_bytes())
        net.n_asd = 1418
        (tmp_path / "net.model").write_bytes(facial.dumps_model(net))
        assert run("fuse-eval", "--svm", tmp_path / "svm.model", "--densenet", tmp_path / "net.model",
                   "--paired", workspace / "paired", "--out", tmp_path / "o") == 0
        rows = self.trace(tmp_path / "o")
        assert all(float(r["w_social"]) == pytest.approx(0.4245, abs=5e-5) for r in rows)

    def test_table_and_reports(self, workspace, tmp_path):
        assert self.fuse(workspace, tmp_path / "o", "--social-report", workspace / "ts" / "social-report.json",
                         "--facial-report", workspace / "tf" / "facial-report.json") == 0
        table = (tmp_path / "o" / "table.txt").read_text()
        assert table.splitlines()[0].split("  ")[0] == "Statistic"
        assert "Hybrid Model" in table and "Social Behavior Module" in table
        hybrid = json.loads((tmp_path / "o" / "hybrid-report.json").read_text())
        assert hybrid["dataset_size"].startswith("35 patients")

    def test_deterministic(self, workspace, tmp_path):
        assert self.fuse(workspace, tmp_path / "o") == 0
        first = snapshot(tmp_path / "o")
        assert self.fuse(workspace, tmp_path / "o") == 0
        assert snapshot(tmp_path / "o") == first

    def test_side_mismatch_rejected_before_evaluation(self, workspace, tmp_path, capsys):
        assert run("synth", "--kind", "paired", "--n-asd", 2, "--n-non", 2, "--side", 8,
                   "--out", tmp_path / "p8") == 0
        assert run("fuse-eval", "--svm", workspace / "ts" / "svm.model", "--densenet",
                   workspace / "tf" / "densenet.model", "--paired", tmp_path / "p8", "--out", tmp_path / "o") == 1
        assert "[compatibility]" in capsys.readouterr().err
        assert not (tmp_path / "o").exists()


class TestGradcheckCommand:
    def test_all_layers_listed_once_and_pass(self, capsys):
        assert run("gradcheck") == 0
        lines = capsys.readouterr().out.splitlines()
        assert [ln.split()[0] for ln in lines] == list(LAYER_TYPES)
        assert all(ln.split()[1] == "PASS" for ln in lines)

    def test_fault_injection_fails(self, monkeypatch, capsys):
        real = layers.avgpool2x2_backward
        monkeypatch.setattr(layers, "avgpool2x2_backward", lambda g, x: 1.01 * real(g, x))
        failures = cli.cmd_gradcheck()
        out = capsys.readouterr().out.splitlines()
        status = {ln.split()[0]: ln.split()[1] for ln in out}
        assert status["avgpool2x2"] == "FAIL"
        assert status["conv2d"] == "PASS"
        assert failures >= 1


class TestConfig:
    def test_file_and_overrides(self, tmp_path):
        (tmp_path / "c.ini").write_text("[experiment]\nseed = 5\n\n[svm]\nlam = 0.01\nlr_grid = 0.1, 0.2\n"
                                        "\n[densenet]\nepochs = 4\n")
        cfg = load_config(tmp_path / "c.ini", svm__epochs=7)
        assert cfg.seed == 5 and cfg.svm.lam == 0.01 and cfg.svm.lr_grid == (0.1, 0.2)
        assert cfg.svm.epochs == 7 and cfg.densenet.epochs == 4
        assert cfg.densenet_config.seed == cfg.stage_seed("densenet") == 8

    def test_resolved_config_round_trips(self, tmp_path):
        cfg = load_config(None, seed=3, synth__rho=0.6, split_fractions=(0.6, 0.2, 0.2))
        (tmp_path / "r.ini").write_text(dumps_config(cfg))
        assert load_config(tmp_path / "r.ini") == cfg

    @pytest.mark.parametrize("text,msg", [
        ("[densenet]\nseed = 3\n", "derived"),
        ("[bogus]\nx = 1\n", "unknown config sections"),
        ("[svm]\nlearning = 1\n", "unknown key"),
        ("[fusion]\nweight_mode = magic\n", "weight_mode"),
    ])
    def test_rejections(self, tmp_path, text, msg):
        (tmp_path / "c.ini").write_text(text)
        with pytest.raises(ValueError, match=msg):
            load_config(tmp_path / "c.ini")

    def test_readme_example_parses(self, tmp_path):
        readme = (Path(__file__).parents[1] / "README.md").read_text()
        block = readme.split("### Config file")[1].split("```")[1]
        (tmp_path / "c.ini").write_text(block)
        cfg = load_config(tmp_path / "c.ini")
        assert cfg.split_fractions == (0.8, 0.2) and cfg.svm.batch_size == 16
        assert cfg.validation_dir is None and cfg.synth.n_asd == 130

    def test_resolved_config_written(self, workspace):
        text = (workspace / "ts" / cli.RESOLVED_CONFIG).read_text()
        assert load_config(workspace / "ts" / cli.RESOLVED_CONFIG) == load_config(
            None, social_csv=str(workspace / "social.csv"), out_dir=str(workspace / "ts"))
        assert "[svm]" in text
