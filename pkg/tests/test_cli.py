import pytest

from wavfusion.cli import main
from wavfusion.config import load_config
from wavfusion.data import SynthSpec, generate_synthetic


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "synth"
    generate_synthetic(SynthSpec(classes=2, per_class=8, mu=3.0, rho=0.2,
                                 sigma=0.5, seed=21), root)
    return root


FAST = ["--d", "8", "--heads", "2", "--n-shallow", "1", "--n-deep", "1",
        "--lvc-centers", "2", "--epochs", "1", "--batch-size", "6"]


class TestGenData:
    def test_writes_dataset(self, tmp_path, capsys):
        rc = main(["gen-data", "--out", str(tmp_path / "d"), "--classes", "2",
                   "--per-class", "3", "--seed", "5"])
        assert rc == 0
        assert "6 samples" in capsys.readouterr().out
        assert (tmp_path / "d" / "manifest.tsv").exists()

    def test_mean_groups_and_mu_scale_flags(self, tmp_path):
        rc = main(["gen-data", "--out", str(tmp_path / "g"), "--classes", "4",
                   "--per-class", "2", "--mean-groups", "a=0,1|2,3",
                   "--mu-scale", "v=0.5"])
        assert rc == 0

    def test_bad_group_spec_is_validation_error(self, tmp_path):
        rc = main(["gen-data", "--out", str(tmp_path / "b"), "--classes", "4",
                   "--per-class", "2", "--mean-groups", "a=0,1"])
        assert rc == 2


class TestTrainEval:
    def test_train_then_eval(self, dataset_dir, tmp_path, capsys):
        out = tmp_path / "run"
        rc = main(["train", "--data-dir", str(dataset_dir), "--out-dir", str(out)] + FAST)
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "test ACC" in stdout
        assert (out / "model.wvfn").exists()

        rc = main(["eval", "--config", str(out / "config.cfg"),
                   "--checkpoint", str(out / "model.wvfn"),
                   "--dump", str(tmp_path / "preds.tsv")])
        assert rc == 0
        assert "ACC" in capsys.readouterr().out
        assert (tmp_path / "preds.tsv").exists()

    def test_flag_overrides_config_file(self, dataset_dir, tmp_path):
        out = tmp_path / "run"
        rc = main(["train", "--data-dir", str(dataset_dir), "--out-dir", str(out),
                   "--seed", "3"] + FAST)
        assert rc == 0
        assert load_config(out / "config.cfg").seed == 3
        out2 = tmp_path / "run2"
        rc = main(["train", "--config", str(out / "config.cfg"),
                   "--out-dir", str(out2), "--seed", "4"])
        assert rc == 0
        assert load_config(out2 / "config.cfg").seed == 4

    def test_env_var_default_out_dir(self, dataset_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("WAVFUSION_OUT_DIR", str(tmp_path / "envout"))
        rc = main(["train", "--data-dir", str(dataset_dir)] + FAST)
        assert rc == 0
        assert (tmp_path / "envout" / "model.wvfn").exists()

    def test_missing_data_dir_is_validation_error(self, capsys):
        rc = main(["train"] + FAST)
        assert rc == 2
        assert "error" in capsys.readouterr().err

    def test_invalid_config_value_is_validation_error(self, dataset_dir):
        rc = main(["train", "--data-dir", str(dataset_dir)] + FAST + ["--heads", "5"])
        assert rc == 2

    def test_missing_checkpoint_is_validation_error(self, dataset_dir):
        rc = main(["eval", "--data-dir", str(dataset_dir),
                   "--checkpoint", "/nonexistent.wvfn"] + FAST)
        assert rc == 2


class TestAblateCli:
    def test_lvc_suite(self, dataset_dir, tmp_path, capsys):
        rc = main(["ablate", "--suite", "lvc", "--data-dir", str(dataset_dir),
                   "--out-dir", str(tmp_path / "ab"), "--seeds", "0"] + FAST)
        assert rc == 0
        out = capsys.readouterr().out
        assert "w/o LVC block" in out and "w/ LVC block" in out
        assert (tmp_path / "ab" / "lvc.tsv").exists()


class TestGradcheckCli:
    def test_pass(self, capsys):
        rc = main(["gradcheck", "--modalities", "a", "--n-shallow", "1",
                   "--n-deep", "0", "--batch-size", "2"])
        assert rc == 0
        assert "PASS" in capsys.readouterr().out

    def test_corrupt_fails_naming_layer(self, capsys):
        rc = main(["gradcheck", "--modalities", "a", "--n-shallow", "1",
                   "--n-deep", "0", "--batch-size", "2",
                   "--corrupt", "classifier.bias"])
        assert rc == 1
        captured = capsys.readouterr()
        assert "classifier.bias" in captured.err


class TestOracleMarginCli:
    def test_reports_both_paths(self, tmp_path, capsys):
        batch = tmp_path / "batch.tsv"
        lines = ["a\t0\t1.0,2.0,3.0", "t\t0\t1.0,2.0,3.0", "a\t1\t3.0,-1.0,0.5"]
        batch.write_text("\n".join(lines) + "\n")
        rc = main(["oracle-margin", "--batch-file", str(batch), "--alpha", "0.5"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "production" in out and "bruteforce" in out
        diff = float(out.splitlines()[2].split("=")[1])
        assert diff < 1e-10

    def test_empty_file_is_validation_error(self, tmp_path):
        batch = tmp_path / "empty.tsv"
        batch.write_text("")
        assert main(["oracle-margin", "--batch-file", str(batch)]) == 2
