import hashlib
import json
import os

import numpy as np
import pandas as pd
import pytest

from app.cli import main
from app.evaluate.report import EvalReport
from app.extract.extractor import read_location_csv
from app.load.loader import OutputWriter, atomic_output
from app.model.veli import VeliModel

QUIET = ["--log-file", ""]


def synth(out, seed=1, length=200, channels=6):
    return main(["synth", "--seed", str(seed), "--length", str(length), "--channels", str(channels),
                 "--out", str(out)] + QUIET)


def test_synth_is_byte_reproducible(tmp_path):
    assert synth(tmp_path / "a") == 0
    assert synth(tmp_path / "b") == 0
    first = (tmp_path / "a" / "location.csv").read_bytes()
    assert first == (tmp_path / "b" / "location.csv").read_bytes()
    assert first.startswith(b"timestamp,s1,s2,s3,s4,s5,s6,ref\n2020-01-01T00:00:00Z,")


def test_manifest_lists_file_digests(tmp_path):
    assert synth(tmp_path) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    digest = hashlib.sha256((tmp_path / "location.csv").read_bytes()).hexdigest()
    assert manifest["files"] == {"location.csv": digest}
    assert manifest["seeds"] == [1]
    assert manifest["command"] == "synth"
    assert manifest["noise"]["p_spike"] == 0.1


def test_zero_epoch_training_keeps_initialisation(tmp_path):
    assert synth(tmp_path / "data") == 0
    code = main(["train", "--input", str(tmp_path / "data" / "location.csv"), "--epochs", "0",
                 "--hidden-dim", "8", "--seed", "5", "--out", str(tmp_path / "model")] + QUIET)
    assert code == 0
    trained = VeliModel.from_checkpoint((tmp_path / "model" / "model.json").read_text())
    fresh = VeliModel(6, latent_dim=4, hidden_dim=8, seed=5)
    for name, array in fresh.parameters().items():
        np.testing.assert_array_equal(trained.parameters()[name], array)
    assert (tmp_path / "model" / "history.csv").read_text() == "epoch,kl_z,kl_y,recon_nll,total\n"


def test_configuration_error_exit_code(tmp_path):
    assert synth(tmp_path, channels=3) == 1


def test_data_error_exit_code(tmp_path):
    code = main(["train", "--input", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")] + QUIET)
    assert code == 2


def test_missing_checkpoint_flag(tmp_path):
    assert synth(tmp_path / "data") == 0
    code = main(["infer", "--input", str(tmp_path / "data" / "location.csv"), "--out", str(tmp_path / "o")] + QUIET)
    assert code == 1


def test_end_to_end_pipeline(tmp_path):
    data, model_dir = tmp_path / "data", tmp_path / "model"
    assert synth(data, length=240) == 0
    location_csv = str(data / "location.csv")
    assert main(["train", "--input", location_csv, "--epochs", "1", "--hidden-dim", "8",
                 "--learning-rate", "0.001", "--out", str(model_dir)] + QUIET) == 0
    checkpoint = str(model_dir / "model.json")

    assert main(["infer", "--input", location_csv, "--checkpoint", checkpoint,
                 "--out", str(tmp_path / "inferred")] + QUIET) == 0
    corrected = pd.read_csv(tmp_path / "inferred" / "corrected.csv")
    assert {"yhat", "ystd", "yhat_1", "ylo_6", "yhi_6", "ref"} <= set(corrected.columns)
    assert len(corrected) == 240
    assert (corrected["ylo_1"] < corrected["yhat_1"]).all()
    assert read_location_csv(str(tmp_path / "inferred" / "corrected.csv")).n_sensors == 6

    assert main(["eval", "--input", location_csv, "--checkpoint", checkpoint, "--twelve-hour",
                 "--out", str(tmp_path / "eval")] + QUIET) == 0
    report = EvalReport.from_text((tmp_path / "eval" / "report.txt").read_text())
    assert report.n_hours == 240 and report.n_sensors == 6
    assert report.mae_pca is not None
    histograms = pd.read_csv(tmp_path / "eval" / "histograms.csv")
    assert set(histograms["series"]) == {"raw_mean", "corrected", "ref"}
    assert len(pd.read_csv(tmp_path / "eval" / "twelve_hour.csv")) == 20

    assert main(["ablate", "--input", location_csv, "--checkpoint", checkpoint, "--ablation", "na_injection",
                 "--ablation-values", "1,2", "--out", str(tmp_path / "ablate")] + QUIET) == 0
    summary = pd.read_csv(tmp_path / "ablate" / "summary.csv")
    assert summary["n"].tolist() == [1, 2]
    assert os.path.exists(tmp_path / "ablate" / "report_na_2.txt")


def test_finetune_command_writes_both_reports(tmp_path):
    assert synth(tmp_path / "data", length=200) == 0
    location_csv = str(tmp_path / "data" / "location.csv")
    assert main(["train", "--input", location_csv, "--epochs", "1", "--hidden-dim", "8",
                 "--out", str(tmp_path / "model")] + QUIET) == 0
    assert main(["finetune", "--input", location_csv, "--checkpoint", str(tmp_path / "model" / "model.json"),
                 "--finetune-epochs", "1", "--out", str(tmp_path / "tuned")] + QUIET) == 0
    for name in ("report_zero_shot.txt", "report_fine_tuned.txt", "model.json", "history.csv"):
        assert (tmp_path / "tuned" / name).exists()


def test_preprocess_command(tmp_path):
    index = pd.date_range("2021-01-01", periods=72, freq="h", tz="UTC")
    stamps = index.strftime("%Y-%m-%dT%H:%M:%SZ")
    for name, level in (("a", 10.0), ("b", 12.0), ("r", 11.0)):
        pd.DataFrame({"timestamp": stamps, "value": level + np.sin(np.arange(72))}).to_csv(
            tmp_path / f"{name}.csv", index=False)
    (tmp_path / "site.env").write_text("LOCATION_ID=site\nSENSORS=a.csv,b.csv\nREFERENCES=r.csv\n")
    code = main(["preprocess", "--input", str(tmp_path / "site.env"), "--min-hours", "48",
                 "--test-fraction", "0.25", "--out", str(tmp_path / "out")] + QUIET)
    assert code == 0
    train = read_location_csv(str(tmp_path / "out" / "train.csv"))
    test = read_location_csv(str(tmp_path / "out" / "test.csv"))
    assert (len(train), len(test)) == (54, 18)
    assert train.sensor_ids == ["a", "b"]


def test_preprocess_ineligible_location(tmp_path):
    (tmp_path / "a.csv").write_text("timestamp,value\n2021-01-01T00:00:00Z,5\n")
    (tmp_path / "site.env").write_text("SENSORS=a.csv\n")
    code = main(["preprocess", "--input", str(tmp_path / "site.env"), "--out", str(tmp_path / "out")] + QUIET)
    assert code == 2


def test_atomic_output_leaves_no_partial_file(tmp_path):
    target = tmp_path / "report.txt"
    target.write_text("old")
    with pytest.raises(RuntimeError):
        with atomic_output(str(target)) as handle:
            handle.write("half")
            raise RuntimeError("interrupted")
    assert target.read_text() == "old"
    assert os.listdir(tmp_path) == ["report.txt"]


def test_writer_tracks_files(tmp_path):
    writer = OutputWriter(str(tmp_path))
    writer.write_text("a.txt", "x\n")
    writer.write_text("a.txt", "y\n")
    writer.write_manifest({"seed": 0}, "hash", [0])
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert list(manifest["files"]) == ["a.txt"]
    assert manifest["config_hash"] == "hash"


def test_numbered_noise_aliases(tmp_path):
    assert main(["synth", "--noise", "fig9", "--length", "100", "--out", str(tmp_path / "a")] + QUIET) == 0
    assert main(["synth", "--noise", "realistic", "--length", "100", "--out", str(tmp_path / "b")] + QUIET) == 0
    assert (tmp_path / "a" / "location.csv").read_bytes() == (tmp_path / "b" / "location.csv").read_bytes()
    assert main(["synth", "--noise", "fig10", "--length", "100", "--out", str(tmp_path / "c")] + QUIET) == 0
    manifest = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert manifest["noise"]["p_spike"] == 0.4


@pytest.mark.parametrize("argv", [
    ["train", "--epochs", "many"],
    ["synth", "--base", "triangle"],
    ["unknown-command"],
    [],
])
def test_usage_errors_are_configuration_errors(argv):
    assert main(argv) == 1


def test_aborted_training_saves_last_finite_state(tmp_path, monkeypatch):
    from app.model import trainer
    from app.model.veli import LossBreakdown

    real = trainer.loss_and_grads
    calls = {"n": 0}

    def failing_after_five(*args, **kwargs):
        breakdown, grads = real(*args, **kwargs)
        calls["n"] += 1
        if calls["n"] > 5:
            breakdown = LossBreakdown(np.nan, breakdown.kl_y, breakdown.recon_nll, np.nan)
        return breakdown, grads

    monkeypatch.setattr(trainer, "loss_and_grads", failing_after_five)
    assert synth(tmp_path / "data", length=200) == 0
    out = tmp_path / "model"
    code = main(["train", "--input", str(tmp_path / "data" / "location.csv"), "--epochs", "3",
                 "--hidden-dim", "8", "--learning-rate", "0.001", "--out", str(out)] + QUIET)
    assert code == 3
    model = VeliModel.from_checkpoint((out / "model.json").read_text())
    assert all(np.isfinite(a).all() for a in model.parameters().values())
    assert json.loads((out / "model.json").read_text())["meta"]["aborted"] is True
    assert len((out / "history.csv").read_text().splitlines()) == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["aborted"] is True
    assert manifest["aborted_at"] == {"epoch": 2, "batch": 2}
    assert set(manifest["files"]) == {"model.json", "history.csv"}


def test_rerun_from_manifest_is_bitwise_identical(tmp_path):
    assert synth(tmp_path / "data", length=200) == 0
    location_csv = str(tmp_path / "data" / "location.csv")
    assert main(["train", "--input", location_csv, "--epochs", "1", "--hidden-dim", "8",
                 "--learning-rate", "0.001", "--seed", "4", "--out", str(tmp_path / "m1")] + QUIET) == 0
    assert main(["train", "--config", str(tmp_path / "m1" / "manifest.json"),
                 "--out", str(tmp_path / "m2")] + QUIET) == 0
    for name in ("model.json", "history.csv"):
        assert (tmp_path / "m1" / name).read_bytes() == (tmp_path / "m2" / name).read_bytes()

    checkpoint = str(tmp_path / "m1" / "model.json")
    assert main(["eval", "--input", location_csv, "--checkpoint", checkpoint,
                 "--out", str(tmp_path / "e1")] + QUIET) == 0
    assert main(["eval", "--config", str(tmp_path / "e1" / "manifest.json"),
                 "--out", str(tmp_path / "e2")] + QUIET) == 0
    for name in ("report.txt", "histograms.csv"):
        assert (tmp_path / "e1" / name).read_bytes() == (tmp_path / "e2" / name).read_bytes()
