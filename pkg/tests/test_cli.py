import json

import pytest

from cli import main


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    monkeypatch.delenv("UAVSYNTH_CONFIG", raising=False)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "tracks.jsonl"
    with pytest.MonkeyPatch.context() as patch:
        patch.delenv("UAVSYNTH_CONFIG", raising=False)
        code = main([
            "generate", "--count", "3", "--seed", "4", "--workers", "2", "--out", str(data),
            "--dump-rejections", str(root / "rejections.json"), "--dump-qp", str(root / "qp"),
        ])
    assert code == 0
    return root


def test_generate_writes_dataset_and_dumps(workspace):
    lines = (workspace / "tracks.jsonl").read_text().splitlines()
    assert len(lines) == 3
    assert json.loads(lines[0])["seed"] == 4
    assert json.loads((workspace / "rejections.json").read_text())["accepted"] == 3
    assert len(list((workspace / "qp").glob("track_000000_*.txt"))) == 3


def test_evaluate_and_export(workspace):
    report = workspace / "report.csv"
    assert main([
        "evaluate", "--data", str(workspace / "tracks.jsonl"), "--methods", "kalman,linear",
        "--report", str(report),
    ]) == 0
    metadata = json.loads((workspace / "report.csv.meta.json").read_text())
    assert metadata["methods"] == ["kalman", "linear"]
    assert len(metadata["dataset_hash"]) == 64

    out = workspace / "table.md"
    assert main(["export-report", "--report", str(report), "--format", "md", "--out", str(out)]) == 0
    assert "kalman" in out.read_text()


def test_train_then_predict(workspace):
    config = workspace / "train.toml"
    config.write_text("embedding_dim = 4\nhidden_dim = 4\nbatch_size = 256\n")
    model = workspace / "mdn.npz"
    assert main([
        "train", "--data", str(workspace / "tracks.jsonl"), "--config", str(config),
        "--epochs", "1", "--out", str(model),
    ]) == 0

    predictions = workspace / "pred.jsonl"
    assert main([
        "predict", "--method", "mdn", "--model", str(model), "--in", str(workspace / "tracks.jsonl"),
        "--horizon", "10", "--stride", "50", "--out", str(predictions),
    ]) == 0
    row = json.loads(predictions.read_text().splitlines()[0])
    assert row["method"] == "mdn"
    assert len(row["mean"]) == 10
    assert len(row["cov"]) == 10


def test_mdn_without_model_fails(workspace, tmp_path):
    assert main([
        "evaluate", "--data", str(workspace / "tracks.jsonl"), "--methods", "mdn",
        "--report", str(tmp_path / "report.csv"),
    ]) == 2


def test_bad_config_fails(tmp_path):
    config = tmp_path / "bad.toml"
    config.write_text("count = 0\n")
    assert main(["generate", "--config", str(config), "--out", str(tmp_path / "x.jsonl")]) == 2
