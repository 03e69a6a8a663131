import json
from dataclasses import replace

import numpy as np
import pytest

from utils.datagen import GenConfig, generate_dataset
from utils.errors import ConfigError, SchemaError
from utils.file_handler import (
    load_mapping, load_model, load_sequences, read_dataset, save_model, save_uploaded_files,
    track_to_record, upload_key, write_dataset, write_predictions, write_rejections,
)
from utils.harness import AnnotationSequence
from utils.seqmodel import MdnModel, TrainConfig


@pytest.fixture(scope="module")
def noisy_dataset():
    return generate_dataset(GenConfig(count=2, seed=11, noise_sigma=1.5))


def test_dataset_round_trip(tmp_path, noisy_dataset):
    path = write_dataset(noisy_dataset, tmp_path / "tracks.jsonl")
    tracks = read_dataset(path)

    assert [t.track_id for t in tracks] == ["000000", "000001"]
    for original, loaded in zip(noisy_dataset.tracks, tracks):
        assert np.array_equal(loaded.points_px, original.points_px)
        assert np.array_equal(loaded.clean_px, original.clean_px)
        assert np.array_equal(loaded.points_world, original.points_world)
        assert loaded.camera == original.camera
        assert loaded.fps == original.fps
        assert loaded.run_index == original.run_index


def test_record_fields(noisy_dataset):
    record = track_to_record(noisy_dataset.tracks[0], noisy_dataset.config)
    assert {"id", "fps", "camera", "points_px", "points_px_noisy", "seed", "config_hash"} <= set(record)
    assert record["seed"] == 11
    assert record["coefficient_convention"] == "4(n+1)m"


def test_same_seed_writes_identical_files(tmp_path, small_config):
    first = write_dataset(generate_dataset(small_config), tmp_path / "a.jsonl")
    second = write_dataset(generate_dataset(replace(small_config, workers=3)), tmp_path / "b.jsonl")
    assert first.read_bytes() == second.read_bytes()
    assert len(first.read_text().splitlines()) == small_config.count


def test_malformed_dataset_line(tmp_path, noisy_dataset):
    path = write_dataset(noisy_dataset, tmp_path / "tracks.jsonl")
    lines = path.read_text().splitlines()
    path.write_text(lines[0] + "\n{broken\n")
    with pytest.raises(SchemaError) as excinfo:
        read_dataset(path)
    assert excinfo.value.line == 2

    path.write_text(json.dumps({"id": "x", "fps": 10}) + "\n")
    with pytest.raises(SchemaError) as excinfo:
        read_dataset(path)
    assert excinfo.value.field == "camera"


def test_rejection_summary(tmp_path, noisy_dataset):
    path = write_rejections(noisy_dataset, tmp_path / "rejections.json")
    summary = json.loads(path.read_text())
    assert summary["accepted"] == 2
    assert summary["attempts"] == noisy_dataset.attempts
    assert sum(summary["rejections"].values()) == noisy_dataset.attempts - 2


def test_model_round_trip(tmp_path):
    config = TrainConfig(embedding_dim=3, hidden_dim=4, horizon=5, obs_len=6)
    model = MdnModel.initialize(config, np.random.default_rng(0))
    path = save_model(model, tmp_path / "models" / "mdn.npz", config=config, losses=[3.0, 2.0])

    loaded, metadata = load_model(path)
    for name, value in model.params.items():
        assert np.array_equal(loaded.params[name], value)
    assert loaded.obs_len == 6
    assert loaded.horizon == 5
    assert metadata["losses"] == [3.0, 2.0]
    assert metadata["train_config"]["hidden_dim"] == 4


def test_load_model_rejects_other_archives(tmp_path):
    path = tmp_path / "other.npz"
    np.savez(path, weights=np.zeros(3))
    with pytest.raises(SchemaError):
        load_model(path)


def write_sequence(path, exist, rects):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"exist": exist, "gt_rect": rects}))


def test_load_sequences_dispatch(tmp_path, noisy_dataset):
    write_sequence(tmp_path / "anti" / "seq1" / "IR_label.json", [1, 1], [[0, 0, 2, 2], [1, 1, 2, 2]])
    write_sequence(tmp_path / "anti" / "seq2" / "visible.json", [0, 1], [[], [1, 1, 2, 2]])

    sequences = load_sequences(tmp_path / "anti")
    assert [s.sequence_id for s in sequences] == ["seq1/IR_label", "seq2/visible"]
    assert all(isinstance(s, AnnotationSequence) for s in sequences)

    single = load_sequences(tmp_path / "anti" / "seq1" / "IR_label.json")
    assert len(single) == 1

    dataset_path = write_dataset(noisy_dataset, tmp_path / "tracks.jsonl")
    assert len(load_sequences(dataset_path)) == 2

    with pytest.raises(SchemaError):
        load_sequences(tmp_path / "tracks.csv")
    (tmp_path / "empty").mkdir()
    with pytest.raises(SchemaError):
        load_sequences(tmp_path / "empty")


def test_load_mapping(tmp_path):
    assert load_mapping(None).rect_key == "gt_rect"

    path = tmp_path / "mapping.toml"
    path.write_text('exist_key = "present"\nmodality = "IR"\n')
    mapping = load_mapping(path)
    assert mapping.exist_key == "present"
    assert mapping.modality == "IR"

    path.write_text('labels = "x"\n')
    with pytest.raises(ConfigError):
        load_mapping(path)
    path.write_text('modality = "UV"\n')
    with pytest.raises(ConfigError):
        load_mapping(path)


def test_write_predictions(tmp_path):
    path = write_predictions([{"track_id": "a", "mean": [[1.0, 2.0]]}], tmp_path / "pred.jsonl")
    assert json.loads(path.read_text()) == {"track_id": "a", "mean": [[1.0, 2.0]]}


class FakeUpload:
    def __init__(self, name, data):
        self.name = name
        self.data = data

    def getbuffer(self):
        return memoryview(self.data)


def test_save_uploaded_files(tmp_path):
    target = save_uploaded_files([FakeUpload("IR_label.json", b"{}"), FakeUpload("../x.json", b"[]")], tmp_path)
    assert target.parent == tmp_path
    assert sorted(p.name for p in target.iterdir()) == ["IR_label.json", "x.json"]


def test_upload_key_tells_uploads_apart():
    first = FakeUpload("mdn.npz", b"abc")
    assert upload_key(None) is None
    assert upload_key(first) == upload_key(FakeUpload("mdn.npz", b"xyz"))
    assert upload_key(first) != upload_key(FakeUpload("other.npz", b"abc"))
    assert upload_key(first) != upload_key(FakeUpload("mdn.npz", b"abcd"))

    first.file_id = "upload-1"
    assert upload_key(first) == "upload-1"
