from pathlib import Path

import pytest

testing = pytest.importorskip("streamlit.testing.v1")

APP = Path(__file__).resolve().parents[1] / "app.py"


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    monkeypatch.delenv("UAVSYNTH_CONFIG", raising=False)


def test_app_starts_with_defaults():
    app = testing.AppTest.from_file(str(APP), default_timeout=60).run()
    assert not app.exception
    assert app.session_state.methods == ["kalman", "linear"]
    assert app.session_state.report is None


def test_generate_then_evaluate(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    app = testing.AppTest.from_file(str(APP), default_timeout=120).run()
    app.number_input[0].set_value(2)
    app.button[0].click().run()
    assert not app.exception
    assert len(app.session_state.sequences) == 2

    next(button for button in app.button if button.label == "Evaluate").click().run()
    assert not app.exception
    assert app.session_state.report is not None


def test_mdn_without_model_warns(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    app = testing.AppTest.from_file(str(APP), default_timeout=120).run()
    app.number_input[0].set_value(2)
    app.button[0].click().run()

    app.multiselect[0].set_value(["mdn", "kalman"])
    next(button for button in app.button if button.label == "Evaluate").click().run()
    assert not app.exception
    assert any("needs a trained model" in warning.value for warning in app.warning)
    assert app.session_state.report is None
