import pytest

from fusenet.env import Environment, Var
from fusenet.exc import ValueNotValid, VariableNotSet


def test_var_success_and_missing(monkeypatch: pytest.MonkeyPatch):
    monkeypatch.setenv("FUSENET_TEST_INT", "42")
    v = Var[int]("FUSENET_TEST_INT", int)
    assert v() == 42
    assert v.value() == 42
    assert repr(v) == "env.Var(FUSENET_TEST_INT,int)"

    monkeypatch.delenv("FUSENET_TEST_MISSING", raising=False)
    with pytest.raises(VariableNotSet) as e:
        Var[int]("FUSENET_TEST_MISSING", int)()
    assert e.value.args[0] == "FUSENET_TEST_MISSING"
    assert "env.Var(FUSENET_TEST_MISSING,int)" in e.value.args[1]


def test_var_parse_failure(monkeypatch: pytest.MonkeyPatch):
    monkeypatch.setenv("FUSENET_TEST_INT", "forty-two")
    with pytest.raises(ValueNotValid) as e:
        Var[int]("FUSENET_TEST_INT", int).value()
    assert e.value.args[0] == "forty-two"
    assert e.value.args[1] == "env.Var(FUSENET_TEST_INT,int)"


def test_environment_seed(monkeypatch: pytest.MonkeyPatch):
    monkeypatch.delenv("FUSENET_SEED", raising=False)
    assert Environment.SEED is None
    monkeypatch.setenv("FUSENET_SEED", "17")
    assert Environment.SEED == 17
    monkeypatch.setenv("FUSENET_SEED", "-1")
    with pytest.raises(ValueNotValid):
        Environment.SEED


def test_environment_log_level(monkeypatch: pytest.MonkeyPatch):
    monkeypatch.delenv("FUSENET_LOG_LEVEL", raising=False)
    assert Environment.LOG_LEVEL == "WARNING"
    monkeypatch.setenv("FUSENET_LOG_LEVEL", " debug ")
    assert Environment.LOG_LEVEL == "DEBUG"
    monkeypatch.setenv("FUSENET_LOG_LEVEL", "loud")
    with pytest.raises(ValueNotValid) as e:
        Environment.LOG_LEVEL
    assert e.value.args[0] == "LOUD"


def test_environment_workers(monkeypatch: pytest.MonkeyPatch):
    monkeypatch.delenv("FUSENET_WORKERS", raising=False)
    assert Environment.WORKERS is None
    monkeypatch.setenv("FUSENET_WORKERS", "4")
    assert Environment.WORKERS == 4
    monkeypatch.setenv("FUSENET_WORKERS", "0")
    with pytest.raises(ValueNotValid):
        Environment.WORKERS
