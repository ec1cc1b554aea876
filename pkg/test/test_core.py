from __future__ import annotations

from typing import Any, assert_type

import pytest

from fusenet.core import Const, Key
from fusenet.env import Var
from fusenet.exc import DataFormatError, ValueNotValid, VariableNotSet
from fusenet.hint import Default, OneOf, Required, Validated

DOC: dict[str, Any] = {"task": "autoencoder", "train": {"lr": 0.05, "batch_size": 16, "mode": None}}


def test_const_value_and_repr():
    c = Const[int](5)
    assert c.value() == 5
    assert c() == 5
    assert "Const[int](5)" == repr(c)


def test_key_reads_dotted_path():
    lr = Key[float, Any](DOC, "train.lr", parser=float)
    assert lr.value() == 0.05
    assert lr() == 0.05
    assert repr(lr) == "Key(train.lr,float)"


def test_key_missing_and_null_are_not_set():
    for path in ("train.momentum", "network.layer_dims", "task.nested", "train.mode"):
        with pytest.raises(VariableNotSet) as e:
            Key(DOC, path, parser=str).value()
        assert e.value.args[0] == path
        assert f"Key({path},str)" == e.value.args[1]


def test_key_parser_errors_become_value_not_valid():
    with pytest.raises(ValueNotValid) as e:
        Key(DOC, "task", parser=int).value()
    assert e.value.args[0] == "autoencoder"
    assert e.value.args[1] == "Key(task,int)"
    assert "invalid literal" in e.value.args[2]


def test_key_enriches_package_errors_from_parser():
    def strict(raw: Any) -> int:
        raise DataFormatError("bad layout", 3)

    with pytest.raises(DataFormatError) as e:
        Key(DOC, "train.batch_size", parser=strict).value()
    assert e.value.args == ("bad layout", 3, "Key(train.batch_size,strict)")


def test_rshift_hints_default():
    v = Key(DOC, "train.momentum", parser=float) >> Default(0.9)
    assert v() == 0.9
    assert v.value() == 0.9
    assert (Key(DOC, "train.lr", parser=float) >> Default(0.9))() == 0.05


def test_rshift_hints_required():
    c = Const[int](10)
    assert (c >> Required(True)) is c

    optional = Key(DOC, "train.momentum", parser=float) >> Required(False)
    assert optional() is None
    with pytest.raises(VariableNotSet):
        optional.value()


def test_rshift_hints_validated():
    assert (Const[int](9) >> Validated(lambda x: x > 5))() == 9
    assert (Const[int](0) >> Validated(lambda x: x >= 0))() == 0
    assert (Const[None](None) >> Validated(lambda x: x > 0))() is None

    with pytest.raises(ValueNotValid) as e:
        (Const[int](0) >> Validated(lambda x: x > 0))()
    assert e.value.args[0] == 0
    assert "Validated(" in e.value.args[1]

    assert (Const[int](0) >> Validated(lambda x: x > 0, raises=False))() is None


def test_one_of_names_its_choices():
    mode = Key(DOC, "task", parser=str) >> OneOf({"classification", "autoencoder"})
    assert mode.value() == "autoencoder"
    assert repr(mode) == "Key(task,str)>>Validated(one_of(autoencoder,classification))"

    with pytest.raises(ValueNotValid) as e:
        (Const("regression") >> OneOf({"classification", "autoencoder"})).value()
    assert e.value.args[0] == "regression"


def test_required_vs_validated():
    with pytest.raises(VariableNotSet):
        (Key(DOC, "missing", parser=int) >> Required(True) >> Validated(bool))()
    with pytest.raises(VariableNotSet):
        (Key(DOC, "missing", parser=int) >> Validated(bool) >> Required(True))()
    with pytest.raises(ValueNotValid):
        (Const[int](1) >> Validated(lambda v: v > 1) >> Required(False))()


def test_validated_vs_default():
    positive_or_none = Validated(lambda x: x > 0, raises=False)
    assert (Const[int](0) >> positive_or_none >> Default(0))() == 0
    assert (Const[int](0) >> positive_or_none >> Default(0) >> positive_or_none)() is None


def test_or_backup(monkeypatch: pytest.MonkeyPatch):
    monkeypatch.delenv("FUSENET_TEST_MAIN", raising=False)
    main = Var[int]("FUSENET_TEST_MAIN", int)
    backup = Key(DOC, "train.batch_size", parser=int)
    assert (main | backup)() == 16
    assert (main | backup).value() == 16

    optional = main >> Required(False)
    assert (optional | backup)() == 16

    monkeypatch.setenv("FUSENET_TEST_MAIN", "11")
    assert (main | backup)() == 11

    monkeypatch.delenv("FUSENET_TEST_MAIN")
    with pytest.raises(VariableNotSet):
        (main | Key(DOC, "missing", parser=int))()
    assert (optional | optional)() is None
    with pytest.raises(VariableNotSet):
        (optional | optional).value()


def test_or_backup_vs_validated(monkeypatch: pytest.MonkeyPatch):
    monkeypatch.setenv("FUSENET_TEST_MAIN", "11")
    main = Var[int]("FUSENET_TEST_MAIN", int)
    backup = Const[int](10)
    with pytest.raises(ValueNotValid):
        (main >> Validated(lambda x: x < 10) | backup)()

    less_than_10_or_none = Validated(lambda x: x < 10, raises=False)
    assert (main >> less_than_10_or_none | backup)() == 10
    assert ((main >> less_than_10_or_none | backup) >> less_than_10_or_none)() is None


def test_descriptor_get_and_invert(monkeypatch: pytest.MonkeyPatch):
    class Settings:
        LR: float = ~Key(DOC, "train.lr", parser=float)
        MOMENTUM: float = ~(Key(DOC, "train.momentum", parser=float) >> Default(0.9))
        SEED: int | None = ~(Var("FUSENET_TEST_SEED", int) >> Required(False))

    monkeypatch.delenv("FUSENET_TEST_SEED", raising=False)
    assert Settings.LR == 0.05
    assert Settings().MOMENTUM == 0.9
    assert Settings.SEED is None
    monkeypatch.setenv("FUSENET_TEST_SEED", "3")
    assert Settings.SEED == 3

    assert_type(Settings.LR, float)

    c = Const[int](9)
    assert ~c is c


def test_repr_chaining():
    r1 = Key(DOC, "train.lr", parser=float) >> Default(0.01)
    assert repr(r1) == "Key(train.lr,float)>>Default(0.01)"

    r2 = Var[int]("FUSENET_TEST_R2", int) >> Required(False)
    assert repr(r2) == "env.Var(FUSENET_TEST_R2,int)>>Required(False)"

    def is_positive(x: int) -> bool:
        return x > 0

    assert repr(Const[int](1) >> Validated(is_positive)) == "Const[int](1)>>Validated(is_positive)"
    combined = (Var[int]("FUSENET_TEST_R3", int) >> Default(7)) | Const[int](3)
    assert repr(combined) == "env.Var(FUSENET_TEST_R3,int)>>Default(7)|Const[int](3)"


def test_given_equivalence():
    g1 = Key(DOC, "train.momentum", parser=float).given(Default(0.5))
    g2 = Key(DOC, "train.momentum", parser=float) >> Default(0.5)
    assert g1() == g2() == 0.5
    assert repr(g1) == repr(g2)

    g3 = Key(DOC, "missing", parser=int).given(Required(False), Validated(lambda v: v > 0, raises=False))
    g4 = Key(DOC, "missing", parser=int) >> Required(False) >> Validated(lambda v: v > 0, raises=False)
    assert g3() is None
    assert repr(g3) == repr(g4)


def test_otherwise_equivalence():
    main = Key(DOC, "output_dir", parser=str)
    ow1 = main.otherwise(Const("out"))
    ow2 = main | Const("out")
    assert ow1() == ow1.value() == "out"
    assert repr(ow1) == repr(ow2)

    ow3 = main.otherwise(Key(DOC, "missing", parser=str), Const("fallback"))
    ow4 = main | Key(DOC, "missing", parser=str) | Const("fallback")
    assert ow3.value() == "fallback"
    assert repr(ow3) == repr(ow4)
