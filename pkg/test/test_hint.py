from fusenet.hint import Default, OneOf, Required, Validated, at_least_one, non_negative, positive


def test_default():
    d = Default(10)
    assert d.value == 10


def test_required():
    assert Required().is_required is True
    assert Required(False).is_required is False


def test_validated():
    def is_even(x: int) -> bool:
        return x % 2 == 0

    v = Validated(is_even)
    assert v.validator(2) is True
    assert v.validator(3) is False
    assert v.raises is True


def test_one_of():
    v = OneOf({"tanh", "relu"})
    assert v.validator("tanh")
    assert not v.validator("softplus")
    assert v.validator.__name__ == "one_of(relu,tanh)"


def test_predicates():
    assert non_negative(0) and not non_negative(-1e-9)
    assert positive(1e-9) and not positive(0)
    assert at_least_one(1) and not at_least_one(0)
