from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Collection, TypeVar

from .core import Hint, Variable
from .exc import ValueNotValid, VariableNotSet

__all__ = ["Default", "Required", "Validated", "OneOf"]


R = TypeVar("R")
T = TypeVar("T")


@dataclass(frozen=True)
class Default(Hint[T]):
    value: T

    def wrap(self, variable: Variable[T]) -> Variable[T]:
        return self._Wrapper(variable, self.value)

    @dataclass(frozen=True)
    class _Wrapper(Variable[R]):
        variable: Variable[R]
        default: R

        def value(self) -> R:
            try:
                return self.variable.value()
            except VariableNotSet:
                return self.default

        def __repr__(self) -> str:
            return f"{self.variable!r}>>Default({self.default})"

        def __call__(self) -> R | None:
            try:
                found = self.variable()
            except VariableNotSet:
                return self.default
            return self.default if found is None else found


@dataclass(frozen=True)
class Required(Hint[T]):
    is_required: bool = True

    def wrap(self, variable: Variable[T]) -> Variable[T]:
        return variable if self.is_required else self._Wrapper(variable)

    @dataclass(frozen=True)
    class _Wrapper(Variable[R]):
        variable: Variable[R]

        def __repr__(self) -> str:
            return f"{self.variable!r}>>Required(False)"

        def value(self) -> R:
            return self.variable.value()

        def __call__(self) -> R | None:
            try:
                return self.variable()
            except VariableNotSet:
                return None


@dataclass(frozen=True)
class Validated(Hint[T]):
    validator: Callable[[T], bool]
    raises: bool = True

    def wrap(self, variable: Variable[T]) -> Variable[T]:
        return self._Wrapper(variable, self.validator, self.raises)

    @dataclass(frozen=True)
    class _Wrapper(Variable[R]):
        variable: Variable[R]
        validator: Callable[[R], bool]
        raises: bool = True

        def __repr__(self) -> str:
            return f"{self.variable!r}>>Validated({getattr(self.validator, '__name__', 'validator')})"

        def value(self) -> R:
            if self.validator(found := self.variable.value()):
                return found
            raise ValueNotValid(found, repr(self))

        def __call__(self) -> R | None:
            found = self.variable()
            if found is None:
                return None
            elif self.validator(found):
                return found
            elif self.raises:
                raise ValueNotValid(found, repr(self))
            else:
                return None


def OneOf(choices: Collection[T]) -> Validated[T]:
    def one_of(candidate: T) -> bool:
        return candidate in choices

    one_of.__name__ = f"one_of({','.join(map(str, sorted(choices, key=str)))})"
    return Validated(one_of)


def non_negative(x: float) -> bool:
    return x >= 0


def positive(x: float) -> bool:
    return x > 0


def at_least_one(x: int) -> bool:
    return x >= 1
