from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, Generic, TypeVar

from .core import Variable
from .exc import ValueNotValid, VariableNotSet
from .hint import Default, OneOf, Required, Validated, at_least_one, non_negative

__all__ = ["Var", "Environment"]


T = TypeVar("T")


@dataclass(frozen=True)
class Var(Generic[T], Variable[T]):
    name: str
    parser: Callable[[str], T]

    def value(self) -> T:
        try:
            raw = os.environ[self.name]
        except KeyError:
            raise VariableNotSet(self.name, repr(self))
        try:
            return self.parser(raw)
        except ValueError as exc:
            raise ValueNotValid(raw, repr(self), str(exc)) from exc

    def __repr__(self) -> str:
        return f"env.Var({self.name},{self.parser.__name__})"


def _level(raw: str) -> str:
    return raw.strip().upper()


class Environment:
    """Process-level overrides, read each time they are accessed."""

    SEED: int | None = ~(Var("FUSENET_SEED", int) >> Required(False) >> Validated(non_negative))
    LOG_LEVEL: str = ~(
        Var("FUSENET_LOG_LEVEL", _level).given(
            Default("WARNING"), OneOf({"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"})
        )
    )
    WORKERS: int | None = ~(Var("FUSENET_WORKERS", int) >> Required(False) >> Validated(at_least_one))
