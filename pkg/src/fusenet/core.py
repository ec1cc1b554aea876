from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Generic, Mapping, TypeVar, cast, overload

from .exc import FusenetError, ValueNotValid, VariableNotSet

__all__ = ["Variable", "Hint", "Const", "Key"]

S = TypeVar("S")
T = TypeVar("T")


class Variable(Generic[T], ABC):
    """A typed configuration value resolved on demand.

    ``value()`` never returns None and raises ``VariableNotSet`` when the source is missing;
    calling the variable may return None when it was hinted as optional.
    """

    @abstractmethod
    def value(self) -> T:  # pragma: no cover
        raise NotImplementedError()

    @abstractmethod
    def __repr__(self) -> str:  # pragma: no cover
        raise NotImplementedError()

    def __call__(self) -> T | None:
        return self.value()

    @overload
    def __get__(self, instance: None, owner: type[object]) -> T: ...

    @overload
    def __get__(self, instance: object, owner: type[object]) -> T: ...

    def __get__(self, instance: object | None, owner: type[object]) -> T | None:
        return self()

    def __rshift__(self, hint: Hint[T]) -> Variable[T]:
        return hint.wrap(self)

    def given(self, *hints: Hint[T]) -> Variable[T]:
        wrapped = self
        for hint in hints:
            wrapped = hint.wrap(wrapped)
        return wrapped

    def __or__(self, backup: Variable[T]) -> Variable[T]:
        return _Backup(self, backup)

    def otherwise(self, *backups: Variable[T]) -> Variable[T]:
        wrapped = self
        for backup in backups:
            wrapped = _Backup(wrapped, backup)
        return wrapped

    def __invert__(self) -> T:
        return cast(T, self)


class Hint(Generic[T], ABC):
    @abstractmethod
    def wrap(self, variable: Variable[T]) -> Variable[T]:  # pragma: no cover
        raise NotImplementedError()


@dataclass(frozen=True)
class _Backup(Variable[T]):
    primary: Variable[T]
    backup: Variable[T]

    def __repr__(self) -> str:
        return f"{self.primary!r}|{self.backup!r}"

    def value(self) -> T:
        try:
            return self.primary.value()
        except VariableNotSet:
            return self.backup.value()

    def __call__(self) -> T | None:
        try:
            found = self.primary()
        except VariableNotSet:
            return self.backup()
        return self.backup() if found is None else found


@dataclass(frozen=True)
class Const(Variable[T]):
    val: T

    def value(self) -> T:
        return self.val

    def __repr__(self) -> str:
        return f"Const[{type(self.val).__name__}]({self.val})"


_MISSING = object()


@dataclass(frozen=True)
class Key(Generic[T, S], Variable[T]):
    """A value looked up in a parsed JSON document by dotted path, e.g. ``train.lambda``."""

    document: Mapping[str, Any] = field(repr=False)
    path: str
    parser: Callable[[S], T] = field(kw_only=True)

    def _lookup(self) -> Any:
        node: Any = self.document
        for part in self.path.split("."):
            if not isinstance(node, Mapping):
                return _MISSING
            node = node.get(part, _MISSING)
            if node is _MISSING:
                return _MISSING
        return node

    def value(self) -> T:
        raw = self._lookup()
        if raw is _MISSING or raw is None:
            raise VariableNotSet(self.path, repr(self))
        try:
            return self.parser(raw)
        except FusenetError as exc:
            exc.args += (repr(self),)
            raise exc
        except (TypeError, ValueError) as exc:
            raise ValueNotValid(raw, repr(self), str(exc)) from exc

    def __repr__(self) -> str:
        return f"Key({self.path},{getattr(self.parser, '__name__', 'parser')})"
