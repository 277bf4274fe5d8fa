"""Multiply-add accounting hooked into the primitive ops.

Counting is off unless a :class:`FlopCounter` is active; module calls push
their names so totals can be grouped by top-level component.
"""
from __future__ import annotations

from collections import defaultdict

_ACTIVE: "FlopCounter | None" = None


class FlopCounter:
    def __init__(self) -> None:
        self.total = 0
        self.by_group: dict[str, int] = defaultdict(int)
        self._stack: list[str] = []

    def __enter__(self) -> "FlopCounter":
        global _ACTIVE
        self._prev = _ACTIVE
        _ACTIVE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE
        _ACTIVE = self._prev

    def push(self, name: str) -> None:
        self._stack.append(name)

    def pop(self) -> None:
        self._stack.pop()

    def add(self, n: int) -> None:
        self.total += n
        # group under the first child of the outermost module call
        if len(self._stack) > 1:
            key = self._stack[1]
        else:
            key = self._stack[0] if self._stack else "<root>"
        self.by_group[key] += n


def active() -> FlopCounter | None:
    return _ACTIVE


def record(n: int) -> None:
    if _ACTIVE is not None:
        _ACTIVE.add(int(n))
