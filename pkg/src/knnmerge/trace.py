from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable


@dataclass
class Trace:
    """Per-iteration instrumentation of an iterative graph builder.

    With ``check=True`` the builders also audit their sampling discipline at
    every iteration boundary and count violations by name in ``violations``.
    ``on_iteration(iteration, graph)`` is called after each Local-Join.
    """

    check: bool = False
    on_iteration: Callable | None = None
    inserts: list[int] = field(default_factory=list)
    dist_counts: list[int] = field(default_factory=list)
    violations: Counter = field(default_factory=Counter)
    max_reverse: int = 0
    merge_calls: int = 0
    children: list[Trace] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.inserts)

    def insertion_count(self) -> int:
        """Successful inserts in the most recent iteration."""
        if not self.inserts:
            raise RuntimeError("no iteration has completed")
        return self.inserts[-1]

    def child(self) -> Trace:
        t = Trace(check=self.check)
        self.children.append(t)
        return t

    def all_violations(self) -> Counter:
        total = Counter(self.violations)
        for c in self.children:
            total.update(c.all_violations())
        return +total  # drops zero counts
