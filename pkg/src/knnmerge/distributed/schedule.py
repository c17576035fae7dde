"""Round-robin pairing of nodes for peer-to-peer merging."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import InvalidInputError


def n_rounds(m: int) -> int:
    """ceil((m - 1) / 2) rounds cover every unordered pair of ``m`` nodes once."""
    return m // 2


def schedule(i: int, it: int, m: int) -> tuple[int, int]:
    """Send target ``t`` and receive source ``j`` of node ``i`` in round ``it`` (1-based)."""
    if m < 2 or not 0 <= i < m:
        raise InvalidInputError(f"bad node {i} for m={m}")
    if not 1 <= it <= n_rounds(m):
        raise InvalidInputError(f"round {it} outside [1, {n_rounds(m)}]")
    return (i + it) % m, (i - it + m) % m


@dataclass(frozen=True)
class PairTask:
    round: int
    node: int  # node that computes the merge
    partner: int

    @property
    def pair(self) -> tuple[int, int]:
        return (min(self.node, self.partner), max(self.node, self.partner))


def computes_merge(i: int, it: int, m: int) -> bool:
    """Whether node ``i`` runs a merge in round ``it``.

    When ``t == j`` (even ``m``, last round) both peers would merge the same
    pair; only the lower id does.
    """
    t, j = schedule(i, it, m)
    return t != j or i < j


def pair_tasks(m: int) -> list[PairTask]:
    """Every merge of a full run in execution order (round, then node id)."""
    tasks = []
    for it in range(1, n_rounds(m) + 1):
        for i in range(m):
            if computes_merge(i, it, m):
                tasks.append(PairTask(it, i, schedule(i, it, m)[1]))
    return tasks


def pair_rank(a: int, b: int, m: int) -> int:
    """Index of unordered pair ``{a, b}`` in lexicographic order of all pairs."""
    a, b = min(a, b), max(a, b)
    return a * m - a * (a + 1) // 2 + (b - a - 1)


def subgraph_seed(seed: int, i: int) -> int:
    return seed + i


def pair_seed(seed: int, a: int, b: int, m: int) -> int:
    return seed + pair_rank(a, b, m)
