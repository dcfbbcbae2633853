"""Global perfect coin, simulated by a seeded oracle with an invocation gate.

The leader of wave ``w`` is fixed up front as ``splitmix64(seed, w) mod n``
but is only revealed once f+1 distinct processes have asked for it.  The
adversary gets :meth:`CoinOracle.adversary_peek`, which never leaks an
unrevealed value.
"""
from __future__ import annotations

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def coin_value(seed: int, w: int, n: int) -> int:
    return splitmix64(splitmix64(seed & MASK64) ^ (w & MASK64)) % n


PENDING = None


class CoinOracle:
    def __init__(self, n: int, f: int, seed: int, eager: frozenset[int] = frozenset()):
        self.n = n
        self.f = f
        self.seed = seed
        # adversary-controlled processes count as having invoked every wave
        self.eager = set(eager)
        self.invocations: dict[int, set[int]] = {}
        self.revealed: dict[int, int] = {}
        self.reveal_log: list[tuple[int, int]] = []
        self._listeners = []

    def on_reveal(self, cb) -> None:
        """Register ``cb(wave, leader)``, called once per wave at reveal time."""
        self._listeners.append(cb)

    def add_eager(self, p: int) -> None:
        self.eager.add(p)
        for w in sorted(self.invocations):
            self._maybe_reveal(w)

    def choose_leader(self, caller: int, w: int) -> int | None:
        if w < 1:
            raise ValueError("waves start at 1")
        got = self.revealed.get(w)
        if got is not None:
            self.invocations[w].add(caller)
            return got
        self.invocations.setdefault(w, set()).add(caller)
        return self._maybe_reveal(w)

    def _maybe_reveal(self, w: int) -> int | None:
        if w in self.revealed:
            return self.revealed[w]
        callers = self.invocations.get(w, ())
        if len(set(callers) | self.eager) < self.f + 1:
            return PENDING
        leader = coin_value(self.seed, w, self.n)
        self.revealed[w] = leader
        self.reveal_log.append((w, leader))
        for cb in self._listeners:
            cb(w, leader)
        return leader

    def adversary_peek(self, w: int) -> int | None:
        return self.revealed.get(w)
