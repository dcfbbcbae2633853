"""Wave-by-wave ordering on top of a local DAG.

On each completed wave the coin picks a leader among the wave's first-round
vertices.  The leader is committed when 2f+1 fourth-round vertices reach it
over strong edges; earlier uncommitted leaders it strongly reaches are
committed first, and the causal histories of all committed leaders are
delivered in ascending (round, source) order.
"""
from __future__ import annotations

from typing import NamedTuple

from .coin import CoinOracle
from .core import Block, DagStore, Vertex, wave_round
from .dag_builder import DagBuilder


class Delivered(NamedTuple):
    block: Block
    round: int
    source: int
    sim_time: int


class Commit(NamedTuple):
    wave: int  # wave whose leader was committed
    leader: Vertex
    decided_in: int  # wave whose completion triggered the commit
    direct: bool  # commit rule met for this leader itself


class WaveOutcome(NamedTuple):
    wave: int
    leader: int  # coin choice
    present: bool
    support: int  # round(w,4) vertices strongly reaching the leader
    committed: bool


class DeliveryLog(list):
    """Append-only a_deliver sequence; rejects a repeated (round, source)."""

    def __init__(self):
        super().__init__()
        self._seen: set[tuple[int, int]] = set()

    def append(self, entry: Delivered) -> None:
        key = (entry.round, entry.source)
        if key in self._seen:
            raise AssertionError(f"vertex {key} delivered twice")
        self._seen.add(key)
        super().append(entry)


class Orderer:
    def __init__(self, me: int, n: int, f: int, dag: DagStore, coin: CoinOracle,
                 builder: DagBuilder | None = None):
        self.me = me
        self.n = n
        self.f = f
        self.dag = dag
        self.coin = coin
        self.builder = builder
        self.decided_wave = 0
        self.delivered_mask = 0
        self.leaders_stack: list[Vertex] = []
        self.log = DeliveryLog()
        self.commits: list[Commit] = []
        self.outcomes: list[WaveOutcome] = []
        self.next_seq = 1
        self.now = 0

    @property
    def delivered_vertices(self) -> set:
        return {self.dag.ref_of_bit(b) for b in range(self.delivered_mask.bit_length())
                if (self.delivered_mask >> b) & 1}

    def a_bcast(self, block: Block, r: int) -> None:
        assert r == self.next_seq, f"a_bcast sequence {r} out of order (expected {self.next_seq})"
        assert self.builder is not None
        self.next_seq += 1
        self.builder.enqueue_block(block)

    def get_wave_vertex_leader(self, w: int) -> Vertex | None:
        leader = self.coin.choose_leader(self.me, w)
        if leader is None:
            raise RuntimeError(f"coin for wave {w} not revealed yet")
        return self.dag.get(leader, wave_round(w, 1))

    def on_wave_ready(self, w: int) -> list[Delivered]:
        dag = self.dag
        v = self.get_wave_vertex_leader(w)
        leader = self.coin.adversary_peek(w)
        support = 0
        if v is not None:
            target = 1 << dag.bit(v)
            for u in dag.round_vertices(wave_round(w, 4)):
                if dag.strong_ancestors_mask(u) & target:
                    support += 1
        ok = v is not None and support >= 2 * self.f + 1
        self.outcomes.append(WaveOutcome(w, leader, v is not None, support, ok))
        if not ok:
            return []
        self.leaders_stack.append(v)
        chain = [(w, v)]
        for wp in range(w - 1, self.decided_wave, -1):
            vp = self.get_wave_vertex_leader(wp)
            if vp is not None and dag.strong_path(v, vp):
                self.leaders_stack.append(vp)
                chain.append((wp, vp))
                v = vp
        self.decided_wave = w
        for wv, lv in reversed(chain):
            self.commits.append(Commit(wv, lv, w, wv == w))
        return self.order_vertices(self.leaders_stack)

    def order_vertices(self, stack: list[Vertex]) -> list[Delivered]:
        dag = self.dag
        out = []
        while stack:
            v = stack.pop()
            fresh = dag.ancestors_mask(v) & ~self.delivered_mask & ~dag.genesis_mask
            self.delivered_mask |= fresh
            for u in dag.vertices_of_mask(fresh):
                d = Delivered(u.block, u.round, u.source, self.now)
                self.log.append(d)
                out.append(d)
        return out
