"""DAG construction: buffering delivered vertices, advancing rounds, creating
new vertices with strong and weak edges, and signalling completed waves."""
from __future__ import annotations

from collections import deque
from typing import Callable, NamedTuple

from .core import Block, DagStore, Vertex, VertexRef, shape_ok


class VertexAdded(NamedTuple):
    vertex: Vertex


class RoundAdvance(NamedTuple):
    completed: int  # round just completed
    members: int  # bitmask of sources in DAG[completed] at that moment


class WaveReady(NamedTuple):
    wave: int


class Broadcast(NamedTuple):
    vertex: Vertex


def always_valid(block: Block) -> bool:
    return True


class DagBuilder:
    def __init__(self, me: int, n: int, f: int, dag: DagStore | None = None,
                 block_valid: Callable[[Block], bool] = always_valid,
                 on_empty_queue: Callable[[int], None] | None = None):
        self.me = me
        self.n = n
        self.f = f
        self.quorum = 2 * f + 1
        self.dag = dag if dag is not None else DagStore(n, f)
        self.r = 0
        self.buffer: list[Vertex] = []
        self.blocks_to_propose: deque[Block] = deque()
        self.block_valid = block_valid
        # called with the round about to be created when no block is queued
        self.on_empty_queue = on_empty_queue
        self.awaiting_block: int | None = None
        self.dropped = 0

    def enqueue_block(self, block: Block) -> None:
        self.blocks_to_propose.append(block)

    def on_r_deliver(self, v: Vertex, round: int, source: int) -> bool:
        """Buffer a delivered vertex; returns False if it was dropped."""
        if v.round != round or v.source != source:
            v = Vertex(round, source, v.block, v.strong_edges, v.weak_edges)
        if not shape_ok(v, self.f) or not self.block_valid(v.block):
            self.dropped += 1
            return False
        self.buffer.append(v)
        return True

    def try_progress(self) -> list:
        """Run the construction loop until it can make no more progress.

        While waiting for a client block the round cannot advance, but
        delivered vertices keep flowing into the DAG.
        """
        events: list = []
        dag = self.dag
        stalled = False
        if self.awaiting_block is not None:
            stalled = not self._create_and_broadcast(self.awaiting_block, events)
        while True:
            self._absorb(events)
            if stalled or dag.round_size(self.r) < self.quorum:
                return events
            done = self.r
            events.append(RoundAdvance(done, dag.round_mask(done) >> (done * self.n)))
            if done % 4 == 0 and done > 0:
                events.append(WaveReady(done // 4))
            self.r = done + 1
            stalled = not self._create_and_broadcast(self.r, events)

    def _absorb(self, events: list) -> None:
        """Move every buffered vertex whose predecessors are present into the DAG."""
        dag = self.dag
        moved = True
        while moved and self.buffer:
            moved = False
            keep = []
            r = self.r
            for v in self.buffer:
                if v.round <= r and dag.try_insert(v):
                    events.append(VertexAdded(v))
                    moved = True
                else:
                    keep.append(v)
            self.buffer = keep

    def _create_and_broadcast(self, rnd: int, events: list) -> bool:
        if not self.blocks_to_propose and self.on_empty_queue is not None:
            self.on_empty_queue(rnd)
        if not self.blocks_to_propose:
            self.awaiting_block = rnd
            return False
        self.awaiting_block = None
        v = self.create_new_vertex(rnd)
        events.append(Broadcast(v))
        return True

    def create_new_vertex(self, rnd: int) -> Vertex:
        dag = self.dag
        assert self.blocks_to_propose, "no block to propose"
        assert dag.round_size(rnd - 1) >= self.quorum, "previous round incomplete"
        block = self.blocks_to_propose.popleft()
        strong = frozenset(VertexRef(s, rnd - 1) for s in dag.rounds[rnd - 1])
        weak = self.weak_edges_for(strong, rnd)
        return Vertex(rnd, self.me, block, strong, weak)

    def weak_edges_for(self, strong: frozenset, rnd: int) -> frozenset:
        """Weak edges to every vertex below ``rnd - 1`` not otherwise reachable.

        Scans rounds ``rnd-2`` down to 1, sources ascending, adding an edge
        whenever the vertex is not yet reachable through the edges chosen so
        far.
        """
        dag = self.dag
        n = self.n
        reach = 0
        for e in strong:
            reach |= dag.ancestors_mask(e)
        low_bits = (rnd - 1) * n
        missing = dag.present_mask & ((1 << low_bits) - 1) & ~reach & ~dag.genesis_mask
        weak = []
        r = rnd - 2
        while missing and r >= 1:
            row = (missing >> (r * n)) & ((1 << n) - 1)
            s = 0
            while row:
                if row & 1:
                    b = r * n + s
                    if (missing >> b) & 1:
                        ref = VertexRef(s, r)
                        weak.append(ref)
                        missing &= ~dag.ancestors_mask(ref)
                row >>= 1
                s += 1
            r -= 1
        return frozenset(weak)

    def set_weak_edges(self, v: Vertex, rnd: int) -> Vertex:
        return Vertex(v.round, v.source, v.block, v.strong_edges,
                      self.weak_edges_for(v.strong_edges, rnd))
