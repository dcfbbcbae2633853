"""Pure-Python network kernel: event heap, delay table and per-process Bracha
machines.  Semantics must match ``_netkernel.pyx`` exactly (same RNG draws in
the same order, same tie-breaking), so traces are byte-identical."""
from __future__ import annotations

import heapq

from .rbc import (HEADER_BYTES, BrachaNode, DoubleBroadcast, RbcKind,
                  RbcMessage)

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

EV_DELIVER = 1
EV_TIMER = 2

MODE_HONEST = 0
MODE_SILENT = 1

_K_TIMER = 10
_K_RELEASE = 11
MAX_TICKS = 1 << 62


def _check_bounds(lo, hi):
    if not isinstance(lo, int) or not isinstance(hi, int):
        raise ValueError(f"delays must be finite integer ticks, got {lo!r}, {hi!r}")
    if lo < 0 or hi < lo or hi >= MAX_TICKS:
        raise ValueError(f"bad delay bounds [{lo}, {hi}]")


class RbcNetwork:
    compiled = False

    def __init__(self, n: int, f: int, seed: int, lo: int, hi: int):
        _check_bounds(lo, hi)
        self.n = n
        self.f = f
        self.now = 0
        self._state = seed & MASK64
        self._heap: list = []
        self._seq = 0
        self.nodes = [BrachaNode(i, n, f) for i in range(n)]
        self.modes = [MODE_HONEST] * n
        self.withhold = [0] * n
        self._lo = [[lo] * n for _ in range(n)]
        self._hi = [[hi] * n for _ in range(n)]
        self._slow: dict[tuple[int, int], int] = {}
        self._ordering = False
        self._glo = self._ghi = 0
        self._pending_list: list = []
        self._release_scheduled = False
        self._payloads: list[bytes] = []
        self._payload_ids: dict[bytes, int] = {}
        self._bcast: set[tuple[int, int]] = set()
        self.tracked = (1 << n) - 1
        self.msgs_sent = [0] * n
        self.bytes_sent = [0] * n
        self.max_delay = 0
        self.dropped = 0
        self.processed = 0
        self.inflight = 0

    # -- rng ------------------------------------------------------------------

    def _rand(self) -> int:
        self._state = s = (self._state + GOLDEN) & MASK64
        z = ((s ^ (s >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    # -- configuration ----------------------------------------------------------

    def register_payload(self, data: bytes) -> int:
        pid = self._payload_ids.get(data)
        if pid is None:
            pid = self._payload_ids[data] = len(self._payloads)
            self._payloads.append(data)
        return pid

    def payload(self, pid: int) -> bytes:
        return self._payloads[pid]

    def set_mode(self, node: int, mode: int) -> None:
        self.modes[node] = mode

    def set_withhold(self, node: int, mask: int) -> None:
        self.withhold[node] = mask

    def set_tracked(self, mask: int) -> None:
        self.tracked = mask

    def set_link(self, src: int, dst: int, lo: int, hi: int) -> None:
        _check_bounds(lo, hi)
        self._lo[src][dst] = lo
        self._hi[src][dst] = hi

    def set_sender(self, src: int, lo: int, hi: int) -> None:
        for d in range(self.n):
            self.set_link(src, d, lo, hi)

    def set_all(self, lo: int, hi: int) -> None:
        for s in range(self.n):
            self.set_sender(s, lo, hi)

    def link(self, src: int, dst: int) -> tuple[int, int]:
        return self._lo[src][dst], self._hi[src][dst]

    def slow_tag(self, tag_src: int, tag_round: int, extra: int) -> None:
        _check_bounds(extra, extra)
        self._slow[(tag_src, tag_round)] = extra

    def set_ordering(self, gap_lo: int, gap_hi: int) -> None:
        _check_bounds(gap_lo, gap_hi)
        self._ordering = True
        self._glo, self._ghi = gap_lo, gap_hi

    def add_timer(self, at: int, token: int) -> None:
        if at < self.now:
            at = self.now
        self._seq += 1
        heapq.heappush(self._heap, (at, -1, -1, self._seq, _K_TIMER, token, 0, 0))

    @property
    def pending(self) -> int:
        return self.inflight

    @property
    def backlog(self) -> int:
        """Messages waiting in the ordering list (ordering mode only)."""
        return len(self._pending_list)

    def draw(self) -> int:
        """Next value of the kernel's random stream."""
        return self._rand()

    # -- sending ----------------------------------------------------------------

    def sample_delay(self, src: int, dst: int, tag_src: int, tag_round: int) -> int:
        lo = self._lo[src][dst]
        span = self._hi[src][dst] - lo
        d = lo if span == 0 else lo + self._rand() % (span + 1)
        if self._slow:
            d += self._slow.get((tag_src, tag_round), 0)
        return d

    def _schedule(self, src, dst, kind, ts, tr, pid):
        self.msgs_sent[src] += 1
        self.inflight += 1
        self.bytes_sent[src] += HEADER_BYTES + len(self._payloads[pid])
        if self._ordering:
            lst = self._pending_list
            lst.insert(self._rand() % (len(lst) + 1), (self.now, dst, src, kind, ts, tr, pid))
            if not self._release_scheduled:
                self._schedule_release()
            return
        d = self.sample_delay(src, dst, ts, tr)
        if (self.tracked >> src) & 1 and (self.tracked >> dst) & 1 and d > self.max_delay:
            self.max_delay = d
        self._seq += 1
        heapq.heappush(self._heap, (self.now + d, dst, src, self._seq, kind, ts, tr, pid))

    def _schedule_release(self):
        span = self._ghi - self._glo
        g = self._glo if span == 0 else self._glo + self._rand() % (span + 1)
        self._seq += 1
        self._release_scheduled = True
        heapq.heappush(self._heap, (self.now + g, -1, -1, self._seq, _K_RELEASE, 0, 0, 0))

    def _broadcast(self, src, kind, ts, tr, pid):
        if self.modes[src] == MODE_SILENT:
            return
        wh = self.withhold[src]
        for dst in range(self.n):
            if not (wh >> dst) & 1:
                self._schedule(src, dst, kind, ts, tr, pid)

    def r_bcast(self, src: int, rnd: int, pid: int) -> None:
        if (src, rnd) in self._bcast:
            raise DoubleBroadcast(f"process {src} already broadcast round {rnd}")
        self._bcast.add((src, rnd))
        self._broadcast(src, int(RbcKind.INIT), src, rnd, pid)

    def send(self, src: int, dst: int, kind: int, tag_src: int, tag_round: int, pid: int) -> None:
        """Inject one raw message (used by Byzantine behaviors)."""
        if self.modes[src] == MODE_SILENT:
            return
        self._schedule(src, dst, int(kind), tag_src, tag_round, pid)

    # -- event loop ---------------------------------------------------------------

    def next_event(self):
        heap = self._heap
        while heap:
            t, to, frm, _seq, kind, ts, tr, pid = heapq.heappop(heap)
            self.now = t
            if kind == _K_TIMER:
                return (EV_TIMER, ts)
            if kind == _K_RELEASE:
                self._release_scheduled = False
                sent_at, to, frm, kind, ts, tr, pid = self._pending_list.pop(0)
                d = t - sent_at
                if (self.tracked >> frm) & 1 and (self.tracked >> to) & 1 and d > self.max_delay:
                    self.max_delay = d
                if self._pending_list:
                    self._schedule_release()
            ev = self._handle(to, frm, kind, ts, tr, pid)
            if ev is not None:
                return ev
        return None

    def _handle(self, to, frm, kind, ts, tr, pid):
        self.processed += 1
        self.inflight -= 1
        if self.modes[frm] == MODE_SILENT or self.modes[to] == MODE_SILENT:
            self.dropped += 1
            return None
        out, dlv = self.nodes[to].on_rbc_message(RbcMessage(RbcKind(kind), pid, ts, tr, frm))
        for m in out:
            self._broadcast(to, int(m.kind), ts, tr, m.payload)
        if dlv is not None:
            return (EV_DELIVER, to, ts, tr, pid)
        return None

    def misbehavior(self) -> list[int]:
        return [nd.misbehavior for nd in self.nodes]
