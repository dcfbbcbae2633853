# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled network kernel.  Mirrors ``_netkernel_py`` draw for draw."""

from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memset
from libc.stdint cimport uint64_t, int64_t, int32_t, uint8_t

from .rbc import DoubleBroadcast, HEADER_BYTES, MAX_PAYLOADS_PER_TAG

DEF MAXPAY = 4
DEF K_INIT = 1
DEF K_ECHO = 2
DEF K_READY = 3
DEF K_TIMER = 10
DEF K_RELEASE = 11

EV_DELIVER = 1
EV_TIMER = 2
MODE_HONEST = 0
MODE_SILENT = 1
MAX_TICKS = 1 << 62

assert MAX_PAYLOADS_PER_TAG == MAXPAY


cdef struct Msg:
    int64_t t
    int32_t to
    int32_t frm
    int64_t seq
    int32_t kind
    int32_t ts
    int64_t tr
    int32_t pid


cdef struct RState:
    int32_t init_pid
    uint8_t sent_echo
    uint8_t sent_ready
    uint8_t delivered
    uint8_t npay
    uint64_t echo_from
    uint64_t ready_from
    int32_t pay[MAXPAY]
    uint64_t echo_mask[MAXPAY]
    uint64_t ready_mask[MAXPAY]


cdef inline bint msg_lt(Msg* a, Msg* b) nogil:
    if a.t != b.t:
        return a.t < b.t
    if a.to != b.to:
        return a.to < b.to
    if a.frm != b.frm:
        return a.frm < b.frm
    return a.seq < b.seq


cdef inline int popcount64(uint64_t x) nogil:
    return __builtin_popcountll(x)


cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


def _check_bounds(lo, hi):
    if not isinstance(lo, int) or not isinstance(hi, int):
        raise ValueError(f"delays must be finite integer ticks, got {lo!r}, {hi!r}")
    if lo < 0 or hi < lo or hi >= MAX_TICKS:
        raise ValueError(f"bad delay bounds [{lo}, {hi}]")


cdef class RbcNetwork:
    cdef public int n
    cdef public int f
    cdef public int64_t now
    cdef uint64_t _state
    cdef Msg* heap
    cdef Py_ssize_t hsize, hcap
    cdef int64_t seq
    cdef RState* states
    cdef Py_ssize_t ssize, scap
    cdef dict state_index
    cdef int64_t* lo
    cdef int64_t* hi
    cdef int* modes_c
    cdef uint64_t* withhold_c
    cdef dict slow
    cdef bint ordering
    cdef int64_t glo, ghi
    cdef list pending_list
    cdef bint release_scheduled
    cdef list payloads
    cdef dict payload_ids
    cdef int64_t* paylen
    cdef Py_ssize_t plcap
    cdef set bcast
    cdef public uint64_t tracked
    cdef int64_t* msgs_c
    cdef int64_t* bytes_c
    cdef int64_t* misb
    cdef public int64_t max_delay
    cdef public int64_t dropped
    cdef public int64_t processed
    cdef public int64_t inflight

    compiled = True

    def __cinit__(self, int n, int f, seed, lo, hi):
        _check_bounds(lo, hi)
        if n > 64:
            raise ValueError("compiled kernel supports n <= 64")
        self.n = n
        self.f = f
        self.now = 0
        self._state = <uint64_t>(seed & 0xFFFFFFFFFFFFFFFF)
        self.hcap = 1024
        self.hsize = 0
        self.heap = <Msg*>malloc(self.hcap * sizeof(Msg))
        self.scap = 256
        self.ssize = 0
        self.states = <RState*>malloc(self.scap * sizeof(RState))
        self.state_index = {}
        self.lo = <int64_t*>malloc(n * n * sizeof(int64_t))
        self.hi = <int64_t*>malloc(n * n * sizeof(int64_t))
        self.modes_c = <int*>malloc(n * sizeof(int))
        self.withhold_c = <uint64_t*>malloc(n * sizeof(uint64_t))
        self.msgs_c = <int64_t*>malloc(n * sizeof(int64_t))
        self.bytes_c = <int64_t*>malloc(n * sizeof(int64_t))
        self.misb = <int64_t*>malloc(n * sizeof(int64_t))
        self.plcap = 256
        self.paylen = <int64_t*>malloc(self.plcap * sizeof(int64_t))
        if (self.heap == NULL or self.states == NULL or self.lo == NULL or self.hi == NULL
                or self.modes_c == NULL or self.withhold_c == NULL or self.msgs_c == NULL
                or self.bytes_c == NULL or self.misb == NULL or self.paylen == NULL):
            raise MemoryError()
        cdef int i
        for i in range(n * n):
            self.lo[i] = lo
            self.hi[i] = hi
        for i in range(n):
            self.modes_c[i] = 0
            self.withhold_c[i] = 0
            self.msgs_c[i] = 0
            self.bytes_c[i] = 0
            self.misb[i] = 0
        self.slow = {}
        self.ordering = False
        self.glo = 0
        self.ghi = 0
        self.pending_list = []
        self.release_scheduled = False
        self.payloads = []
        self.payload_ids = {}
        self.bcast = set()
        self.tracked = (1 << n) - 1
        self.max_delay = 0
        self.dropped = 0
        self.processed = 0
        self.inflight = 0
        self.seq = 0

    def __dealloc__(self):
        free(self.heap)
        free(self.states)
        free(self.lo)
        free(self.hi)
        free(self.modes_c)
        free(self.withhold_c)
        free(self.msgs_c)
        free(self.bytes_c)
        free(self.misb)
        free(self.paylen)

    # -- rng ------------------------------------------------------------------

    cdef inline uint64_t _rand(self):
        self._state += 0x9E3779B97F4A7C15ULL
        cdef uint64_t z = self._state
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
        return z ^ (z >> 31)

    # -- configuration ----------------------------------------------------------

    def register_payload(self, bytes data):
        pid = self.payload_ids.get(data)
        if pid is None:
            pid = len(self.payloads)
            self.payload_ids[data] = pid
            self.payloads.append(data)
            if pid >= self.plcap:
                self.plcap *= 2
                self.paylen = <int64_t*>realloc(self.paylen, self.plcap * sizeof(int64_t))
                if self.paylen == NULL:
                    raise MemoryError()
            self.paylen[pid] = len(data)
        return pid

    def payload(self, int pid):
        return self.payloads[pid]

    def set_mode(self, int node, int mode):
        self.modes_c[node] = mode

    @property
    def modes(self):
        return [self.modes_c[i] for i in range(self.n)]

    def set_withhold(self, int node, mask):
        self.withhold_c[node] = <uint64_t>mask

    @property
    def withhold(self):
        return [int(self.withhold_c[i]) for i in range(self.n)]

    def set_tracked(self, mask):
        self.tracked = <uint64_t>mask

    def set_link(self, int src, int dst, lo, hi):
        _check_bounds(lo, hi)
        self.lo[src * self.n + dst] = lo
        self.hi[src * self.n + dst] = hi

    def set_sender(self, int src, lo, hi):
        cdef int d
        for d in range(self.n):
            self.set_link(src, d, lo, hi)

    def set_all(self, lo, hi):
        cdef int s
        for s in range(self.n):
            self.set_sender(s, lo, hi)

    def link(self, int src, int dst):
        return (self.lo[src * self.n + dst], self.hi[src * self.n + dst])

    def slow_tag(self, int tag_src, int64_t tag_round, extra):
        _check_bounds(extra, extra)
        self.slow[(tag_src, tag_round)] = extra

    def set_ordering(self, gap_lo, gap_hi):
        _check_bounds(gap_lo, gap_hi)
        self.ordering = True
        self.glo = gap_lo
        self.ghi = gap_hi

    def add_timer(self, int64_t at, int64_t token):
        if at < self.now:
            at = self.now
        self.seq += 1
        cdef Msg m
        m.t = at
        m.to = -1
        m.frm = -1
        m.seq = self.seq
        m.kind = K_TIMER
        m.ts = 0
        m.tr = token
        m.pid = 0
        self._push(&m)

    @property
    def pending(self):
        return self.inflight

    @property
    def backlog(self):
        """Messages waiting in the ordering list (ordering mode only)."""
        return len(self.pending_list)

    def draw(self):
        """Next value of the kernel's random stream."""
        return self._rand()

    @property
    def msgs_sent(self):
        return [self.msgs_c[i] for i in range(self.n)]

    @property
    def bytes_sent(self):
        return [self.bytes_c[i] for i in range(self.n)]

    def misbehavior(self):
        return [self.misb[i] for i in range(self.n)]

    # -- heap -------------------------------------------------------------------

    cdef int _push(self, Msg* m) except -1:
        cdef Py_ssize_t i, parent
        if self.hsize == self.hcap:
            self.hcap *= 2
            self.heap = <Msg*>realloc(self.heap, self.hcap * sizeof(Msg))
            if self.heap == NULL:
                raise MemoryError()
        i = self.hsize
        self.hsize += 1
        while i > 0:
            parent = (i - 1) >> 1
            if msg_lt(m, &self.heap[parent]):
                self.heap[i] = self.heap[parent]
                i = parent
            else:
                break
        self.heap[i] = m[0]
        return 0

    cdef void _pop(self, Msg* out) nogil:
        cdef Py_ssize_t i = 0, child, size
        out[0] = self.heap[0]
        self.hsize -= 1
        size = self.hsize
        if size == 0:
            return
        cdef Msg last = self.heap[size]
        while True:
            child = 2 * i + 1
            if child >= size:
                break
            if child + 1 < size and msg_lt(&self.heap[child + 1], &self.heap[child]):
                child += 1
            if msg_lt(&self.heap[child], &last):
                self.heap[i] = self.heap[child]
                i = child
            else:
                break
        self.heap[i] = last

    # -- sending ----------------------------------------------------------------

    cdef inline int64_t _delay(self, int src, int dst, int ts, int64_t tr) except -1:
        cdef int64_t lo = self.lo[src * self.n + dst]
        cdef int64_t span = self.hi[src * self.n + dst] - lo
        cdef int64_t d
        if span == 0:
            d = lo
        else:
            d = lo + <int64_t>(self._rand() % <uint64_t>(span + 1))
        if self.slow:
            extra = self.slow.get((ts, tr))
            if extra is not None:
                d += <int64_t>extra
        return d

    def sample_delay(self, int src, int dst, int tag_src, int64_t tag_round):
        return self._delay(src, dst, tag_src, tag_round)

    cdef int _schedule(self, int src, int dst, int kind, int ts, int64_t tr, int pid) except -1:
        cdef Msg m
        cdef int64_t d
        cdef Py_ssize_t pos
        self.msgs_c[src] += 1
        self.inflight += 1
        self.bytes_c[src] += HEADER_BYTES + self.paylen[pid]
        if self.ordering:
            pos = <Py_ssize_t>(self._rand() % <uint64_t>(len(self.pending_list) + 1))
            self.pending_list.insert(pos, (self.now, dst, src, kind, ts, tr, pid))
            if not self.release_scheduled:
                self._schedule_release()
            return 0
        d = self._delay(src, dst, ts, tr)
        if (self.tracked >> src) & 1 and (self.tracked >> dst) & 1 and d > self.max_delay:
            self.max_delay = d
        self.seq += 1
        m.t = self.now + d
        m.to = dst
        m.frm = src
        m.seq = self.seq
        m.kind = kind
        m.ts = ts
        m.tr = tr
        m.pid = pid
        self._push(&m)
        return 0

    cdef int _schedule_release(self) except -1:
        cdef int64_t span = self.ghi - self.glo
        cdef int64_t g
        cdef Msg m
        if span == 0:
            g = self.glo
        else:
            g = self.glo + <int64_t>(self._rand() % <uint64_t>(span + 1))
        self.seq += 1
        self.release_scheduled = True
        m.t = self.now + g
        m.to = -1
        m.frm = -1
        m.seq = self.seq
        m.kind = K_RELEASE
        m.ts = 0
        m.tr = 0
        m.pid = 0
        self._push(&m)
        return 0

    cdef int _broadcast(self, int src, int kind, int ts, int64_t tr, int pid) except -1:
        cdef int dst
        cdef uint64_t wh
        if self.modes_c[src] == 1:
            return 0
        wh = self.withhold_c[src]
        for dst in range(self.n):
            if not (wh >> dst) & 1:
                self._schedule(src, dst, kind, ts, tr, pid)
        return 0

    def r_bcast(self, int src, int64_t rnd, int pid):
        key = (src, rnd)
        if key in self.bcast:
            raise DoubleBroadcast(f"process {src} already broadcast round {rnd}")
        self.bcast.add(key)
        self._broadcast(src, K_INIT, src, rnd, pid)

    def send(self, int src, int dst, int kind, int tag_src, int64_t tag_round, int pid):
        """Inject one raw message (used by Byzantine behaviors)."""
        if self.modes_c[src] == 1:
            return
        self._schedule(src, dst, kind, tag_src, tag_round, pid)

    # -- bracha -----------------------------------------------------------------

    cdef RState* _state_for(self, int to, int ts, int64_t tr) except NULL:
        key = (tr * self.n + ts) * self.n + to
        idx = self.state_index.get(key)
        cdef Py_ssize_t i
        cdef RState* st
        if idx is None:
            if self.ssize == self.scap:
                self.scap *= 2
                self.states = <RState*>realloc(self.states, self.scap * sizeof(RState))
                if self.states == NULL:
                    raise MemoryError()
            i = self.ssize
            self.ssize += 1
            self.state_index[key] = i
            st = &self.states[i]
            memset(st, 0, sizeof(RState))
            st.init_pid = -1
            return st
        i = idx
        return &self.states[i]

    cdef inline int _slot(self, RState* st, int pid) nogil:
        cdef int k
        for k in range(st.npay):
            if st.pay[k] == pid:
                return k
        if st.npay >= MAXPAY:
            return -1
        k = st.npay
        st.pay[k] = pid
        st.echo_mask[k] = 0
        st.ready_mask[k] = 0
        st.npay += 1
        return k

    cdef inline void _repeat(self, int to, RState* st, uint64_t* masks, int pid, uint64_t bit) nogil:
        cdef int k
        for k in range(st.npay):
            if st.pay[k] == pid:
                if masks[k] & bit:
                    return
                break
        self.misb[to] += 1

    cdef object _handle(self, int to, int frm, int kind, int ts, int64_t tr, int pid):
        cdef RState* st
        cdef uint64_t bit
        cdef int k, cnt
        cdef int f = self.f
        self.processed += 1
        self.inflight -= 1
        if self.modes_c[frm] == 1 or self.modes_c[to] == 1:
            self.dropped += 1
            return None
        st = self._state_for(to, ts, tr)
        bit = (<uint64_t>1) << frm
        if kind == K_INIT:
            if frm != ts:
                self.misb[to] += 1
                return None
            if st.init_pid != -1:
                if st.init_pid != pid:
                    self.misb[to] += 1
                return None
            st.init_pid = pid
            if not st.sent_echo:
                st.sent_echo = 1
                self._broadcast(to, K_ECHO, ts, tr, pid)
            return None
        if kind == K_ECHO:
            if st.echo_from & bit:
                self._repeat(to, st, st.echo_mask, pid, bit)
                return None
            k = self._slot(st, pid)
            if k < 0:
                self.misb[to] += 1
                return None
            st.echo_from |= bit
            st.echo_mask[k] |= bit
            if not st.sent_ready and popcount64(st.echo_mask[k]) >= 2 * f + 1:
                st.sent_ready = 1
                self._broadcast(to, K_READY, ts, tr, pid)
            return None
        if kind == K_READY:
            if st.ready_from & bit:
                self._repeat(to, st, st.ready_mask, pid, bit)
                return None
            k = self._slot(st, pid)
            if k < 0:
                self.misb[to] += 1
                return None
            st.ready_from |= bit
            st.ready_mask[k] |= bit
            cnt = popcount64(st.ready_mask[k])
            if not st.sent_ready and cnt >= f + 1:
                st.sent_ready = 1
                self._broadcast(to, K_READY, ts, tr, pid)
            if not st.delivered and cnt >= 2 * f + 1:
                st.delivered = 1
                return (EV_DELIVER, to, ts, tr, pid)
            return None
        self.misb[to] += 1
        return None

    # -- event loop ---------------------------------------------------------------

    def next_event(self):
        cdef Msg m
        cdef int64_t d
        while self.hsize > 0:
            self._pop(&m)
            self.now = m.t
            if m.kind == K_TIMER:
                return (EV_TIMER, m.tr)
            if m.kind == K_RELEASE:
                self.release_scheduled = False
                sent_at, to, frm, kind, ts, tr, pid = self.pending_list.pop(0)
                d = m.t - <int64_t>sent_at
                if (self.tracked >> <int>frm) & 1 and (self.tracked >> <int>to) & 1 and d > self.max_delay:
                    self.max_delay = d
                if self.pending_list:
                    self._schedule_release()
                ev = self._handle(to, frm, kind, ts, tr, pid)
            else:
                ev = self._handle(m.to, m.frm, m.kind, m.ts, m.tr, m.pid)
            if ev is not None:
                return ev
        return None
