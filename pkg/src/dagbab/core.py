"""Domain types, the per-process DAG store and its reachability predicates.

Vertices are addressed by ``(source, round)``.  Each stored vertex gets a bit
at index ``round * n + source`` and the store caches, per vertex, the bitmask
of everything reachable from it (all edges) and of everything reachable over
strong edges only.  ``path`` and ``strong_path`` are then single bit tests.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Union


class DagError(ValueError):
    """Base class for DAG store rejections."""


class VertexAbsent(DagError):
    pass


class PredecessorsAbsent(DagError):
    pass


class EquivocationAtStore(DagError):
    """Two different vertices for the same (source, round)."""


def check_config(n: int, f: int) -> None:
    if f < 1:
        raise ValueError(f"f must be >= 1, got {f}")
    if n != 3 * f + 1:
        raise ValueError(f"n must equal 3f+1 (n={n}, f={f})")


class VertexRef(NamedTuple):
    source: int
    round: int


@dataclass(frozen=True)
class Block:
    proposer: int
    seq: int
    txs: tuple[bytes, ...] = ()


@dataclass(frozen=True, eq=False)
class Vertex:
    round: int
    source: int
    block: Block
    strong_edges: frozenset = field(default_factory=frozenset)
    weak_edges: frozenset = field(default_factory=frozenset)
    ref: VertexRef = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "ref", VertexRef(self.source, self.round))

    def edge_bits(self, n: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Bit indices of the strong and weak edges for a store of size n."""
        cached = self.__dict__.get("_edge_bits")
        if cached is None or cached[0] != n:
            cached = (n, tuple(r * n + s for s, r in self.strong_edges),
                      tuple(r * n + s for s, r in self.weak_edges))
            object.__setattr__(self, "_edge_bits", cached)
        return cached[1], cached[2]

    def key(self):
        return (self.round, self.source, self.block,
                tuple(sorted(self.strong_edges)), tuple(sorted(self.weak_edges)))

    def __eq__(self, other):
        if not isinstance(other, Vertex):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self):
        return hash((self.round, self.source))

    def __repr__(self):
        return f"Vertex(r={self.round}, src={self.source}, seq={self.block.seq})"


def shape_errors(v: Vertex, f: int) -> list[str]:
    """Structural problems that make a delivered vertex unusable."""
    errs = []
    if v.round < 1:
        errs.append("round must be >= 1")
    if len(v.strong_edges) < 2 * f + 1:
        errs.append(f"needs >= {2 * f + 1} strong edges, has {len(v.strong_edges)}")
    for ref in v.strong_edges:
        if ref.round != v.round - 1:
            errs.append(f"strong edge {tuple(ref)} not in round {v.round - 1}")
            break
    for ref in v.weak_edges:
        if ref.round > v.round - 2 or ref.round < 0:
            errs.append(f"weak edge {tuple(ref)} not below round {v.round - 1}")
            break
    return errs


def shape_ok(v: Vertex, f: int) -> bool:
    """Cached ``not shape_errors(v, f)``; vertices are immutable."""
    cached = v.__dict__.get("_shape_ok")
    if cached is None or cached[0] != f:
        cached = (f, not shape_errors(v, f))
        object.__setattr__(v, "_shape_ok", cached)
    return cached[1]


AnyVertex = Union[Vertex, VertexRef]


class DagStore:
    """One process's local view of the DAG, starting from the genesis round."""

    def __init__(self, n: int, f: int):
        self.n = n
        self.f = f
        self.rounds: list[dict[int, Vertex]] = []
        # keyed by bit index
        self._anc: dict[int, int] = {}
        self._sanc: dict[int, int] = {}
        self.present_mask = 0
        self.genesis_mask = 0
        g = {}
        for s in range(2 * f + 1):
            v = Vertex(0, s, Block(s, 0, ()))
            g[s] = v
            b = 1 << s
            self._anc[s] = b
            self._sanc[s] = b
            self.genesis_mask |= b
        self.rounds.append(g)
        self.present_mask = self.genesis_mask

    # -- lookup -------------------------------------------------------------

    def bit(self, ref: AnyVertex) -> int:
        return ref.round * self.n + ref.source

    def ref_of_bit(self, b: int) -> VertexRef:
        r, s = divmod(b, self.n)
        return VertexRef(s, r)

    def get(self, source: int, round: int) -> Vertex | None:
        if round >= len(self.rounds):
            return None
        return self.rounds[round].get(source)

    def __contains__(self, ref: AnyVertex) -> bool:
        return self.get(ref.source, ref.round) is not None

    def vertex(self, ref: AnyVertex) -> Vertex:
        v = self.get(ref.source, ref.round)
        if v is None:
            raise VertexAbsent(f"vertex {tuple(VertexRef(ref.source, ref.round))} absent")
        return v

    def round_size(self, r: int) -> int:
        return len(self.rounds[r]) if r < len(self.rounds) else 0

    def round_vertices(self, r: int) -> list[Vertex]:
        if r >= len(self.rounds):
            return []
        d = self.rounds[r]
        return [d[s] for s in sorted(d)]

    def round_mask(self, r: int) -> int:
        if r >= len(self.rounds):
            return 0
        m = 0
        base = r * self.n
        for s in self.rounds[r]:
            m |= 1 << (base + s)
        return m

    @property
    def max_round(self) -> int:
        return len(self.rounds) - 1

    def __iter__(self) -> Iterator[Vertex]:
        for d in self.rounds:
            for s in sorted(d):
                yield d[s]

    def __len__(self):
        return sum(len(d) for d in self.rounds)

    # -- mutation -----------------------------------------------------------

    def has_predecessors(self, v: Vertex) -> bool:
        strong, weak = v.edge_bits(self.n)
        anc = self._anc
        return all(b in anc for b in strong) and all(b in anc for b in weak)

    def _link(self, v: Vertex):
        """(ancestors, strong ancestors) of v, or None if a predecessor is missing."""
        strong, weak = v.edge_bits(self.n)
        anc_t, sanc_t = self._anc, self._sanc
        anc = sanc = 0
        for b in strong:
            a = sanc_t.get(b)
            if a is None:
                return None
            sanc |= a
            anc |= anc_t[b]
        for b in weak:
            a = anc_t.get(b)
            if a is None:
                return None
            anc |= a
        return anc, sanc

    def _store(self, v: Vertex, anc: int, sanc: int) -> None:
        rounds = self.rounds
        while len(rounds) <= v.round:
            rounds.append({})
        rounds[v.round][v.source] = v
        b = v.round * self.n + v.source
        m = 1 << b
        self._anc[b] = anc | m
        self._sanc[b] = sanc | m
        self.present_mask |= m

    def _check_slot(self, v: Vertex) -> None:
        if v.round < len(self.rounds) and v.source in self.rounds[v.round]:
            raise EquivocationAtStore(
                f"vertex for (source={v.source}, round={v.round}) already stored")

    def insert_vertex(self, v: Vertex) -> None:
        self._check_slot(v)
        masks = self._link(v)
        if masks is None:
            missing = [tuple(e) for e in sorted(v.strong_edges | v.weak_edges) if e not in self]
            raise PredecessorsAbsent(f"edges {missing} of {v!r} not in DAG")
        self._store(v, *masks)

    def try_insert(self, v: Vertex) -> bool:
        """Insert v if all its predecessors are present; report whether it was."""
        self._check_slot(v)
        masks = self._link(v)
        if masks is None:
            return False
        self._store(v, *masks)
        return True

    # -- reachability ---------------------------------------------------------

    def _mask(self, table: dict, v: AnyVertex) -> int:
        m = table.get(v.round * self.n + v.source)
        if m is None:
            raise VertexAbsent(f"vertex {(v.source, v.round)} absent")
        return m

    def ancestors_mask(self, v: AnyVertex) -> int:
        return self._mask(self._anc, v)

    def strong_ancestors_mask(self, v: AnyVertex) -> int:
        return self._mask(self._sanc, v)

    def path(self, v: AnyVertex, u: AnyVertex) -> bool:
        m = self._mask(self._anc, v)
        self._mask(self._anc, u)
        return bool((m >> self.bit(u)) & 1)

    def strong_path(self, v: AnyVertex, u: AnyVertex) -> bool:
        m = self._mask(self._sanc, v)
        self._mask(self._sanc, u)
        return bool((m >> self.bit(u)) & 1)

    def vertices_of_mask(self, mask: int) -> list[Vertex]:
        """Stored vertices for the set bits, ascending by (round, source)."""
        out = []
        n = self.n
        rounds = self.rounds
        while mask:
            low = mask & -mask
            r, s = divmod(low.bit_length() - 1, n)
            out.append(rounds[r][s])
            mask ^= low
        return out

    def causal_history(self, v: AnyVertex) -> list[Vertex]:
        return self.vertices_of_mask(self.ancestors_mask(v))


def iter_bits(mask: int) -> Iterator[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


# -- binary records -----------------------------------------------------------

_REF = struct.Struct("<IQ")
_HEAD = struct.Struct("<QII")
_BLOCK = struct.Struct("<IQI")
_U32 = struct.Struct("<I")


def encode_vertex(v: Vertex) -> bytes:
    """Length-prefixed record: u32 length, then round/source/edges/block."""
    parts = [_HEAD.pack(v.round, v.source, len(v.strong_edges))]
    parts.extend(_REF.pack(s, r) for s, r in sorted(v.strong_edges))
    parts.append(_U32.pack(len(v.weak_edges)))
    parts.extend(_REF.pack(s, r) for s, r in sorted(v.weak_edges))
    b = v.block
    parts.append(_BLOCK.pack(b.proposer, b.seq, len(b.txs)))
    for tx in b.txs:
        parts.append(_U32.pack(len(tx)))
        parts.append(tx)
    body = b"".join(parts)
    return _U32.pack(len(body)) + body


class DecodeError(ValueError):
    pass


def decode_vertex(data: bytes) -> Vertex:
    try:
        (length,) = _U32.unpack_from(data, 0)
        if length != len(data) - 4:
            raise DecodeError("record length mismatch")
        off = 4
        rnd, src, ns = _HEAD.unpack_from(data, off)
        off += _HEAD.size
        strong = []
        for _ in range(ns):
            strong.append(VertexRef(*_REF.unpack_from(data, off)))
            off += _REF.size
        (nw,) = _U32.unpack_from(data, off)
        off += 4
        weak = []
        for _ in range(nw):
            weak.append(VertexRef(*_REF.unpack_from(data, off)))
            off += _REF.size
        proposer, seq, ntx = _BLOCK.unpack_from(data, off)
        off += _BLOCK.size
        txs = []
        for _ in range(ntx):
            (ln,) = _U32.unpack_from(data, off)
            off += 4
            if off + ln > len(data):
                raise DecodeError("truncated transaction")
            txs.append(bytes(data[off:off + ln]))
            off += ln
    except struct.error as e:
        raise DecodeError(str(e)) from None
    if off != len(data):
        raise DecodeError("trailing bytes")
    return Vertex(rnd, src, Block(proposer, seq, tuple(txs)),
                  frozenset(strong), frozenset(weak))


def wave_round(w: int, k: int) -> int:
    """k-th round (1..4) of wave w."""
    return 4 * (w - 1) + k


def sorted_refs(refs: Iterable[VertexRef]) -> list[VertexRef]:
    return sorted(refs, key=lambda r: (r.round, r.source))
