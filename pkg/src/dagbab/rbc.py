"""Bracha reliable broadcast as a pure per-process state machine.

A :class:`BrachaNode` holds the state of every broadcast instance seen by one
process.  Instances are keyed by their tag ``(sender, round)``.  Thresholds:
ECHO once on INIT; READY on 2f+1 matching ECHOs or f+1 matching READYs;
deliver on 2f+1 matching READYs.  Payloads are compared by equality, so the
simulator can pass interned payload ids instead of bytes.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Hashable, NamedTuple

# A tag may collect at most this many distinct payloads; further ones are
# discarded as misbehavior.  Shared with the compiled kernel.
MAX_PAYLOADS_PER_TAG = 4

HEADER_BYTES = 17


class RbcKind(IntEnum):
    INIT = 1
    ECHO = 2
    READY = 3


class RbcError(RuntimeError):
    pass


class DoubleBroadcast(RbcError):
    pass


@dataclass(frozen=True)
class RbcMessage:
    kind: RbcKind
    payload: Hashable
    sender: int  # tag sender
    round: int  # tag round
    frm: int = -1  # authenticated by transport, not on the wire

    @property
    def tag(self) -> tuple[int, int]:
        return (self.sender, self.round)


class RDeliver(NamedTuple):
    payload: Hashable
    round: int
    sender: int


_WIRE = struct.Struct("<BIQI")


def encode_message(msg: RbcMessage) -> bytes:
    """1-byte kind, u32 tag sender, u64 tag round, u32 payload length, payload."""
    if not isinstance(msg.payload, (bytes, bytearray)):
        raise TypeError("only byte payloads have a wire form")
    return _WIRE.pack(int(msg.kind), msg.sender, msg.round, len(msg.payload)) + bytes(msg.payload)


def decode_message(data: bytes, frm: int) -> RbcMessage:
    if len(data) < _WIRE.size:
        raise ValueError("short RBC message")
    kind, sender, rnd, ln = _WIRE.unpack_from(data, 0)
    if len(data) != _WIRE.size + ln:
        raise ValueError("RBC payload length mismatch")
    return RbcMessage(RbcKind(kind), bytes(data[_WIRE.size:]), sender, rnd, frm)


def wire_size(payload_len: int) -> int:
    return HEADER_BYTES + payload_len


class InstanceState:
    """State of one broadcast instance at one process."""

    __slots__ = ("init_payload", "payloads", "echoes", "readies",
                 "echo_from", "ready_from", "sent_echo", "sent_ready", "delivered")

    def __init__(self):
        self.init_payload = None
        self.payloads: list = []
        self.echoes: list[int] = []  # sender bitmask per payload slot
        self.readies: list[int] = []
        self.echo_from = 0
        self.ready_from = 0
        self.sent_echo = False
        self.sent_ready = False
        self.delivered = False

    def slot(self, payload) -> int:
        try:
            return self.payloads.index(payload)
        except ValueError:
            if len(self.payloads) >= MAX_PAYLOADS_PER_TAG:
                return -1
            self.payloads.append(payload)
            self.echoes.append(0)
            self.readies.append(0)
            return len(self.payloads) - 1


class BrachaNode:
    """r_bcast / r_deliver endpoint of process ``me``."""

    def __init__(self, me: int, n: int, f: int):
        self.me = me
        self.n = n
        self.f = f
        self.instances: dict[tuple[int, int], InstanceState] = {}
        self.broadcast_rounds: set[int] = set()
        self.misbehavior = 0

    def state(self, sender: int, rnd: int) -> InstanceState:
        key = (sender, rnd)
        st = self.instances.get(key)
        if st is None:
            st = self.instances[key] = InstanceState()
        return st

    def _repeat(self, masks, payloads, payload, bit):
        # an exact duplicate is harmless; a different payload is equivocation
        if payload in payloads and masks[payloads.index(payload)] & bit:
            return
        self.misbehavior += 1

    def r_bcast(self, payload, rnd: int) -> list[RbcMessage]:
        """Broadcast ``payload`` for tag (me, rnd); returns the INIT to send to all."""
        if rnd in self.broadcast_rounds:
            raise DoubleBroadcast(f"process {self.me} already broadcast round {rnd}")
        self.broadcast_rounds.add(rnd)
        return [RbcMessage(RbcKind.INIT, payload, self.me, rnd, self.me)]

    def on_rbc_message(self, msg: RbcMessage) -> tuple[list[RbcMessage], RDeliver | None]:
        """Handle one authenticated message.

        Returns messages to broadcast to all processes and an optional
        delivery.  Conflicting messages from one peer are discarded and
        counted in ``misbehavior``.
        """
        f = self.f
        st = self.state(msg.sender, msg.round)
        out: list[RbcMessage] = []
        bit = 1 << msg.frm
        kind = msg.kind
        if kind == RbcKind.INIT:
            if msg.frm != msg.sender:
                self.misbehavior += 1
                return out, None
            if st.init_payload is not None:
                if st.init_payload != msg.payload:
                    self.misbehavior += 1
                return out, None
            st.init_payload = msg.payload
            if not st.sent_echo:
                st.sent_echo = True
                out.append(RbcMessage(RbcKind.ECHO, msg.payload, msg.sender, msg.round, self.me))
            return out, None

        if kind == RbcKind.ECHO:
            if st.echo_from & bit:
                self._repeat(st.echoes, st.payloads, msg.payload, bit)
                return out, None
            k = st.slot(msg.payload)
            if k < 0:
                self.misbehavior += 1
                return out, None
            st.echo_from |= bit
            st.echoes[k] |= bit
            if not st.sent_ready and st.echoes[k].bit_count() >= 2 * f + 1:
                st.sent_ready = True
                out.append(RbcMessage(RbcKind.READY, msg.payload, msg.sender, msg.round, self.me))
            return out, None

        if kind == RbcKind.READY:
            if st.ready_from & bit:
                self._repeat(st.readies, st.payloads, msg.payload, bit)
                return out, None
            k = st.slot(msg.payload)
            if k < 0:
                self.misbehavior += 1
                return out, None
            st.ready_from |= bit
            st.readies[k] |= bit
            cnt = st.readies[k].bit_count()
            if not st.sent_ready and cnt >= f + 1:
                st.sent_ready = True
                out.append(RbcMessage(RbcKind.READY, msg.payload, msg.sender, msg.round, self.me))
            if not st.delivered and cnt >= 2 * f + 1:
                st.delivered = True
                return out, RDeliver(msg.payload, msg.round, msg.sender)
            return out, None

        self.misbehavior += 1
        return out, None
