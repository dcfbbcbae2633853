import itertools
import random

import pytest

from dagbab import _kernel
from dagbab.rbc import (BrachaNode, DoubleBroadcast, RbcKind, RbcMessage,
                        decode_message, encode_message, wire_size)

INIT, ECHO, READY = RbcKind.INIT, RbcKind.ECHO, RbcKind.READY


def msg(kind, payload, frm, sender=0, rnd=1):
    return RbcMessage(kind, payload, sender, rnd, frm)


def test_echo_once_on_init():
    node = BrachaNode(1, 4, 1)
    out, d = node.on_rbc_message(msg(INIT, "v", 0))
    assert [m.kind for m in out] == [ECHO] and d is None
    out, _ = node.on_rbc_message(msg(INIT, "v", 0))
    assert out == [] and node.misbehavior == 0


def test_init_from_wrong_sender_discarded():
    node = BrachaNode(1, 4, 1)
    out, _ = node.on_rbc_message(msg(INIT, "v", 2, sender=0))
    assert out == [] and node.misbehavior == 1


def test_ready_after_quorum_of_echoes():
    node = BrachaNode(1, 4, 1)
    for frm in (0, 2):
        out, _ = node.on_rbc_message(msg(ECHO, "v", frm))
        assert out == []
    out, _ = node.on_rbc_message(msg(ECHO, "v", 3))
    assert [m.kind for m in out] == [READY]


def test_ready_amplification_on_f_plus_one_readies():
    node = BrachaNode(1, 4, 1)
    out, _ = node.on_rbc_message(msg(READY, "v", 0))
    assert out == []
    out, _ = node.on_rbc_message(msg(READY, "v", 2))
    assert [m.kind for m in out] == [READY]


def test_deliver_once_on_quorum_of_readies():
    node = BrachaNode(1, 4, 1)
    got = []
    for frm in (0, 2, 3, 1):
        _, d = node.on_rbc_message(msg(READY, "v", frm))
        if d is not None:
            got.append(d)
    assert len(got) == 1 and got[0].payload == "v" and got[0].sender == 0


def test_conflicting_message_counted_duplicate_ignored():
    node = BrachaNode(1, 4, 1)
    node.on_rbc_message(msg(ECHO, "v", 2))
    node.on_rbc_message(msg(ECHO, "v", 2))
    assert node.misbehavior == 0
    node.on_rbc_message(msg(ECHO, "w", 2))
    assert node.misbehavior == 1


def test_double_broadcast_rejected():
    node = BrachaNode(0, 4, 1)
    node.r_bcast("v", 3)
    with pytest.raises(DoubleBroadcast):
        node.r_bcast("w", 3)


def test_wire_format_roundtrip():
    m = RbcMessage(READY, b"payload", 3, 2**40, 1)
    data = encode_message(m)
    assert len(data) == wire_size(len(b"payload"))
    assert data[0] == 3
    assert decode_message(data, 1) == m
    with pytest.raises(ValueError):
        decode_message(data[:-1], 1)


def drive(n, f, byz, injected, order, seed=0):
    """Run correct Bracha nodes to quiescence.  ``injected`` holds the
    Byzantine process's messages; ``order`` picks FIFO, LIFO or random."""
    nodes = {p: BrachaNode(p, n, f) for p in range(n) if p != byz}
    queue = list(injected)
    rng = random.Random(seed)
    delivered = {}
    while queue:
        if order == "fifo":
            to, m = queue.pop(0)
        elif order == "lifo":
            to, m = queue.pop()
        else:
            to, m = queue.pop(rng.randrange(len(queue)))
        out, d = nodes[to].on_rbc_message(m)
        if d is not None:
            assert to not in delivered
            delivered[to] = d.payload
        for o in out:
            for q in nodes:
                queue.append((q, o))
    return delivered


def test_exhaustive_equivocation_n4():
    """Byzantine process 3 sends INIT/ECHO/READY of v, v' or nothing to each
    correct process: no two correct processes deliver different payloads."""
    n, f, byz = 4, 1, 3
    correct = [0, 1, 2]
    choices = [None, "v", "v'"]
    deliveries = 0
    for init, echo, ready in itertools.product(itertools.product(choices, repeat=3), repeat=3):
        injected = []
        for kind, pick in ((INIT, init), (ECHO, echo), (READY, ready)):
            for p, payload in zip(correct, pick):
                if payload is not None:
                    injected.append((p, RbcMessage(kind, payload, byz, 5, byz)))
        for order in ("fifo", "lifo", "random"):
            got = drive(n, f, byz, injected, order, seed=len(injected))
            assert len(set(got.values())) <= 1, (init, echo, ready, order, got)
            deliveries += len(got)
    assert deliveries > 0


def _drain(net):
    out = []
    while True:
        ev = net.next_event()
        if ev is None:
            return out
        if ev[0] == _kernel.EV_DELIVER:
            out.append(ev[1:])


@pytest.fixture(params=["python", "compiled"])
def network_cls(request):
    if request.param == "python":
        return _kernel.PyRbcNetwork
    cls = _kernel.compiled_network()
    if cls is None:
        pytest.skip("compiled kernel not built")
    return cls


def test_fault_free_broadcast_delivers_everywhere(network_cls):
    net = network_cls(4, 1, 7, 1000, 2000)
    pid = net.register_payload(b"v")
    net.r_bcast(0, 1, pid)
    got = _drain(net)
    assert sorted(got) == [(p, 0, 1, pid) for p in range(4)]
    # self-delivery uses the same three phases: n INIT + n^2 ECHO + n^2 READY
    assert sum(net.msgs_sent) == 4 + 16 + 16


def test_silent_processes_do_not_block_delivery(network_cls):
    net = network_cls(7, 2, 1, 1000, 2000)
    net.set_mode(5, _kernel.MODE_SILENT)
    net.set_mode(6, _kernel.MODE_SILENT)
    pid = net.register_payload(b"v")
    net.r_bcast(0, 1, pid)
    got = _drain(net)
    assert sorted(p for p, *_ in got) == [0, 1, 2, 3, 4]


def test_kernel_double_broadcast(network_cls):
    net = network_cls(4, 1, 1, 1000, 2000)
    pid = net.register_payload(b"v")
    net.r_bcast(0, 1, pid)
    with pytest.raises(DoubleBroadcast):
        net.r_bcast(0, 1, pid)


def test_kernel_equivocating_sender(network_cls):
    net = network_cls(4, 1, 3, 1000, 2000)
    a = net.register_payload(b"v")
    b = net.register_payload(b"v'")
    for kind in (INIT, ECHO, READY):
        for d in range(4):
            net.send(3, d, int(kind), 3, 5, a if d < 2 else b)
    got = _drain(net)
    payloads = {pid for p, s, r, pid in got if p != 3}
    assert len(payloads) <= 1
