import pytest

from conftest import FixedCoin, vx
from dagbab.coin import CoinOracle, coin_value
from dagbab.core import Block, DagStore, VertexRef, wave_round
from dagbab.dag_builder import DagBuilder
from dagbab.orderer import Delivered, DeliveryLog, Orderer


def build(rounds, n=4, f=1, edges=None, absent=()):
    """DAG with every source in every round, each vertex strongly linked to
    the whole previous round unless ``edges[(s, r)]`` says otherwise."""
    edges = edges or {}
    dag = DagStore(n, f)
    for r in range(1, rounds + 1):
        for s in range(n):
            if (s, r) in absent:
                continue
            prev = edges.get((s, r))
            if prev is None:
                prev = [(x, r - 1) for x in sorted(dag.rounds[r - 1])]
            dag.insert_vertex(vx(s, r, prev))
    return dag


def two_wave_dag():
    # Wave 2's leader v2 = (1,5) is strongly reached by only one round-8
    # vertex; wave 3's leader v3 = (2,9) is reached by all of round 12 and
    # strongly reaches v2 through (0,8) -> (0,7) -> (1,6).
    edges = {}
    others = [(0, 5), (2, 5), (3, 5)]
    for s in (0, 2, 3):
        edges[(s, 6)] = others
    edges[(1, 6)] = [(1, 5), (0, 5), (2, 5)]
    edges[(0, 7)] = [(1, 6), (2, 6), (3, 6)]
    for s in (1, 2, 3):
        edges[(s, 7)] = [(0, 6), (2, 6), (3, 6)]
    edges[(0, 8)] = [(0, 7), (1, 7), (2, 7)]
    for s in (1, 2, 3):
        edges[(s, 8)] = [(1, 7), (2, 7), (3, 7)]
    return build(12, edges=edges)


def test_commit_rule_and_back_chain():
    dag = two_wave_dag()
    coin = FixedCoin({1: 3, 2: 1, 3: 2})
    o = Orderer(0, 4, 1, dag, coin)
    first = o.on_wave_ready(1)
    assert first and o.decided_wave == 1
    assert o.on_wave_ready(2) == []
    assert o.outcomes[-1].support < 3 and not o.outcomes[-1].committed
    before = len(o.log)
    out = o.on_wave_ready(3)
    assert o.outcomes[-1].support >= 3
    assert [(c.wave, c.leader.ref, c.direct) for c in o.commits[-2:]] == [
        (2, VertexRef(1, 5), False), (3, VertexRef(2, 9), True)]
    assert o.decided_wave == 3
    keys = [(d.round, d.source) for d in out]
    assert keys.index((5, 1)) < keys.index((9, 2))
    # v2's history is delivered before the rest of v3's history
    v2_hist = {u.ref for u in dag.causal_history(VertexRef(1, 5))}
    split = keys.index((5, 1)) + 1
    assert all(VertexRef(s, r) in v2_hist for r, s in keys[:split])
    assert len(o.log) == before + len(out)


def test_commit_without_path_to_earlier_leaders():
    # leaders of waves 1 and 2 (process 3) are missing locally
    dag = build(12, absent={(3, 1), (3, 5)})
    o = Orderer(0, 4, 1, dag, FixedCoin({1: 3, 2: 3, 3: 0}))
    assert o.on_wave_ready(1) == [] and o.on_wave_ready(2) == []
    assert o.get_wave_vertex_leader(1) is None
    o.on_wave_ready(3)
    assert [(c.wave, c.leader.ref) for c in o.commits] == [(3, VertexRef(0, 9))]
    assert o.decided_wave == 3 and o.leaders_stack == []


def test_first_commit_delivers_history_without_genesis():
    dag = build(4)
    o = Orderer(0, 4, 1, dag, FixedCoin({1: 2}))
    out = o.on_wave_ready(1)
    hist = [u for u in dag.causal_history(VertexRef(2, 1)) if u.round > 0]
    assert [(d.round, d.source) for d in out] == [(u.round, u.source) for u in hist]


def test_overlapping_histories_deliver_each_vertex_once():
    dag = build(16)
    o = Orderer(0, 4, 1, dag, FixedCoin({1: 0, 2: 1, 3: 2, 4: 3}))
    for w in range(1, 5):
        o.on_wave_ready(w)
    keys = [(d.round, d.source) for d in o.log]
    assert len(keys) == len(set(keys))
    assert len(o.commits) == 4


def test_leader_matches_coin():
    dag = build(4)
    coin = CoinOracle(4, 1, seed=77)
    o = Orderer(0, 4, 1, dag, coin)
    with pytest.raises(RuntimeError):
        o.get_wave_vertex_leader(1)
    coin.choose_leader(1, 1)
    v = o.get_wave_vertex_leader(1)
    assert v.source == coin_value(77, 1, 4) and v.round == wave_round(1, 1)


def test_a_bcast_enqueues_in_sequence():
    dag = DagStore(4, 1)
    b = DagBuilder(0, 4, 1, dag)
    o = Orderer(0, 4, 1, dag, FixedCoin({}), b)
    o.a_bcast(Block(0, 1, (b"tx",)), 1)
    assert len(b.blocks_to_propose) == 1
    with pytest.raises(AssertionError):
        o.a_bcast(Block(0, 3, ()), 3)


def test_delivery_log_rejects_repeats():
    log = DeliveryLog()
    log.append(Delivered(Block(0, 1), 1, 0, 0))
    with pytest.raises(AssertionError):
        log.append(Delivered(Block(0, 1), 1, 0, 5))
