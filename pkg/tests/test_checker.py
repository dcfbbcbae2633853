from fractions import Fraction
from math import comb

import pytest

from conftest import FixedCoin
from dagbab.checker import (ALL_CHECKS, TraceView, check_agreement_integrity_validity,
                            check_all, check_chain_quality, check_wave_invariants, check_total_order,
                            copy_inclusion_monte_carlo, copy_inclusion_probability,
                            measure_fairness, measure_performance)
from dagbab.orderer import Orderer
from dagbab.simnet import SimConfig, Trace, run
from dagbab.synthetic import violating_traces
from test_orderer import two_wave_dag


def sim(**kw):
    d = {"n": 4, "f": 1, "seed": 2, "model": "RandomArrival", "horizonRounds": 16}
    d.update(kw)
    return run(SimConfig.from_dict(d))


@pytest.mark.parametrize("name", ALL_CHECKS)
def test_every_check_fails_on_its_violating_trace(name):
    tr = violating_traces()[name]
    tr = Trace.from_jsonl(tr.to_jsonl())
    rep = check_all(tr, (name,))
    assert not rep[name].passed
    assert rep[name].counterexample is not None and "seed" in rep[name].counterexample


def test_clean_run_passes_everything():
    rep = check_all(sim().trace)
    assert rep.passed and set(rep.results) == set(ALL_CHECKS)


def test_total_order_examples():
    assert check_total_order({0: ["a", "b"], 1: ["a", "b"]}).passed
    assert check_total_order({0: ["a", "b", "c"], 1: ["a"]}).passed
    rep = check_total_order({0: ["a", "b"], 1: ["a", "c"]}, seed=9)
    assert not rep.passed
    assert rep["total_order"].counterexample["index"] == 1
    assert rep["total_order"].counterexample["seed"] == 9


def test_integrity_catches_duplicate_delivery():
    entry = (1, 0, 1, 1)
    rep = check_agreement_integrity_validity({0: [entry, entry], 1: [entry]}, [(0, 1)])
    assert not rep["integrity"].passed


def test_agreement_and_validity_skipped_without_drain():
    rep = check_agreement_integrity_validity({0: [], 1: [(1, 0, 1, 1)]}, [(0, 1)], drained=False)
    assert rep.passed and "skipped" in rep["validity"].note


def test_validity_with_silent_byzantine():
    res = sim(behaviors=[{"kind": "Silent", "process": 2}])
    rep = check_all(res.trace, ("validity", "agreement"))
    assert rep.passed and rep["validity"].checked > 0


def test_chain_quality_prefixes():
    good = [(1, s, 1, 1) for s in (0, 1, 3)]
    assert check_chain_quality(good, {0, 1, 2}, f=1).passed
    bad = [(1, 3, 1, 1), (1, 2, 1, 1), (1, 0, 1, 1)]
    rep = check_chain_quality(bad, {0, 1}, f=1)
    assert not rep.passed and rep["chain_quality"].counterexample["prefix"] == 3


def two_wave_trace():
    """Trace of the hand-built DAG of the orderer test plus its commits."""
    dag = two_wave_dag()
    o = Orderer(0, 4, 1, dag, FixedCoin({1: 3, 2: 1, 3: 2}))
    recs = []
    pid = 0
    for v in dag:
        if v.round == 0:
            continue
        recs.append(("payload", 0, pid, v.source, v.round, tuple(sorted(v.strong_edges)),
                     tuple(sorted(v.weak_edges)), v.source, v.round, 0))
        recs.append(("r_deliver", 0, 0, v.source, v.round, pid))
        recs.append(("vertex_added", 0, 0, v.source, v.round))
        pid += 1
    for w, leader in ((1, 3), (2, 1), (3, 2)):
        recs.append(("leader", 0, w, leader))
    for r in (4, 8, 12):
        recs.append(("round_advance", 0, 0, r, 0b1111))
    for w in (1, 2, 3):
        recs.append(("wave_ready", 0, 0, w))
        before = len(o.commits)
        o.on_wave_ready(w)
        for c in o.commits[before:]:
            recs.append(("commit", 0, 0, c.wave, c.leader.source, c.leader.round, c.decided_in, c.direct))
    header = {"config": {"n": 4, "f": 1, "seed": 0, "drain": False}, "correct": [0]}
    return Trace(header, recs)


def test_wave_invariants_hold_on_two_wave_dag():
    tr = two_wave_trace()
    commits = [r[3:8] for r in tr.of("commit")]
    assert (2, 1, 5, 3, False) in commits
    rep = check_wave_invariants(tr)
    assert rep.passed and rep["leader_reachability"].checked > 0 and rep["common_core"].checked == 3


def test_common_core_every_wave_fault_free():
    res = sim(horizonRounds=40)
    rep = check_wave_invariants(res.trace)
    assert rep["common_core"].passed and rep["common_core"].checked >= 9 * len(res.correct)


def test_performance_metrics_fault_free():
    perf = measure_performance(sim(horizonRounds=120, seed=8).trace)
    assert perf["commitProbPerWave"] >= 0.75 - 0.1
    assert perf["wavesPerCommit"] <= 1.5 + 0.15
    assert perf["latencyTimeUnits"] > 0 and perf["orderedTxs"] > 0


def test_batching_divides_messages_per_tx():
    a = measure_performance(sim(batchSize=1).trace)
    b = measure_performance(sim(batchSize=10).trace)
    assert a["orderedTxs"] * 10 == b["orderedTxs"]
    assert b["msgsPerOrderedTx"] == pytest.approx(a["msgsPerOrderedTx"] / 10, rel=1e-12)


def test_fairness_fault_free():
    fm = measure_fairness(sim(horizonRounds=60).trace)
    assert sum(fm.ratios.values()) <= 1 + 1e-12
    assert all(abs(r - 0.25) <= 0.05 for r in fm.ratios.values())
    assert fm.eventually_fair(0.05)
    assert fm.window == 16 and fm.windows > 0


def test_copy_inclusion_closed_form():
    assert copy_inclusion_probability(100, 33, 4, exact=True) == 1 - Fraction(comb(33, 4), comb(100, 4))
    assert copy_inclusion_probability(10, 3, 4) == 1.0
    assert copy_inclusion_probability(10, 3, 0) == 0.0
    with pytest.raises(ValueError):
        copy_inclusion_probability(4, 5, 1)


def test_copy_inclusion_monte_carlo_agrees():
    exact = copy_inclusion_probability(100, 33, 4)
    assert abs(copy_inclusion_monte_carlo(100, 33, 4, trials=100_000, seed=1) - exact) <= 0.005


def test_trace_view_reads_jsonl():
    tr = sim().trace
    view = TraceView(Trace.from_jsonl(tr.to_jsonl()))
    assert view.n == 4 and view.correct == [0, 1, 2, 3]
    assert view.logs == TraceView(tr).logs
