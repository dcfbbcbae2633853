"""Purpose-built traces that each violate exactly one checked property.

They are the checker's own negative tests: :func:`violating_traces` maps
every check name to a trace on which that check must fail.  Log-level
violations are made by mutating a short real run; DAG-level ones are small
hand-built DAGs held by process 0.
"""
from __future__ import annotations

from .core import wave_round
from .simnet import SimConfig, Trace, run

_HEADER = {"config": {"n": 4, "f": 1, "seed": 0, "drain": False}, "correct": [0, 1, 2, 3],
           "ticksPerUnit": 1000}


def _base_run() -> Trace:
    cfg = SimConfig.from_dict({"n": 4, "f": 1, "seed": 0, "model": "RandomArrival",
                               "horizonRounds": 12})
    return run(cfg).trace


def _copy(trace: Trace) -> Trace:
    return Trace(dict(trace.header), list(trace.records))


def _deliveries(trace: Trace, p: int) -> list[int]:
    return [i for i, r in enumerate(trace.records) if r[0] == "a_deliver" and r[2] == p]


class _DagTrace:
    """Builds the records of a DAG as seen (r_delivered and added) by process 0."""

    def __init__(self):
        self.records: list[tuple] = []
        self.pid = 0
        self.t = 0

    def vertex(self, s: int, r: int, strong, weak=()):
        self.t += 1
        strong = tuple(sorted((x, y) for x, y in strong))
        weak = tuple(sorted((x, y) for x, y in weak))
        self.records.append(("payload", self.t, self.pid, s, r, strong, weak, s, r, 1))
        self.records.append(("r_deliver", self.t, 0, s, r, self.pid))
        self.records.append(("vertex_added", self.t, 0, s, r))
        self.pid += 1

    def add(self, *rec):
        self.t += 1
        self.records.append((rec[0], self.t, *rec[1:]))

    def trace(self) -> Trace:
        return Trace(dict(_HEADER), self.records + [("end", self.t + 1, {})])


def total_order() -> Trace:
    tr = _copy(_base_run())
    i, j = _deliveries(tr, 0)[:2]
    a, b = tr.records[i], tr.records[j]
    tr.records[i] = a[:4] + b[4:]
    tr.records[j] = b[:4] + a[4:]
    return tr


def integrity() -> Trace:
    tr = _copy(_base_run())
    idx = _deliveries(tr, 0)
    last = tr.records[idx[-1]]
    dup = last[:3] + (last[3] + 1,) + last[4:]
    tr.records.insert(idx[-1] + 1, dup)
    return tr


def agreement() -> Trace:
    tr = _copy(_base_run())
    del tr.records[_deliveries(tr, 1)[-1]]
    return tr


def validity() -> Trace:
    tr = _copy(_base_run())
    end = len(tr.records) - 1
    tr.records.insert(end, ("a_bcast", tr.records[end][1], 0, 999, 1, 1))
    return tr


def chain_quality() -> Trace:
    # Forged corruption of two processes leaves too few correct sources.
    tr = _copy(_base_run())
    tr.records.insert(0, ("corrupt", 0, 1))
    tr.records.insert(0, ("corrupt", 0, 2))
    return tr


def equivocation() -> Trace:
    tr = _copy(_base_run())
    rd = next(r for r in tr.records if r[0] == "r_deliver" and r[2] == 1)
    _, t, p, s, r, pid = rd
    fresh = 1 + max(x[2] for x in tr.records if x[0] == "payload")
    tr.records.insert(0, ("payload", 0, fresh, s, r, (), (), s, 0, 0))
    tr.records.append(("r_deliver", t, p, s, r, fresh))
    return tr


def leader_reachability() -> Trace:
    """Leader (3,1) of wave 1 is committed, but wave 2's leader never reaches it."""
    d = _DagTrace()
    genesis = [(s, 0) for s in range(3)]
    for s in range(4):
        d.vertex(s, 1, genesis)
    for r in range(2, 5):
        for s in range(3):
            d.vertex(s, r, [(x, r - 1) for x in range(3)])
    d.vertex(0, 5, [(x, 4) for x in range(3)])
    d.add("leader", 1, 3)
    d.add("leader", 2, 0)
    d.add("commit", 0, 1, 3, 1, 1, True)
    return d.trace()


def common_core() -> Trace:
    """Three disjoint chains: no two round-4 vertices share a round-1 ancestor."""
    d = _DagTrace()
    for s in range(3):
        d.vertex(s, 1, [(s, 0)])
        for r in range(2, 5):
            d.vertex(s, r, [(s, r - 1)])
    d.add("round_advance", 0, wave_round(1, 4), 0b0111)
    d.add("wave_ready", 0, 1)
    return d.trace()


def commit_order() -> Trace:
    d = _DagTrace()
    d.add("commit", 0, 2, 0, 5, 2, True)
    d.add("commit", 0, 1, 0, 1, 2, False)
    return d.trace()


def quorum_intersection() -> Trace:
    """Process 0 sees 2f+1 round-4 vertices reach (3,1); process 1 completes
    round 4 holding only one of them."""
    d = _DagTrace()
    genesis = [(s, 0) for s in range(3)]
    for s in range(4):
        d.vertex(s, 1, genesis)
    for s in range(3):
        d.vertex(s, 2, [(x, 1) for x in range(4)])
    d.vertex(3, 2, [(x, 1) for x in range(3)])
    for s in range(3):
        d.vertex(s, 3, [(x, 2) for x in range(3)])
    d.vertex(3, 3, [(3, 2)])
    for s in range(3):
        d.vertex(s, 4, [(x, 3) for x in range(3)])
    d.vertex(3, 4, [(3, 3)])
    d.add("round_advance", 0, 4, 0b0111)
    d.add("round_advance", 1, 4, 0b1001)
    return d.trace()


BUILDERS = {
    "total_order": total_order,
    "integrity": integrity,
    "agreement": agreement,
    "validity": validity,
    "chain_quality": chain_quality,
    "equivocation": equivocation,
    "leader_reachability": leader_reachability,
    "common_core": common_core,
    "commit_order": commit_order,
    "quorum_intersection": quorum_intersection,
}


def violating_traces() -> dict[str, Trace]:
    """One trace per check name, each violating that check."""
    return {name: build() for name, build in BUILDERS.items()}
