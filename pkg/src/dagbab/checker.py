"""Property checks and metrics over run traces.

Every check is a pure function of trace data (or of delivery logs) and
returns a :class:`PropertyReport`.  Failures carry the first counterexample
found, tagged with the run seed so it can be replayed.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

from .core import wave_round

SAFETY_CHECKS = ("total_order", "integrity", "chain_quality", "leader_reachability", "common_core",
                 "commit_order", "quorum_intersection", "equivocation")
LIVENESS_CHECKS = ("agreement", "validity")
ALL_CHECKS = SAFETY_CHECKS + LIVENESS_CHECKS


@dataclass
class CheckResult:
    name: str
    passed: bool
    checked: int = 0
    counterexample: dict | None = None
    note: str = ""

    def to_dict(self) -> dict:
        d = {"passed": self.passed, "checked": self.checked}
        if self.counterexample is not None:
            d["counterexample"] = self.counterexample
        if self.note:
            d["note"] = self.note
        return d


@dataclass
class PropertyReport:
    results: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    def __bool__(self) -> bool:
        return self.passed

    def __getitem__(self, name: str) -> CheckResult:
        return self.results[name]

    def __contains__(self, name: str) -> bool:
        return name in self.results

    def add(self, res: CheckResult) -> "PropertyReport":
        self.results[res.name] = res
        return self

    def merge(self, other: "PropertyReport") -> "PropertyReport":
        self.results.update(other.results)
        return self

    def failures(self) -> list[CheckResult]:
        return [r for r in self.results.values() if not r.passed]

    def to_dict(self) -> dict:
        return {k: v.to_dict() for k, v in self.results.items()}


def _single(name, passed, checked, cx=None, note="") -> PropertyReport:
    return PropertyReport({name: CheckResult(name, passed, checked, cx, note)})


# -- trace views ------------------------------------------------------------------


def _entry_key(e):
    """Comparable identity of a delivery-log entry."""
    block = getattr(e, "block", None)
    if block is not None:
        return (e.round, e.source, block.seq, len(block.txs))
    return e


class TraceView:
    """Indexes the records of one trace for the checks below."""

    def __init__(self, trace):
        self.trace = trace
        h = trace.header
        cfg = h.get("config", {})
        self.n = cfg.get("n")
        self.f = cfg.get("f")
        self.seed = cfg.get("seed")
        self.drain = cfg.get("drain", False)
        self.correct_initial = list(h.get("correct", []))
        self.corrupted: dict[int, int] = {}
        self.payloads: dict[int, tuple] = {}
        self.rdeliver: dict[tuple[int, int, int], list[int]] = {}
        self.added: dict[tuple[int, int], list[int]] = {}
        self.round_adv: dict[tuple[int, int], int] = {}
        self.wave_ready: list[tuple] = []
        self.leaders: dict[int, int] = {}
        self.commits: list[tuple] = []
        self.evals: list[tuple] = []
        self.bcasts: list[tuple] = []
        self.logs: dict[int, list] = {p: [] for p in self.correct_initial}
        self.log_times: dict[int, list] = {p: [] for p in self.correct_initial}
        self.summary: dict = {}
        for rec in trace.records:
            kind = rec[0]
            if kind == "r_deliver":
                _, t, p, s, r, pid = rec
                self.rdeliver.setdefault((p, s, r), []).append(pid)
            elif kind == "vertex_added":
                _, t, p, s, r = rec
                self.added.setdefault((s, r), []).append(p)
            elif kind == "a_deliver":
                _, t, p, idx, r, s, seq, ntx = rec
                self.logs.setdefault(p, []).append((r, s, seq, ntx))
                self.log_times.setdefault(p, []).append(t)
            elif kind == "payload":
                self.payloads[rec[2]] = rec[3:]
            elif kind == "round_advance":
                _, t, p, r, members = rec
                self.round_adv[(p, r)] = members
            elif kind == "wave_ready":
                self.wave_ready.append(rec)
            elif kind == "leader":
                self.leaders[rec[2]] = rec[3]
            elif kind == "commit":
                self.commits.append(rec)
            elif kind == "wave_eval":
                self.evals.append(rec)
            elif kind == "a_bcast":
                self.bcasts.append(rec)
            elif kind == "corrupt":
                self.corrupted[rec[2]] = rec[1]
            elif kind == "end":
                self.summary = rec[2]
        self.correct = [p for p in self.correct_initial if p not in self.corrupted]
        self._dag = None

    def cx(self, **kw) -> dict:
        d = {"seed": self.seed}
        d.update(kw)
        return d

    # Global DAG of vertices added at correct processes.  Content is taken
    # from the first payload any correct process delivered for the slot;
    # the equivocation check separately verifies that slot content is unique.
    def dag(self):
        if self._dag is not None:
            return self._dag
        n = self.n
        content = {}
        for (p, s, r), pids in self.rdeliver.items():
            if (s, r) not in content and pids:
                content[(s, r)] = pids[0]
        sanc: dict[tuple[int, int], int] = {}
        anc: dict[tuple[int, int], int] = {}
        g = 2 * self.f + 1
        for s in range(g):
            sanc[(s, 0)] = anc[(s, 0)] = 1 << s
        for key in sorted(self.added, key=lambda k: (k[1], k[0])):
            s, r = key
            pid = content.get(key)
            if pid is None:
                continue
            strong, weak = self.payloads[pid][2], self.payloads[pid][3]
            a = sa = 1 << (r * n + s)
            for e in strong:
                e = tuple(e)
                sa |= sanc.get(e, 0)
                a |= anc.get(e, 0)
            for e in weak:
                a |= anc.get(tuple(e), 0)
            sanc[key] = sa
            anc[key] = a
        self._dag = (sanc, anc)
        return self._dag

    def bit(self, s: int, r: int) -> int:
        return 1 << (r * self.n + s)


def logs_from_trace(trace) -> dict[int, list]:
    return TraceView(trace).logs


# -- BAB properties ---------------------------------------------------------------------


def check_total_order(logs: dict, seed=None) -> PropertyReport:
    """Every pair of logs must be prefix-related."""
    keys = {p: [_entry_key(e) for e in log] for p, log in logs.items()}
    procs = sorted(keys)
    pairs = 0
    for i, p in enumerate(procs):
        for q in procs[i + 1:]:
            pairs += 1
            a, b = keys[p], keys[q]
            for idx in range(min(len(a), len(b))):
                if a[idx] != b[idx]:
                    return _single("total_order", False, pairs, {
                        "seed": seed, "index": idx, "processes": [p, q],
                        "entries": [list(a[idx]) if isinstance(a[idx], tuple) else a[idx],
                                    list(b[idx]) if isinstance(b[idx], tuple) else b[idx]]})
    return _single("total_order", True, pairs)


def check_agreement_integrity_validity(logs: dict, broadcast_log, correct=None, seed=None,
                                       drained: bool = True) -> PropertyReport:
    """Integrity always; agreement and validity on drained runs at quiescence.

    ``broadcast_log`` holds ``(proposer, seq, ...)`` tuples of client blocks;
    ``correct`` lists the processes that stayed correct (default: all logs).
    """
    report = PropertyReport()
    keys = {p: [_entry_key(e) for e in log] for p, log in logs.items()}
    correct = sorted(keys) if correct is None else [p for p in correct if p in keys]
    # integrity
    bad = None
    for p in sorted(keys):
        seen_slot, seen_block = set(), set()
        for idx, k in enumerate(keys[p]):
            slot, blk = (k[0], k[1]), (k[1], k[2])
            if slot in seen_slot or blk in seen_block:
                bad = {"seed": seed, "process": p, "index": idx, "entry": list(k)}
                break
            seen_slot.add(slot)
            seen_block.add(blk)
        if bad:
            break
    report.add(CheckResult("integrity", bad is None, sum(len(v) for v in keys.values()), bad))
    if not drained:
        report.add(CheckResult("agreement", True, 0, note="skipped: run not drained"))
        report.add(CheckResult("validity", True, 0, note="skipped: run not drained"))
        return report
    # agreement
    sets = {p: set(keys[p]) for p in correct}
    union = set().union(*sets.values()) if sets else set()
    bad = None
    for p in correct:
        missing = union - sets[p]
        if missing:
            m = min(missing)
            bad = {"seed": seed, "process": p, "missing": list(m)}
            break
    report.add(CheckResult("agreement", bad is None, len(union), bad))
    # validity
    want = sorted({(b[0], b[1]) for b in broadcast_log if b[0] in set(correct)})
    bad = None
    for p in correct:
        have = {(k[1], k[2]) for k in keys[p]}
        for blk in want:
            if blk not in have:
                bad = {"seed": seed, "process": p, "block": {"proposer": blk[0], "seq": blk[1]}}
                break
        if bad:
            break
    report.add(CheckResult("validity", bad is None, len(want), bad))
    return report


def check_chain_quality(log, correct_sources, f: int, seed=None, process=None) -> PropertyReport:
    """Every prefix of size (2f+1)r has at least (f+1)r correct-sourced entries."""
    good = set(correct_sources)
    count = 0
    step = 2 * f + 1
    checked = 0
    for idx, e in enumerate(log, 1):
        if _entry_key(e)[1] in good:
            count += 1
        if idx % step == 0:
            r = idx // step
            checked += 1
            if count < (f + 1) * r:
                return _single("chain_quality", False, checked, {
                    "seed": seed, "process": process, "prefix": idx,
                    "correct": count, "required": (f + 1) * r})
    return _single("chain_quality", True, checked)


# -- wave invariants ------------------------------------------------------------------------


def check_leader_reachability(view: TraceView) -> PropertyReport:
    """Committed leaders are strongly reachable from later leaders.

    A leader committed by the commit rule in wave w must be reached from the
    leader of every wave w' > w present in a correct DAG.  A leader committed
    through back-chaining during wave d is checked against waves w' > d.
    """
    sanc, _ = view.dag()
    done = set()
    checked = 0
    max_wave = max(view.leaders, default=0)
    for rec in view.commits:
        _, t, p, w, s, r, decided_in, direct = rec
        bound = w if direct else decided_in
        key = (s, r, bound)
        if key in done:
            continue
        done.add(key)
        target = view.bit(s, r)
        for w2 in range(bound + 1, max_wave + 1):
            lead = view.leaders.get(w2)
            if lead is None:
                continue
            u = (lead, wave_round(w2, 1))
            mask = sanc.get(u)
            if mask is None:
                continue
            checked += 1
            if not mask & target:
                return _single("leader_reachability", False, checked, view.cx(
                    simTime=t, processes=[p], wave=w, laterWave=w2,
                    vertices=[[s, r], list(u)], direct=direct))
    return _single("leader_reachability", True, checked)


def check_common_core(view: TraceView) -> PropertyReport:
    """Common core: at each completed wave some 2f+1 fourth-round vertices
    strongly reach a common set of 2f+1 first-round vertices."""
    sanc, _ = view.dag()
    n, f = view.n, view.f
    q = 2 * f + 1
    checked = 0
    honest = set(view.correct_initial)
    for rec in view.wave_ready:
        _, t, p, w = rec
        if p not in honest:
            continue
        r4, r1 = wave_round(w, 4), wave_round(w, 1)
        members = view.round_adv.get((p, r4), 0)
        us = [s for s in range(n) if (members >> s) & 1]
        row = ((1 << n) - 1) << (r1 * n)
        masks = [sanc.get((s, r4), 0) & row for s in us]
        checked += 1
        ok = False
        for combo in combinations(range(len(us)), q):
            inter = row
            for i in combo:
                inter &= masks[i]
            if inter.bit_count() >= q:
                ok = True
                break
        if not ok:
            return _single("common_core", False, checked, view.cx(
                simTime=t, processes=[p], wave=w, round4=[[s, r4] for s in us]))
    return _single("common_core", True, checked)


def check_wave_invariants(trace) -> PropertyReport:
    view = trace if isinstance(trace, TraceView) else TraceView(trace)
    return check_leader_reachability(view).merge(check_common_core(view))


def check_commit_order(view: TraceView) -> PropertyReport:
    """Within a process, leaders are committed in strictly increasing wave order."""
    last: dict[int, int] = {}
    checked = 0
    for rec in view.commits:
        _, t, p, w = rec[:4]
        checked += 1
        if w <= last.get(p, 0):
            return _single("commit_order", False, checked, view.cx(
                simTime=t, processes=[p], wave=w, previous=last[p]))
        last[p] = w
    return _single("commit_order", True, checked)


def check_quorum_intersection(view: TraceView) -> PropertyReport:
    """If 2f+1 of one process's round-r vertices strongly reach u (u three
    rounds below), every process that completed round r holds at least f+1
    such vertices."""
    sanc, _ = view.dag()
    n, f = view.n, view.f
    by_round: dict[int, list[tuple[int, int]]] = {}
    honest = set(view.correct_initial)
    for (p, r), members in view.round_adv.items():
        if p in honest and r >= 4:
            by_round.setdefault(r, []).append((p, members))
    checked = 0
    for r in sorted(by_round):
        snaps = sorted(by_round[r])
        low = r - 3
        tops = [(s, sanc[(s, r)]) for s in range(n) if (s, r) in sanc]
        for s_u in range(n):
            if (s_u, low) not in sanc:
                continue
            bit = view.bit(s_u, low)
            # sources of round-r vertices that strongly reach u
            reach = 0
            for s, m in tops:
                if m & bit:
                    reach |= 1 << s
            counts = [(p, (members & reach).bit_count()) for p, members in snaps]
            checked += 1
            if max(c for _, c in counts) >= 2 * f + 1:
                for p, c in counts:
                    if c < f + 1:
                        return _single("quorum_intersection", False, checked, view.cx(
                            processes=[p], round=r, vertices=[[s_u, low]], count=c))
    return _single("quorum_intersection", True, checked)


def check_equivocation(view: TraceView) -> PropertyReport:
    """No correct process r_delivers twice for one slot, all correct
    processes deliver the same payload per slot, and no local DAG holds two
    vertices for one slot."""
    honest = set(view.correct_initial)
    per_slot: dict[tuple[int, int], set[int]] = {}
    checked = 0
    for (p, s, r), pids in view.rdeliver.items():
        if p not in honest:
            continue
        checked += 1
        if len(pids) > 1:
            return _single("equivocation", False, checked, view.cx(
                processes=[p], vertices=[[s, r]], payloads=pids))
        per_slot.setdefault((s, r), set()).update(pids)
    for (s, r), pids in per_slot.items():
        if len(pids) > 1:
            procs = sorted(p for (p, s2, r2) in view.rdeliver if (s2, r2) == (s, r))
            return _single("equivocation", False, checked, view.cx(
                processes=procs, vertices=[[s, r]], payloads=sorted(pids)))
    for (s, r), procs in view.added.items():
        if len(procs) != len(set(procs)):
            return _single("equivocation", False, checked, view.cx(
                processes=sorted(procs), vertices=[[s, r]], note="stored twice"))
    return _single("equivocation", True, checked)


def check_all(trace, checks=ALL_CHECKS) -> PropertyReport:
    """Run the selected checks on one trace."""
    view = trace if isinstance(trace, TraceView) else TraceView(trace)
    rep = PropertyReport()
    want = set(checks)
    honest_logs = {p: view.logs.get(p, []) for p in view.correct_initial}
    if "total_order" in want:
        rep.merge(check_total_order(honest_logs, view.seed))
    if want & {"integrity", "agreement", "validity"}:
        drained = bool(view.drain) and bool(view.summary.get("converged", True))
        sub = check_agreement_integrity_validity(
            honest_logs, [(b[2], b[3]) for b in view.bcasts], view.correct, view.seed,
            drained=bool(view.drain))
        for name in ("integrity", "agreement", "validity"):
            if name in want:
                rep.add(sub[name])
        if view.drain and not drained and "validity" in want and rep["validity"].passed:
            rep.add(CheckResult("validity", False, 0, view.cx(note="drain did not converge")))
    if "chain_quality" in want:
        res = CheckResult("chain_quality", True, 0)
        for p in view.correct_initial:
            r = check_chain_quality(view.logs.get(p, []), view.correct, view.f, view.seed, p)["chain_quality"]
            res.checked += r.checked
            if not r.passed:
                res = r
                break
        rep.add(res)
    if "leader_reachability" in want:
        rep.merge(check_leader_reachability(view))
    if "common_core" in want:
        rep.merge(check_common_core(view))
    if "commit_order" in want:
        rep.merge(check_commit_order(view))
    if "quorum_intersection" in want:
        rep.merge(check_quorum_intersection(view))
    if "equivocation" in want:
        rep.merge(check_equivocation(view))
    return rep


# -- metrics ------------------------------------------------------------------------------------


def measure_performance(trace) -> dict:
    """Commit efficiency, latency and communication for one run.

    ``wavesPerCommit`` is the mean gap between waves whose leader met the
    commit rule; latency is divided by the run's time unit (largest
    correct-to-correct delay); communication counts everything correct
    processes sent, divided by the transactions in the final order.
    """
    view = trace if isinstance(trace, TraceView) else TraceView(trace)
    live = set(view.correct)
    evaluated = committed = 0
    direct_waves: dict[int, list[int]] = {}
    for rec in view.evals:
        _, t, p, w, leader, present, support, ok = rec
        if p not in live:
            continue
        evaluated += 1
        if ok:
            committed += 1
            direct_waves.setdefault(p, []).append(w)
    gaps = []
    for p, ws in direct_waves.items():
        prev = 0
        for w in ws:
            gaps.append(w - prev)
            prev = w
    unit = view.summary.get("timeUnit") or 1
    deliver_at: dict[int, dict] = {}
    for p in live:
        deliver_at[p] = {(k[1], k[2]): t for k, t in zip(view.logs.get(p, []), view.log_times.get(p, []))}
    lat = []
    for rec in view.bcasts:
        _, t0, src, seq, rnd, ntx = rec
        if src not in live:
            continue
        for p in live:
            t1 = deliver_at[p].get((src, seq))
            if t1 is not None:
                lat.append(Fraction(t1 - t0, unit))
    ref = max((view.logs.get(p, []) for p in live), key=len, default=[])
    ordered = sum(k[3] for k in ref)
    msgs = sum(view.summary.get("msgsSent", [0] * view.n)[p] for p in view.correct_initial)
    bts = sum(view.summary.get("bytesSent", [0] * view.n)[p] for p in view.correct_initial)
    return {
        "evaluatedWaves": evaluated,
        "committedWaves": committed,
        "commitProbPerWave": committed / evaluated if evaluated else float("nan"),
        "wavesPerCommit": sum(gaps) / len(gaps) if gaps else float("nan"),
        "commitGaps": len(gaps),
        "commitGapSum": sum(gaps),
        "latencyTimeUnits": float(sum(lat) / len(lat)) if lat else float("nan"),
        "latencySamples": len(lat),
        "latencySum": float(sum(lat)),
        "orderedTxs": ordered,
        "msgsPerOrderedTx": msgs / ordered if ordered else float("nan"),
        "bitsPerOrderedTx": 8 * bts / ordered if ordered else float("nan"),
        "timeUnit": unit,
    }


@dataclass
class FairnessMetrics:
    n: int
    ratios: dict
    windowed_mean: dict
    windowed_min: dict
    window: int
    total_txs: int
    windows: int

    def eventually_fair(self, tol: float = 0.05) -> bool:
        return all(r >= 1 / self.n - tol for r in self.ratios.values())

    def to_dict(self) -> dict:
        return {"n": self.n, "ratios": self.ratios, "windowedMean": self.windowed_mean,
                "windowedMin": self.windowed_min, "window": self.window,
                "totalTxs": self.total_txs, "windows": self.windows}


def measure_fairness(trace, window: int | None = None) -> FairnessMetrics:
    """Proposer shares of the ordered transactions up to the horizon.

    The ledger prefix is the longest correct log cut at the moment the first
    correct process ran out of client blocks.  ``ratios`` are the long-run
    shares; windowed shares split that prefix into consecutive windows of
    ``window`` transactions (default ``4n`` times the batch size) and report
    the mean and minimum per process.
    """
    view = trace if isinstance(trace, TraceView) else TraceView(trace)
    n = view.n
    live = view.correct
    horizon = view.summary.get("horizonTime")
    best = []
    for p in live:
        log, times = view.logs.get(p, []), view.log_times.get(p, [])
        cut = [k for k, t in zip(log, times) if horizon is None or t <= horizon]
        if len(cut) > len(best):
            best = cut
    txs = []
    for k in best:
        txs.extend([k[1]] * k[3])
    total = len(txs)
    ratios = {p: (txs.count(p) / total if total else 0.0) for p in live}
    batch = view.trace.header.get("config", {}).get("batchSize", 1)
    win = window or 4 * n * batch
    sums = {p: 0.0 for p in live}
    mins = {p: 1.0 for p in live}
    nwin = total // win
    for i in range(nwin):
        chunk = txs[i * win:(i + 1) * win]
        for p in live:
            share = chunk.count(p) / win
            sums[p] += share
            mins[p] = min(mins[p], share)
    wmean = {p: (sums[p] / nwin if nwin else float("nan")) for p in live}
    if not nwin:
        mins = {p: float("nan") for p in live}
    return FairnessMetrics(n, ratios, wmean, mins, win, total, nwin)


# -- client copies ------------------------------------------------------------------------------


def copy_inclusion_probability(n: int, f: int, copies: int, exact: bool = False):
    """Chance that ``copies`` distinct random recipients include a correct
    process when f of n are Byzantine: 1 - C(f, c) / C(n, c).

    Returns a float, or the exact :class:`~fractions.Fraction` if ``exact``.
    """
    if not 0 <= f <= n or not 0 <= copies <= n:
        raise ValueError("need 0 <= f <= n and 0 <= copies <= n")
    p = 1 - Fraction(math.comb(f, copies), math.comb(n, copies))
    return p if exact else float(p)


def copy_inclusion_monte_carlo(n: int, f: int, copies: int, trials: int = 100_000,
                               seed: int = 0) -> float:
    """Monte Carlo estimate of :func:`copy_inclusion_probability`."""
    rng = random.Random(seed)
    pop = range(n)
    hits = 0
    for _ in range(trials):
        if any(x >= f for x in rng.sample(pop, copies)):
            hits += 1
    return hits / trials
