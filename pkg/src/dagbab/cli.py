"""Experiment runner.

``dagbab run SCENARIO.cfg`` executes every seed of a scenario (optionally a
sweep over several variants), checks each run and writes an aggregated JSON
report.  ``dagbab replay TRACE.jsonl`` re-executes the run recorded in a trace
and verifies that the new trace is byte-identical.

Scenario files are YAML.  Besides the simulation fields (``n``, ``f``,
``model``, ``modelParams``, ``behaviors``, ``horizonRounds``, ``drain``,
``batchSize``, ``txBytes``) they accept ``name``, ``seeds`` (a list, or a
mapping with ``start`` and ``stop``), ``checks`` (names, default all) and
``sweep`` (a mapping from ``n``, ``model``, ``modelParams``, ``behaviors`` or
``batchSize`` to a list of values; the cartesian product is run) and
``fairnessWindow`` (transactions per window for the windowed fairness shares,
default ``4n`` times the batch size).
"""
from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import yaml

from . import _kernel
from .checker import ALL_CHECKS, TraceView, check_all, measure_fairness, measure_performance
from .simnet import ConfigError, SimConfig, Trace, run

SCENARIO_FIELDS = {"name", "seeds", "checks", "sweep", "fairnessWindow"}
SWEEP_KEYS = ("n", "model", "modelParams", "behaviors", "batchSize")


@dataclass
class Scenario:
    name: str
    base: dict
    seeds: list
    checks: tuple = ALL_CHECKS
    sweep: dict = field(default_factory=dict)
    fairness_window: int | None = None

    def variants(self) -> list[tuple[str, SimConfig]]:
        keys = [k for k in SWEEP_KEYS if k in self.sweep]
        out = []
        for combo in itertools.product(*(self.sweep[k] for k in keys)):
            d = dict(self.base)
            label = []
            for k, v in zip(keys, combo):
                d[k] = v
                if k == "n":
                    d["f"] = (v - 1) // 3
                label.append(_label(k, v))
            name = self.name + ("[" + ",".join(label) + "]" if label else "")
            try:
                cfg = SimConfig.from_dict(_resolve_processes(d))
            except ConfigError as e:
                raise ConfigError(f"{name}: {e}") from None
            out.append((name, cfg))
        return out


def _label(key, value) -> str:
    if key == "behaviors":
        return "+".join(b["kind"] for b in value) or "none"
    if key == "modelParams":
        return ";".join(f"{k}={v}" for k, v in sorted(value.items())) or "default"
    return f"{key}={value}"


def _resolve_processes(d: dict) -> dict:
    """Negative process ids in behaviors count from the end (``-1`` is n-1)."""
    n = d.get("n")
    if not isinstance(n, int) or not d.get("behaviors"):
        return d
    out = []
    for b in d["behaviors"]:
        if isinstance(b, dict):
            b = dict(b)
            if isinstance(b.get("process"), int) and b["process"] < 0:
                b["process"] += n
            if isinstance(b.get("targets"), list):
                b["targets"] = [t + n if isinstance(t, int) and t < 0 else t for t in b["targets"]]
        out.append(b)
    d = dict(d)
    d["behaviors"] = out
    return d


def parse_seeds(value, field_name="seeds") -> list[int]:
    if value is None:
        return [0]
    if isinstance(value, int) and not isinstance(value, bool):
        return [value]
    if isinstance(value, list) and all(isinstance(s, int) and not isinstance(s, bool) for s in value):
        return list(value)
    if isinstance(value, dict) and set(value) <= {"start", "stop"}:
        start, stop = value.get("start", 0), value.get("stop")
        if isinstance(start, int) and isinstance(stop, int) and stop > start:
            return list(range(start, stop))
    if isinstance(value, str) and ":" in value:
        a, b = value.split(":", 1)
        try:
            start, stop = int(a), int(b)
        except ValueError:
            pass
        else:
            if stop > start:
                return list(range(start, stop))
    raise ConfigError(f"{field_name}: expected a list of integers, {{start, stop}} or A:B with B > A")


def load_scenario(path: str) -> Scenario:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e.strerror}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"config: not valid YAML: {e}") from None
    return scenario_from_dict(data, default_name=os.path.splitext(os.path.basename(path))[0])


def scenario_from_dict(data, default_name="scenario") -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError("config: expected a mapping at top level")
    base = {k: v for k, v in data.items() if k not in SCENARIO_FIELDS}
    sweep = data.get("sweep") or {}
    if not isinstance(sweep, dict):
        raise ConfigError("sweep: expected a mapping")
    for k, v in sweep.items():
        if k not in SWEEP_KEYS:
            raise ConfigError(f"sweep.{k}: cannot sweep this field; allowed: {', '.join(SWEEP_KEYS)}")
        if not isinstance(v, list) or not v:
            raise ConfigError(f"sweep.{k}: expected a non-empty list")
    if "n" in sweep:
        base.setdefault("n", sweep["n"][0])
        base.setdefault("f", (sweep["n"][0] - 1) // 3)
    checks = data.get("checks") or list(ALL_CHECKS)
    if not isinstance(checks, list):
        raise ConfigError("checks: expected a list of check names")
    for c in checks:
        if c not in ALL_CHECKS:
            raise ConfigError(f"checks: unknown check {c!r}; expected names from {', '.join(ALL_CHECKS)}")
    window = data.get("fairnessWindow")
    if window is not None and (not isinstance(window, int) or isinstance(window, bool) or window < 1):
        raise ConfigError(f"fairnessWindow: expected a positive integer, got {window!r}")
    sc = Scenario(str(data.get("name", default_name)), base, parse_seeds(data.get("seeds")),
                  tuple(checks), sweep, window)
    sc.variants()  # validate every variant up front
    return sc


# -- execution ---------------------------------------------------------------------------


def run_one(cfg: SimConfig, checks=ALL_CHECKS, emit_dir: str | None = None, label: str = "run",
            fairness_window: int | None = None) -> dict:
    """Run, check and measure one seed; returns a JSON-ready summary."""
    res = run(cfg)
    view = TraceView(res.trace)
    rep = check_all(view, checks)
    perf = measure_performance(view)
    fair = measure_fairness(view, fairness_window)
    text = res.trace.to_jsonl()
    out = {
        "seed": cfg.seed,
        "passed": rep.passed,
        "checks": rep.to_dict(),
        "performance": perf,
        "fairness": fair.to_dict(),
        "converged": res.converged,
        "traceSha256": hashlib.sha256(text.encode()).hexdigest(),
    }
    if emit_dir:
        os.makedirs(emit_dir, exist_ok=True)
        stem = os.path.join(emit_dir, f"{_safe(label)}_seed{cfg.seed}")
        with open(stem + ".trace.jsonl", "w") as fh:
            fh.write(text)
        with open(stem + ".deliveries.jsonl", "w") as fh:
            fh.write(delivery_log_jsonl(res.trace))
        out["trace"] = stem + ".trace.jsonl"
    return out


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_=." else "_" for c in name)


def delivery_log_jsonl(trace: Trace) -> str:
    """DeliveryLog of every correct process, one JSON object per entry."""
    lines = []
    for rec in trace.records:
        if rec[0] == "a_deliver":
            _, t, p, idx, r, s, seq, ntx = rec
            lines.append(json.dumps({"process": p, "idx": idx, "round": r, "source": s,
                                     "seq": seq, "txCount": ntx, "simTime": t},
                                    sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + ("\n" if lines else "")


def _job(args):
    cfg_dict, seed, checks, emit_dir, label, window = args
    cfg = SimConfig.from_dict(dict(cfg_dict, seed=seed))
    return run_one(cfg, checks, emit_dir, label, window)


def aggregate(runs: list[dict], checks) -> dict:
    """Pool per-seed summaries of one variant."""
    agg_checks = {}
    for name in checks:
        fails = [r for r in runs if not r["checks"].get(name, {"passed": True})["passed"]]
        agg_checks[name] = {"passed": not fails, "failures": len(fails),
                            "runs": len(runs)}
        if fails:
            agg_checks[name]["firstCounterexample"] = fails[0]["checks"][name].get("counterexample")
    ev = sum(r["performance"]["evaluatedWaves"] for r in runs)
    com = sum(r["performance"]["committedWaves"] for r in runs)
    gaps = sum(r["performance"]["commitGaps"] for r in runs)
    gap_sum = sum(r["performance"]["commitGapSum"] for r in runs)
    lat_n = sum(r["performance"]["latencySamples"] for r in runs)
    lat_sum = sum(r["performance"]["latencySum"] for r in runs)

    def mean(key):
        vals = [r["performance"][key] for r in runs if r["performance"][key] == r["performance"][key]]
        return sum(vals) / len(vals) if vals else None

    procs = sorted({p for r in runs for p in r["fairness"]["ratios"]}, key=int)
    ratios = {str(p): _mean([r["fairness"]["ratios"].get(p) for r in runs]) for p in procs}
    wmean = {str(p): _mean([r["fairness"]["windowedMean"].get(p) for r in runs]) for p in procs}
    return {
        "runs": len(runs),
        "passed": all(v["passed"] for v in agg_checks.values()),
        "converged": sum(1 for r in runs if r["converged"]),
        "checks": agg_checks,
        "metrics": {
            "evaluatedWaves": ev,
            "committedWaves": com,
            "commitProbPerWave": com / ev if ev else None,
            "wavesPerCommit": gap_sum / gaps if gaps else None,
            "latencyTimeUnits": lat_sum / lat_n if lat_n else None,
            "msgsPerOrderedTx": mean("msgsPerOrderedTx"),
            "bitsPerOrderedTx": mean("bitsPerOrderedTx"),
        },
        "fairness": {"ratios": ratios, "windowedMean": wmean},
    }


def _mean(vals):
    vals = [v for v in vals if v is not None and v == v]
    return sum(vals) / len(vals) if vals else None


def run_scenario(sc: Scenario, seeds=None, jobs: int = 1, emit_dir=None, checks=None,
                 progress=None) -> dict:
    seeds = list(seeds) if seeds is not None else sc.seeds
    checks = tuple(checks) if checks else sc.checks
    variants = []
    for label, cfg in sc.variants():
        base = cfg.to_dict()
        tasks = [(base, s, checks, emit_dir, label, sc.fairness_window) for s in seeds]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                runs = list(ex.map(_job, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
        else:
            runs = [_job(t) for t in tasks]
        agg = aggregate(runs, checks)
        base.pop("seed")
        agg.update({"name": label, "config": base, "seeds": [seeds[0], seeds[-1] + 1] if seeds else []})
        agg["perSeed"] = [{"seed": r["seed"], "passed": r["passed"], "traceSha256": r["traceSha256"],
                           **({"trace": r["trace"]} if "trace" in r else {})} for r in runs]
        variants.append(agg)
        if progress:
            progress(agg)
    return {
        "scenario": sc.name,
        "kernel": "compiled" if _kernel.COMPILED else "python",
        "checks": list(checks),
        "runs": sum(v["runs"] for v in variants),
        "passed": all(v["passed"] for v in variants),
        "variants": variants,
    }


def replay(trace_text: str, seed: int | None = None):
    """Re-run the run recorded in ``trace_text``.

    Returns ``(result, identical, first_differing_line)`` where the line
    number is 1-based, or None when the traces match.
    """
    old = Trace.from_jsonl(trace_text)
    cfg_dict = dict(old.header.get("config") or {})
    if not cfg_dict:
        raise ConfigError("trace: header record with config missing")
    if seed is not None:
        cfg_dict["seed"] = seed
    res = run(SimConfig.from_dict(cfg_dict))
    new_text = res.trace.to_jsonl()
    if new_text == trace_text:
        return res, True, None
    a, b = trace_text.splitlines(), new_text.splitlines()
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return res, False, i + 1
    return res, False, min(len(a), len(b)) + 1


# -- command line -------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dagbab", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario and check every seed")
    r.add_argument("config", help="scenario file (YAML)")
    r.add_argument("--seed-range", help="seeds A:B (B exclusive), overrides the file")
    r.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    r.add_argument("--emit-traces", metavar="DIR", help="write per-seed traces and delivery logs")
    r.add_argument("--report", metavar="PATH", help="write the JSON report here")
    r.add_argument("--check", help="comma-separated checks to run (default: the file's list)")
    r.add_argument("--quiet", action="store_true", help="only print the final summary")
    p = sub.add_parser("replay", help="re-run a recorded trace and compare byte for byte")
    p.add_argument("trace", help="trace file (JSONL) written by --emit-traces")
    p.add_argument("--seed", type=int, help="re-run with this seed instead of the recorded one")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.cmd == "run":
        return _cmd_run(args)
    return _cmd_replay(args)


def _cmd_run(args) -> int:
    try:
        sc = load_scenario(args.config)
        seeds = parse_seeds(args.seed_range, "--seed-range") if args.seed_range else None
        checks = None
        if args.check:
            checks = [c.strip() for c in args.check.split(",") if c.strip()]
            for c in checks:
                if c not in ALL_CHECKS:
                    raise ConfigError(f"--check: unknown check {c!r}; expected names from {', '.join(ALL_CHECKS)}")
        if args.jobs < 1:
            raise ConfigError("--jobs: must be >= 1")
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    def progress(v):
        if not args.quiet:
            m = v["metrics"]
            status = "PASS" if v["passed"] else "FAIL"
            cp = m["commitProbPerWave"]
            wpc = m["wavesPerCommit"]
            print(f"{status} {v['name']}: {v['runs']} runs, commitProb="
                  f"{cp if cp is None else round(cp, 4)}, wavesPerCommit="
                  f"{wpc if wpc is None else round(wpc, 4)}")
            for name, c in v["checks"].items():
                if not c["passed"]:
                    print(f"  {name}: {c['failures']} failing runs, first: {c.get('firstCounterexample')}")

    report = run_scenario(sc, seeds, args.jobs, args.emit_traces, checks, progress)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(f"{'PASS' if report['passed'] else 'FAIL'} {report['scenario']}: "
          f"{report['runs']} runs ({report['kernel']} kernel)")
    return 0 if report["passed"] else 1


def _cmd_replay(args) -> int:
    try:
        with open(args.trace) as fh:
            text = fh.read()
        _, same, line = replay(text, args.seed)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if same:
        print("identical")
        return 0
    print(f"differs from line {line}")
    return 1


if __name__ == "__main__":
    sys.exit(main())
