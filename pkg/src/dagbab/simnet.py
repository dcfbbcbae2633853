"""Deterministic discrete-event simulator for the DAG protocol.

A run wires ``n`` processes (DAG builder plus orderer over a shared coin
oracle) to a network kernel that owns the event heap and the per-process
Bracha machines.  An adversary controller shapes message delays according to
one of five network models, and Byzantine behaviors replace individual
processes.  Time is measured in integer ticks; one configured delay unit is
``TICKS_PER_UNIT`` ticks, so runs never depend on floating point.

Everything observable is appended to a :class:`Trace`; the checker works on
traces only.
"""
from __future__ import annotations

import json
import random
import struct
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

from . import _kernel
from .coin import CoinOracle, splitmix64
from .core import (Block, DagStore, DecodeError, Vertex, VertexRef,
                   check_config, decode_vertex, encode_vertex, wave_round)
from .dag_builder import Broadcast, DagBuilder, RoundAdvance, VertexAdded, WaveReady
from .orderer import DeliveryLog, Delivered, Orderer
from .rbc import RbcKind

TICKS_PER_UNIT = 1000
DEFAULT_OMEGA = (1 * TICKS_PER_UNIT, 2 * TICKS_PER_UNIT)

MODELS = ("RandomArrival", "FullControl", "MobilePartialControl",
          "RandomPartialControl", "RandomOrdering")
BEHAVIORS = ("Silent", "Equivocate", "MalformedEdges", "Withhold", "AdaptiveCorruptAt")
STRATEGIES = ("leader_suppressor", "partitioner", "reorderer", "targeting")

_TOKEN_TICK = 0
_TOKEN_CORRUPT = 1 << 20
_MISSING = object()


class ConfigError(ValueError):
    """Invalid simulation configuration; the message names the field."""


def to_ticks(value, name: str) -> int:
    """Convert a delay given in units (int, float or decimal string) to ticks."""
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    try:
        q = Fraction(str(value))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{name}: not a finite number: {value!r}") from None
    if q < 0:
        raise ConfigError(f"{name}: must be non-negative")
    return round(q * TICKS_PER_UNIT)


def _range_ticks(value, name: str, default):
    if value is None:
        return default
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{name}: expected [lo, hi]")
    lo, hi = to_ticks(value[0], name), to_ticks(value[1], name)
    if hi < lo:
        raise ConfigError(f"{name}: hi < lo")
    return lo, hi


# -- configuration ----------------------------------------------------------------


@dataclass(frozen=True)
class BehaviorSpec:
    kind: str
    process: int
    targets: tuple[int, ...] = ()
    time: int = 0  # ticks, AdaptiveCorruptAt only

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "process": self.process}
        if self.kind == "Withhold":
            d["targets"] = list(self.targets)
        if self.kind == "AdaptiveCorruptAt":
            d["time"] = str(Fraction(self.time, TICKS_PER_UNIT))
        return d


@dataclass
class SimConfig:
    n: int
    f: int
    seed: int = 0
    model: str = "RandomArrival"
    model_params: dict = field(default_factory=dict)
    behaviors: list = field(default_factory=list)
    horizon_rounds: int = 40
    drain: bool = True
    batch_size: int = 1
    tx_bytes: int = 8
    max_extra_rounds: int = 64

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("n", "f", "seed", "horizon_rounds", "batch_size", "tx_bytes", "max_extra_rounds"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{name}: expected an integer, got {v!r}")
        try:
            check_config(self.n, self.f)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.n > 64:
            raise ConfigError("n: at most 64 processes are supported")
        if self.horizon_rounds < 4:
            raise ConfigError("horizonRounds: must be >= 4")
        if not 1 <= self.batch_size < 1 << 16:
            raise ConfigError("batchSize: must be in [1, 65535]")
        if self.tx_bytes < 8:
            raise ConfigError("txBytes: must be >= 8")
        if self.model not in MODELS:
            raise ConfigError(f"model: unknown model {self.model!r}; expected one of {', '.join(MODELS)}")
        if not isinstance(self.model_params, dict):
            raise ConfigError("modelParams: expected a mapping")
        seen = set()
        for b in self.behaviors:
            if not isinstance(b, BehaviorSpec):
                raise ConfigError("behaviors: entries must be BehaviorSpec")
            if b.kind not in BEHAVIORS:
                raise ConfigError(f"behaviors: unknown kind {b.kind!r}")
            if not 0 <= b.process < self.n:
                raise ConfigError(f"behaviors: process {b.process} out of range")
            if b.process in seen:
                raise ConfigError(f"behaviors: process {b.process} listed twice")
            seen.add(b.process)
            for t in b.targets:
                if not 0 <= t < self.n:
                    raise ConfigError(f"behaviors: withhold target {t} out of range")
        if len(self.behaviors) > self.f:
            raise ConfigError(f"behaviors: corruption budget exceeded ({len(self.behaviors)} > f={self.f})")
        _controller_class(self.model).parse(self, self.model_params)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        if not isinstance(d, dict):
            raise ConfigError("config: expected a mapping")
        known = {"n", "f", "seed", "model", "modelParams", "behaviors", "horizonRounds",
                 "drain", "batchSize", "txBytes", "maxExtraRounds"}
        for k in d:
            if k not in known:
                raise ConfigError(f"{k}: unknown field")
        for k in ("n", "f"):
            if k not in d:
                raise ConfigError(f"{k}: required field missing")
        behaviors = [parse_behavior(b, i) for i, b in enumerate(d.get("behaviors") or [])]
        drain = d.get("drain", True)
        if not isinstance(drain, bool):
            raise ConfigError("drain: expected true or false")
        return cls(n=d["n"], f=d["f"], seed=d.get("seed", 0), model=d.get("model", "RandomArrival"),
                   model_params=dict(d.get("modelParams") or {}), behaviors=behaviors,
                   horizon_rounds=d.get("horizonRounds", 40), drain=drain,
                   batch_size=d.get("batchSize", 1), tx_bytes=d.get("txBytes", 8),
                   max_extra_rounds=d.get("maxExtraRounds", 64))

    def to_dict(self) -> dict:
        return {"n": self.n, "f": self.f, "seed": self.seed, "model": self.model,
                "modelParams": self.model_params,
                "behaviors": [b.to_dict() for b in self.behaviors],
                "horizonRounds": self.horizon_rounds, "drain": self.drain,
                "batchSize": self.batch_size, "txBytes": self.tx_bytes,
                "maxExtraRounds": self.max_extra_rounds}

    def with_seed(self, seed: int) -> "SimConfig":
        d = self.to_dict()
        d["seed"] = seed
        return SimConfig.from_dict(d)


def parse_behavior(b, index: int = 0) -> BehaviorSpec:
    where = f"behaviors[{index}]"
    if not isinstance(b, dict):
        raise ConfigError(f"{where}: expected a mapping")
    kind = b.get("kind")
    if kind not in BEHAVIORS:
        raise ConfigError(f"{where}.kind: unknown behavior {kind!r}")
    p = b.get("process")
    if isinstance(p, bool) or not isinstance(p, int):
        raise ConfigError(f"{where}.process: expected an integer")
    targets = ()
    t = 0
    if kind == "Withhold":
        raw = b.get("targets")
        if not isinstance(raw, list) or not raw or not all(isinstance(x, int) for x in raw):
            raise ConfigError(f"{where}.targets: expected a non-empty list of process ids")
        targets = tuple(sorted(set(raw)))
    if kind == "AdaptiveCorruptAt":
        if "time" not in b:
            raise ConfigError(f"{where}.time: required for AdaptiveCorruptAt")
        t = to_ticks(b["time"], f"{where}.time")
    return BehaviorSpec(kind, p, targets, t)


# -- trace --------------------------------------------------------------------------

FIELDS = {
    "payload": ("pid", "source", "round", "strong", "weak", "proposer", "seq", "txCount"),
    "r_deliver": ("process", "source", "round", "pid"),
    "vertex_added": ("process", "source", "round"),
    "round_advance": ("process", "round", "members"),
    "wave_ready": ("process", "wave"),
    "leader": ("wave", "leader"),
    "wave_eval": ("process", "wave", "leader", "present", "support", "committed"),
    "commit": ("process", "wave", "source", "round", "decidedIn", "direct"),
    "a_bcast": ("process", "seq", "round", "txCount"),
    "a_deliver": ("process", "idx", "round", "source", "seq", "txCount"),
    "corrupt": ("process",),
    "drain": ("stopRound",),
    "end": ("summary",),
}
_REF_FIELDS = ("strong", "weak")


class Trace:
    """Ordered run events.  Records are tuples ``(event, time, *fields)``."""

    def __init__(self, header: dict | None = None, records: list | None = None):
        self.header = header or {}
        self.records: list[tuple] = records if records is not None else []

    def __len__(self):
        return len(self.records)

    def of(self, kind: str):
        return [r for r in self.records if r[0] == kind]

    @property
    def summary(self) -> dict:
        for r in reversed(self.records):
            if r[0] == "end":
                return r[2]
        return {}

    def to_jsonl(self) -> str:
        lines = [json.dumps({"ev": "header", **self.header}, sort_keys=True, separators=(",", ":"))]
        for rec in self.records:
            d = {"ev": rec[0], "t": rec[1]}
            for k, v in zip(FIELDS[rec[0]], rec[2:]):
                d[k] = [list(x) for x in v] if k in _REF_FIELDS else v
            lines.append(json.dumps(d, sort_keys=True, separators=(",", ":")))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "Trace":
        header = {}
        records = []
        for i, line in enumerate(text.splitlines()):
            if not line.strip():
                continue
            d = json.loads(line)
            ev = d.pop("ev")
            if ev == "header":
                header = d
                continue
            if ev not in FIELDS:
                raise ValueError(f"line {i + 1}: unknown event {ev!r}")
            vals = []
            for k in FIELDS[ev]:
                v = d[k]
                if k in _REF_FIELDS:
                    v = tuple(tuple(x) for x in v)
                vals.append(v)
            records.append((ev, d["t"], *vals))
        return cls(header, records)


# -- adversary ------------------------------------------------------------------------


class AdversaryView:
    """What an adversary strategy may touch.

    The coin is reachable only through :meth:`peek`, which returns revealed
    leaders and nothing else.  Delay changes are limited to the senders the
    model currently lets the adversary control.
    """

    def __init__(self, sim: "Simulation", full: bool):
        self._sim = sim
        self._full = full
        self.n = sim.n
        self.f = sim.f
        self.rng = sim.adv_rng
        self.correct = sim.correct_initial
        self.omega = sim.omega
        self.controlled: set[int] = set(range(sim.n)) if full else set()

    @property
    def now(self) -> int:
        return self._sim.net.now

    def peek(self, w: int):
        return self._sim.coin.adversary_peek(w)

    def set_link(self, src: int, dst: int, lo: int, hi: int) -> None:
        if src not in self.controlled:
            raise PermissionError(f"sender {src} is not under adversary control")
        self._sim.net.set_link(src, dst, lo, hi)

    def set_sender(self, src: int, lo: int, hi: int) -> None:
        for d in range(self.n):
            self.set_link(src, d, lo, hi)

    def slow_vertex(self, source: int, rnd: int, extra: int) -> None:
        """Delay every message of one broadcast instance (full control only)."""
        if not self._full:
            raise PermissionError("per-instance delays need full network control")
        self._sim.net.slow_tag(source, rnd, extra)


class Strategy:
    """Full-control adversary strategy.  Subclasses override the hooks."""

    tick = None  # ticks between on_tick calls, or None

    def __init__(self, params: dict):
        self.params = params

    def setup(self, view: AdversaryView) -> None:
        pass

    def on_broadcast(self, view: AdversaryView, src: int, rnd: int) -> None:
        pass

    def on_tick(self, view: AdversaryView) -> None:
        pass


class LeaderSuppressor(Strategy):
    """Delays the vertex it believes is the next leader.

    Before a wave's coin is revealed it can only guess, so at the first
    first-round broadcast of each wave it slows a uniformly guessed process's
    first-round vertex.  After the reveal it also slows the real leader's
    vertex, which is usually too late to matter.
    """

    def __init__(self, params):
        super().__init__(params)
        self.extra = to_ticks(params.get("extra", 4), "modelParams.extra")
        self.tick = TICKS_PER_UNIT // 2
        self.guessed: set[int] = set()
        self.seen_reveal: set[int] = set()
        self.next_wave = 1

    def on_broadcast(self, view, src, rnd):
        if rnd % 4 == 1:
            w = rnd // 4 + 1
            if w not in self.guessed:
                self.guessed.add(w)
                known = view.peek(w)
                target = known if known is not None else view.rng.randrange(view.n)
                view.slow_vertex(target, rnd, self.extra)

    def on_tick(self, view):
        while True:
            leader = view.peek(self.next_wave)
            if leader is None:
                return
            view.slow_vertex(leader, wave_round(self.next_wave, 1), self.extra)
            self.next_wave += 1


class Partitioner(Strategy):
    """Alternates between splitting the correct processes in two and healing."""

    def __init__(self, params):
        super().__init__(params)
        self.cross = _range_ticks(params.get("crossDelay"), "modelParams.crossDelay",
                                  (3 * TICKS_PER_UNIT, 6 * TICKS_PER_UNIT))
        self.tick = to_ticks(params.get("period", 8), "modelParams.period") or TICKS_PER_UNIT
        self.split = True

    def setup(self, view):
        self._apply(view)

    def _apply(self, view):
        half = len(view.correct) // 2
        a = set(view.correct[:half])
        for s in range(view.n):
            for d in range(view.n):
                across = (s in a) != (d in a)
                lo, hi = self.cross if (self.split and across) else view.omega
                view.set_link(s, d, lo, hi)

    def on_tick(self, view):
        self.split = not self.split
        self._apply(view)


class Reorderer(Strategy):
    """Redraws every link's delay range each epoch to shuffle arrival order."""

    def __init__(self, params):
        super().__init__(params)
        lo, hi = DEFAULT_OMEGA
        self.choices = ((lo, hi), (lo, 3 * hi), (2 * hi, 3 * hi))
        self.tick = to_ticks(params.get("epoch", 3), "modelParams.epoch") or TICKS_PER_UNIT

    def setup(self, view):
        self.on_tick(view)

    def on_tick(self, view):
        for s in range(view.n):
            for d in range(view.n):
                lo, hi = self.choices[view.rng.randrange(len(self.choices))]
                view.set_link(s, d, lo, hi)


class Targeting(Strategy):
    """Slows everything a target process sends or receives, more each epoch."""

    def __init__(self, params):
        super().__init__(params)
        self.target = params.get("target", 0)
        self.growth = to_ticks(params.get("growth", 1), "modelParams.growth")
        self.cap = to_ticks(params.get("cap", 16), "modelParams.cap")
        self.tick = to_ticks(params.get("epoch", 2), "modelParams.epoch") or TICKS_PER_UNIT
        self.extra = 0

    def setup(self, view):
        if not 0 <= self.target < view.n:
            raise ConfigError(f"modelParams.target: {self.target} out of range")
        self._apply(view)

    def _apply(self, view):
        lo, hi = view.omega
        t = self.target
        for p in range(view.n):
            view.set_link(t, p, lo + self.extra, hi + self.extra)
            view.set_link(p, t, lo + self.extra, hi + self.extra)

    def on_tick(self, view):
        if self.extra < self.cap:
            self.extra = min(self.cap, self.extra + self.growth)
            self._apply(view)


STRATEGY_CLASSES = {"leader_suppressor": LeaderSuppressor, "partitioner": Partitioner,
                    "reorderer": Reorderer, "targeting": Targeting}


class Controller:
    """Applies one network model to the kernel's delay tables."""

    tick = None

    def __init__(self, sim: "Simulation", params: dict):
        self.sim = sim
        self.params = params

    @staticmethod
    def parse(cfg: SimConfig, params: dict) -> None:
        _range_ticks(params.get("omega"), "modelParams.omega", DEFAULT_OMEGA)

    def setup(self) -> None:
        self.sim.net.set_all(*self.sim.omega)

    def on_broadcast(self, src: int, rnd: int) -> None:
        pass

    def on_tick(self) -> None:
        pass


class RandomArrival(Controller):
    pass


class FullControl(Controller):
    def __init__(self, sim, params):
        super().__init__(sim, params)
        name = params.get("strategy", "leader_suppressor")
        self.view = AdversaryView(sim, full=True)
        custom = params.get("strategyObject")
        self.strategy = custom if custom is not None else STRATEGY_CLASSES[name](params)
        self.tick = self.strategy.tick

    @staticmethod
    def parse(cfg, params):
        Controller.parse(cfg, params)
        if params.get("strategyObject") is None:
            name = params.get("strategy", "leader_suppressor")
            if name not in STRATEGY_CLASSES:
                raise ConfigError(f"modelParams.strategy: unknown strategy {name!r}; "
                                  f"expected one of {', '.join(STRATEGIES)}")
            STRATEGY_CLASSES[name](params)

    def setup(self):
        super().setup()
        self.strategy.setup(self.view)

    def on_broadcast(self, src, rnd):
        self.strategy.on_broadcast(self.view, src, rnd)

    def on_tick(self):
        self.strategy.on_tick(self.view)


def _partial_params(cfg: SimConfig, params: dict):
    k = params.get("k", cfg.f + 1)
    if isinstance(k, bool) or not isinstance(k, int) or not 1 <= k <= 2 * cfg.f + 1:
        raise ConfigError(f"modelParams.k: must be an integer in [1, 2f+1], got {k!r}")
    adv = _range_ticks(params.get("advDelay"), "modelParams.advDelay",
                       (4 * TICKS_PER_UNIT, 8 * TICKS_PER_UNIT))
    return k, adv


class MobilePartialControl(Controller):
    """Each epoch the adversary picks fewer than k correct processes and gives
    their outgoing messages the adversarial delay; a configured ``target`` is
    always among them.  Other senders use Omega."""

    def __init__(self, sim, params):
        super().__init__(sim, params)
        self.k, self.adv = _partial_params(sim.cfg, params)
        self.tick = to_ticks(params.get("epoch", 4), "modelParams.epoch") or TICKS_PER_UNIT
        self.target = params.get("target")
        self.view = AdversaryView(sim, full=False)
        self.history: list[tuple[int, tuple[int, ...]]] = []

    @staticmethod
    def parse(cfg, params):
        Controller.parse(cfg, params)
        _partial_params(cfg, params)
        t = params.get("target")
        if t is not None and (not isinstance(t, int) or not 0 <= t < cfg.n):
            raise ConfigError(f"modelParams.target: {t!r} out of range")

    def setup(self):
        super().setup()
        self._choose()

    def _choose(self):
        v = self.view
        size = self.k - 1
        pool = list(v.correct)
        chosen = []
        if self.target is not None and self.target in pool and size > 0:
            chosen.append(self.target)
            pool.remove(self.target)
        rest = size - len(chosen)
        if rest > 0:
            chosen.extend(v.rng.sample(pool, min(rest, len(pool))))
        new = set(chosen)
        v.controlled = set(range(v.n))  # lift the guard while rewriting tables
        for p in v.correct:
            lo, hi = self.adv if p in new else v.omega
            v.set_sender(p, lo, hi)
        v.controlled = new
        self.history.append((v.now, tuple(sorted(new))))

    def on_tick(self):
        self._choose()


class RandomPartialControl(Controller):
    """Control periods of random length (Omega1) separated by release periods
    of random length (Omega2), with fewer than k processes controlled at once."""

    def __init__(self, sim, params):
        super().__init__(sim, params)
        self.k, self.adv = _partial_params(sim.cfg, params)
        self.omega1 = _range_ticks(params.get("omega1"), "modelParams.omega1", (2 * TICKS_PER_UNIT, 6 * TICKS_PER_UNIT))
        self.omega2 = _range_ticks(params.get("omega2"), "modelParams.omega2", (2 * TICKS_PER_UNIT, 6 * TICKS_PER_UNIT))
        self.tick = TICKS_PER_UNIT // 4
        self.view = AdversaryView(sim, full=False)
        self.until: dict[int, int] = {}
        self.controlled: set[int] = set()
        self.max_controlled = 0

    @staticmethod
    def parse(cfg, params):
        Controller.parse(cfg, params)
        _partial_params(cfg, params)
        _range_ticks(params.get("omega1"), "modelParams.omega1", None)
        _range_ticks(params.get("omega2"), "modelParams.omega2", None)

    def _sample(self, rng_range):
        lo, hi = rng_range
        return lo + self.view.rng.randrange(hi - lo + 1)

    def setup(self):
        super().setup()
        for p in self.view.correct:
            self.until[p] = self._sample(self.omega2)

    def on_tick(self):
        now = self.view.now
        net = self.sim.net
        for p in self.view.correct:
            if now < self.until[p]:
                continue
            if p in self.controlled:
                self.controlled.discard(p)
                net.set_sender(p, *self.view.omega)
                self.until[p] = now + self._sample(self.omega2)
            elif len(self.controlled) < self.k - 1:
                self.controlled.add(p)
                net.set_sender(p, *self.adv)
                self.until[p] = now + self._sample(self.omega1)
            else:
                self.until[p] = now + self._sample(self.omega2)
        self.max_controlled = max(self.max_controlled, len(self.controlled))
        self.view.controlled = set(self.controlled)


class RandomOrdering(Controller):
    """Messages enter M(t) at a uniformly random position; the adversary only
    picks the gap before the head is delivered."""

    @staticmethod
    def parse(cfg, params):
        _range_ticks(params.get("gap"), "modelParams.gap", None)

    def setup(self):
        gap = _range_ticks(self.params.get("gap"), "modelParams.gap", (1, 20))
        self.sim.net.set_ordering(*gap)


CONTROLLERS = {"RandomArrival": RandomArrival, "FullControl": FullControl,
               "MobilePartialControl": MobilePartialControl,
               "RandomPartialControl": RandomPartialControl, "RandomOrdering": RandomOrdering}


def _controller_class(model: str):
    return CONTROLLERS[model]


# -- processes ---------------------------------------------------------------------------


class Process:
    """A correct process: DAG builder, orderer and client, driven by r_deliver."""

    def __init__(self, sim: "Simulation", me: int):
        self.sim = sim
        self.me = me
        self.dag = DagStore(sim.n, sim.f)
        self.builder = DagBuilder(me, sim.n, sim.f, self.dag, on_empty_queue=self._need_block)
        self.orderer = Orderer(me, sim.n, sim.f, self.dag, sim.coin, self.builder)
        self.waves: deque[int] = deque()
        self.active = True
        self.honest = True

    def _need_block(self, rnd: int) -> None:
        self.sim._need_block(self, rnd)

    def on_deliver(self, v: Vertex, ts: int, tr: int) -> None:
        self.builder.on_r_deliver(v, tr, ts)
        self.progress()

    def progress(self) -> None:
        sim = self.sim
        rec = sim.records.append
        me = self.me
        for ev in self.builder.try_progress():
            kind = type(ev)
            if kind is VertexAdded:
                rec(("vertex_added", sim.net.now, me, ev.vertex.source, ev.vertex.round))
            elif kind is RoundAdvance:
                rec(("round_advance", sim.net.now, me, ev.completed, ev.members))
            elif kind is WaveReady:
                if self.honest:
                    rec(("wave_ready", sim.net.now, me, ev.wave))
                    self.waves.append(ev.wave)
            else:
                self.broadcast(ev.vertex)
        if self.waves:
            self.run_waves()

    def broadcast(self, v: Vertex) -> None:
        sim = self.sim
        pid = sim.net.register_payload(encode_vertex(v))
        sim.on_vertex_broadcast(self.me, v.round)
        sim.net.r_bcast(self.me, v.round, pid)

    def run_waves(self) -> None:
        sim = self.sim
        coin = sim.coin
        while self.waves and self.active:
            w = self.waves[0]
            if coin.choose_leader(self.me, w) is None:
                sim.wait_for_coin(w, self)
                return
            self.waves.popleft()
            orderer = self.orderer
            orderer.now = now = sim.net.now
            ncommits = len(orderer.commits)
            delivered = orderer.on_wave_ready(w)
            out = orderer.outcomes[-1]
            rec = sim.records.append
            rec(("wave_eval", now, self.me, w, out.leader, out.present, out.support, out.committed))
            for c in orderer.commits[ncommits:]:
                rec(("commit", now, self.me, c.wave, c.leader.source, c.leader.round, c.decided_in, c.direct))
            if delivered:
                base = len(orderer.log) - len(delivered)
                for i, d in enumerate(delivered):
                    rec(("a_deliver", now, self.me, base + i, d.round, d.source, d.block.seq, len(d.block.txs)))
                sim.on_delivered(self, delivered)


class ByzantineProcess(Process):
    """Keeps an honest-looking DAG so it can build plausible vertices, but
    never orders and broadcasts according to its behavior."""

    def __init__(self, sim, me, spec: BehaviorSpec):
        super().__init__(sim, me)
        self.spec = spec
        self.honest = False

    def broadcast(self, v: Vertex) -> None:
        sim = self.sim
        net = sim.net
        kind = self.spec.kind
        if kind == "Equivocate":
            alt = Vertex(v.round, v.source, Block(v.block.proposer, v.block.seq, v.block.txs + (b"\xffequivocal",)),
                         v.strong_edges, v.weak_edges)
            pa = net.register_payload(encode_vertex(v))
            pb = net.register_payload(encode_vertex(alt))
            sim.on_vertex_broadcast(self.me, v.round)
            half = sim.n // 2
            for k in (RbcKind.INIT, RbcKind.ECHO, RbcKind.READY):
                for d in range(sim.n):
                    net.send(self.me, d, int(k), self.me, v.round, pa if d < half else pb)
            return
        if kind == "MalformedEdges":
            strong = sorted(v.strong_edges)
            if v.round % 2 == 1 or v.round < 2:
                bad = Vertex(v.round, v.source, v.block, frozenset(strong[:2 * sim.f]), v.weak_edges)
            else:
                bumped = [VertexRef(s, r - 1) if i == 0 else VertexRef(s, r) for i, (s, r) in enumerate(strong)]
                bad = Vertex(v.round, v.source, v.block, frozenset(bumped), v.weak_edges)
            v = bad
        super().broadcast(v)


# -- simulation ----------------------------------------------------------------------------


@dataclass
class RunResult:
    config: SimConfig
    trace: Trace
    logs: dict
    correct: tuple
    byzantine: tuple
    corrupted: dict
    broadcast_log: list
    converged: bool
    horizon_time: int | None
    time_unit: int
    stop_round: int
    kernel_compiled: bool

    def trace_bytes(self) -> bytes:
        return self.trace.to_jsonl().encode()


class Simulation:
    def __init__(self, cfg: SimConfig, network_cls=None):
        cfg.validate()
        self.cfg = cfg
        self.n = n = cfg.n
        self.f = cfg.f
        seed = cfg.seed & ((1 << 64) - 1)
        net_cls = network_cls or _kernel.RbcNetwork
        self.omega = _range_ticks(cfg.model_params.get("omega"), "modelParams.omega", DEFAULT_OMEGA)
        self.net = net_cls(n, cfg.f, splitmix64(seed ^ 0x6E6574), *self.omega)
        self.coin = CoinOracle(n, cfg.f, splitmix64(seed ^ 0x636F696E))
        self.coin.on_reveal(self._on_reveal)
        self.adv_rng = random.Random(splitmix64(seed ^ 0x616476))
        self.records: list[tuple] = []
        self.behaviors: dict[int, BehaviorSpec] = {}
        self.procs: list[Process | None] = [None] * n
        self.correct_initial: list[int] = []
        self.corrupted: dict[int, int] = {}
        self._waiting: dict[int, list[Process]] = {}
        self._wake: list[Process] = []
        self._decoded: dict[int, Vertex | None] = {}
        self._announced: set[int] = set()
        self.broadcast_log: list[tuple[int, int, int, int]] = []
        self.horizon_time: int | None = None
        self.stop_round = cfg.horizon_rounds + (4 if cfg.drain else 0)
        self.decode_errors = 0
        self._tick_armed = False
        self.controller = None
        self._started = False
        self._txpad = b"\0" * (cfg.tx_bytes - 8)
        for b in cfg.behaviors:
            self.inject_byzantine(b)

    # -- setup ---------------------------------------------------------------

    def inject_byzantine(self, spec: BehaviorSpec) -> None:
        if self._started:
            raise RuntimeError("behaviors must be injected before the run starts")
        if spec.process in self.behaviors:
            raise ConfigError(f"behaviors: process {spec.process} already corrupted")
        if len(self.behaviors) + 1 > self.f:
            raise ConfigError(f"behaviors: corruption budget exceeded (f={self.f})")
        if spec.kind not in BEHAVIORS or not 0 <= spec.process < self.n:
            raise ConfigError(f"behaviors: invalid behavior {spec!r}")
        self.behaviors[spec.process] = spec

    def _build(self) -> None:
        net = self.net
        n = self.n
        self.correct_initial = [p for p in range(n) if p not in self.behaviors]
        tracked = 0
        for p in self.correct_initial:
            tracked |= 1 << p
        adaptive = [p for p, b in self.behaviors.items() if b.kind == "AdaptiveCorruptAt"]
        for p in adaptive:
            tracked &= ~(1 << p)
        net.set_tracked(tracked)
        for p in range(n):
            spec = self.behaviors.get(p)
            if spec is None or spec.kind == "AdaptiveCorruptAt":
                self.procs[p] = Process(self, p)
            elif spec.kind == "Silent":
                net.set_mode(p, _kernel.MODE_SILENT)
                self.coin.add_eager(p)
            else:
                self.procs[p] = ByzantineProcess(self, p, spec)
                self.coin.add_eager(p)
                if spec.kind == "Withhold":
                    mask = 0
                    for t in spec.targets:
                        mask |= 1 << t
                    net.set_withhold(p, mask)
        for p in adaptive:
            net.add_timer(self.behaviors[p].time, _TOKEN_CORRUPT + p)
        self.controller = CONTROLLERS[self.cfg.model](self, self.cfg.model_params)
        self.controller.setup()

    # -- hooks from processes ---------------------------------------------------

    def _need_block(self, proc: Process, rnd: int) -> None:
        cfg = self.cfg
        seq = proc.orderer.next_seq
        if rnd <= cfg.horizon_rounds:
            me = proc.me
            pad = self._txpad
            txs = tuple(struct.pack("<HIH", me, seq, i) + pad for i in range(cfg.batch_size))
            proc.orderer.a_bcast(Block(me, seq, txs), seq)
            if proc.honest:
                self.broadcast_log.append((me, seq, rnd, self.net.now))
                self.records.append(("a_bcast", self.net.now, me, seq, rnd, len(txs)))
            return
        if self.horizon_time is None and proc.honest:
            self.horizon_time = self.net.now
            self.records.append(("drain", self.net.now, self.stop_round))
        if rnd <= self.stop_round:
            proc.orderer.a_bcast(Block(proc.me, seq, ()), seq)

    def on_vertex_broadcast(self, src: int, rnd: int) -> None:
        self.controller.on_broadcast(src, rnd)
        self._arm_tick()

    def wait_for_coin(self, w: int, proc: Process) -> None:
        lst = self._waiting.setdefault(w, [])
        if proc not in lst:
            lst.append(proc)

    def _on_reveal(self, w: int, leader: int) -> None:
        self.records.append(("leader", self.net.now, w, leader))
        self._wake.extend(self._waiting.pop(w, ()))

    def on_delivered(self, proc: Process, delivered: list[Delivered]) -> None:
        pass

    # -- scheduling view ----------------------------------------------------------

    def schedule(self, src: int, dst: int, tag_src: int, tag_round: int) -> int:
        """What the model would assign to a message sent now: its arrival
        time, or under RandomOrdering its insertion index into M(t).

        This consumes a draw from the run's random stream, so use it only on
        simulations built for inspection.
        """
        self._ensure_started()
        if self.cfg.model == "RandomOrdering":
            return self.net.draw() % (self.net.backlog + 1)
        return self.net.now + self.net.sample_delay(src, dst, tag_src, tag_round)

    # -- main loop ----------------------------------------------------------------

    def _arm_tick(self) -> None:
        tick = self.controller.tick
        if tick and not self._tick_armed:
            self._tick_armed = True
            self.net.add_timer(self.net.now + tick, _TOKEN_TICK)

    def _on_timer(self, token: int) -> None:
        if token == _TOKEN_TICK:
            self._tick_armed = False
            self.controller.on_tick()
            if self.net.pending > 0:
                self._arm_tick()
        elif token >= _TOKEN_CORRUPT:
            self._corrupt(token - _TOKEN_CORRUPT)

    def _corrupt(self, p: int) -> None:
        proc = self.procs[p]
        if proc is None or not proc.active:
            return
        proc.active = False
        self.corrupted[p] = self.net.now
        self.net.set_mode(p, _kernel.MODE_SILENT)
        self.records.append(("corrupt", self.net.now, p))
        self.coin.add_eager(p)

    def _vertex(self, pid: int) -> Vertex | None:
        try:
            return self._decoded[pid]
        except KeyError:
            pass
        try:
            v = decode_vertex(self.net.payload(pid))
        except DecodeError:
            v = None
            self.decode_errors += 1
        self._decoded[pid] = v
        return v

    def _ensure_started(self) -> None:
        if not self._started:
            self._started = True
            self._build()

    def correct_forever(self) -> list[int]:
        return [p for p in self.correct_initial if p not in self.corrupted]

    def _converged(self) -> bool:
        procs = [self.procs[p] for p in self.correct_forever()]
        if not procs:
            return True
        lens = {len(p.orderer.log) for p in procs}
        if len(lens) != 1:
            return False
        live = set(self.correct_forever())
        want = {(me, seq) for me, seq, _r, _t in self.broadcast_log if me in live}
        got = {(d.block.proposer, d.block.seq) for d in procs[0].orderer.log if d.block.txs}
        return want <= got

    def run(self) -> RunResult:
        self._ensure_started()
        cfg = self.cfg
        net = self.net
        procs = self.procs
        rec = self.records.append
        EV_DELIVER = _kernel.EV_DELIVER
        decoded = self._decoded
        for p in procs:
            if p is not None:
                p.progress()
        cap = cfg.horizon_rounds + cfg.max_extra_rounds
        converged = False
        while True:
            ev = net.next_event()
            if ev is None:
                converged = self._converged()
                if converged or not cfg.drain or self.stop_round >= cap:
                    break
                self.stop_round += 4
                rec(("drain", net.now, self.stop_round))
                for p in procs:
                    if p is not None and p.active:
                        p.progress()
                self._flush_wake()
                continue
            if ev[0] == EV_DELIVER:
                _, to, ts, tr, pid = ev
                proc = procs[to]
                if proc is None or not proc.active:
                    continue
                v = decoded.get(pid, _MISSING)
                if v is _MISSING:
                    v = self._vertex(pid)
                if proc.honest:
                    if pid not in self._announced:
                        self._announced.add(pid)
                        if v is None:
                            rec(("payload", net.now, pid, ts, tr, (), (), -1, -1, -1))
                        else:
                            rec(("payload", net.now, pid, ts, tr, tuple(sorted(v.strong_edges)),
                                 tuple(sorted(v.weak_edges)), v.block.proposer, v.block.seq, len(v.block.txs)))
                    rec(("r_deliver", net.now, to, ts, tr, pid))
                if v is not None:
                    proc.on_deliver(v, ts, tr)
            else:
                self._on_timer(ev[1])
            if self._wake:
                self._flush_wake()
        return self._result(converged)

    def _flush_wake(self) -> None:
        while self._wake:
            p = self._wake.pop(0)
            if p.active:
                p.run_waves()

    def _result(self, converged: bool) -> RunResult:
        net = self.net
        cfg = self.cfg
        correct = tuple(self.correct_forever())
        summary = {
            "converged": converged,
            "timeUnit": net.max_delay,
            "stopRound": self.stop_round,
            "horizonTime": self.horizon_time,
            "msgsSent": list(net.msgs_sent),
            "bytesSent": list(net.bytes_sent),
            "misbehavior": list(net.misbehavior()),
            "dropped": net.dropped,
            "processed": net.processed,
            "decodeErrors": self.decode_errors,
            "builderDropped": [p.builder.dropped if p is not None else 0 for p in self.procs],
            "rounds": [p.builder.r if p is not None else 0 for p in self.procs],
        }
        self.records.append(("end", net.now, summary))
        header = {"config": cfg.to_dict(), "correct": list(self.correct_initial),
                  "ticksPerUnit": TICKS_PER_UNIT}
        trace = Trace(header, self.records)
        logs = {p: self.procs[p].orderer.log for p in range(self.n)
                if self.procs[p] is not None and self.procs[p].honest}
        return RunResult(cfg, trace, logs, correct,
                         tuple(sorted(b for b, s in self.behaviors.items() if s.kind != "AdaptiveCorruptAt")),
                         dict(self.corrupted), list(self.broadcast_log), converged,
                         self.horizon_time, net.max_delay, self.stop_round, bool(net.compiled))


def run(cfg: SimConfig, network_cls=None) -> RunResult:
    """Execute one seeded run to quiescence."""
    return Simulation(cfg, network_cls).run()
