import os
import subprocess
import sys

import pytest

from dagbab import _kernel
from dagbab.simnet import MODELS, SimConfig, run

COMPILED = _kernel.compiled_network()
needs_ext = pytest.mark.skipif(COMPILED is None, reason="compiled kernel not built")

BEHAVIOR_SETS = [
    [],
    [{"kind": "Silent", "process": 3}],
    [{"kind": "Equivocate", "process": 0}],
    [{"kind": "MalformedEdges", "process": 1}],
    [{"kind": "Withhold", "process": 2, "targets": [0]}],
    [{"kind": "AdaptiveCorruptAt", "process": 3, "time": 6}],
]


@needs_ext
@pytest.mark.parametrize("model", MODELS)
@pytest.mark.parametrize("behaviors", range(len(BEHAVIOR_SETS)))
def test_compiled_and_python_kernels_agree(model, behaviors):
    cfg = SimConfig.from_dict({"n": 4, "f": 1, "seed": 11 + behaviors, "model": model,
                               "behaviors": BEHAVIOR_SETS[behaviors], "horizonRounds": 12})
    fast = run(cfg, COMPILED)
    slow = run(cfg, _kernel.PyRbcNetwork)
    assert fast.kernel_compiled and not slow.kernel_compiled
    assert fast.trace_bytes() == slow.trace_bytes()


@needs_ext
def test_kernels_agree_at_n7():
    cfg = SimConfig.from_dict({"n": 7, "f": 2, "seed": 99, "model": "RandomPartialControl",
                               "behaviors": [{"kind": "Equivocate", "process": 6}],
                               "horizonRounds": 16})
    assert run(cfg, COMPILED).trace_bytes() == run(cfg, _kernel.PyRbcNetwork).trace_bytes()


@needs_ext
def test_raw_event_streams_agree():
    for ordering in (False, True):
        nets = [cls(4, 1, 5, 1000, 2000) for cls in (COMPILED, _kernel.PyRbcNetwork)]
        streams = []
        for net in nets:
            if ordering:
                net.set_ordering(1, 20)
            net.set_link(0, 3, 0, 10)
            net.slow_tag(1, 1, 777)
            for s in range(4):
                net.r_bcast(s, 1, net.register_payload(bytes([s])))
            evs = []
            while (ev := net.next_event()) is not None:
                evs.append((net.now, ev))
            streams.append((evs, list(net.msgs_sent), list(net.bytes_sent), net.max_delay))
        assert streams[0] == streams[1]


def test_environment_forces_python_kernel():
    code = "from dagbab import _kernel; print(_kernel.COMPILED, _kernel.RbcNetwork.compiled)"
    env = dict(os.environ, DAGBAB_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "False"]


def test_default_selection_prefers_compiled():
    assert _kernel.COMPILED == (COMPILED is not None and os.environ.get("DAGBAB_PURE_PYTHON") != "1")
