"""Compare the compiled network kernel with its pure-Python twin.

Two workloads: a raw Bracha flood (every process broadcasts R rounds with no
DAG logic on top) and full simulation runs.  Run with
``python benchmarks/bench_kernel.py [--repeat K]``.
"""
import argparse
import time

from dagbab import _kernel
from dagbab.simnet import SimConfig, run


def flood(cls, n, rounds):
    net = cls(n, (n - 1) // 3, 1, 1000, 2000)
    for r in range(1, rounds + 1):
        for s in range(n):
            net.r_bcast(s, r, net.register_payload(b"%d:%d" % (s, r)))
    events = 0
    while net.next_event() is not None:
        events += 1
    return events


def simulate(cls, n, seeds):
    for s in seeds:
        run(SimConfig.from_dict({"n": n, "f": (n - 1) // 3, "seed": s, "model": "RandomArrival",
                                 "horizonRounds": 40}), cls)


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    compiled = _kernel.compiled_network()
    if compiled is None:
        print("compiled kernel not built; only the pure-Python kernel is available")
    kernels = [("python", _kernel.PyRbcNetwork)] + ([("compiled", compiled)] if compiled else [])
    workloads = [
        ("flood n=4, 200 rounds", lambda cls: flood(cls, 4, 200)),
        ("flood n=10, 40 rounds", lambda cls: flood(cls, 10, 40)),
        ("simulate n=4, 5 seeds", lambda cls: simulate(cls, 4, range(5))),
        ("simulate n=7, 3 seeds", lambda cls: simulate(cls, 7, range(3))),
    ]
    print(f"{'workload':<26}" + "".join(f"{k:>12}" for k, _ in kernels) + ("     speedup" if compiled else ""))
    for name, fn in workloads:
        times = [best_of(lambda: fn(cls), args.repeat) for _, cls in kernels]
        row = f"{name:<26}" + "".join(f"{t * 1000:>10.1f}ms" for t in times)
        if compiled:
            row += f"{times[0] / times[1]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
