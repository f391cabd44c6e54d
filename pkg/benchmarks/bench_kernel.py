"""Compare the compiled kernel with the pure-Python fallback.

Micro-benchmarks call each kernel function directly; the end-to-end
benchmark runs a hardened corpus program in a child process per backend.
"""

import argparse
import os
import random
import subprocess
import sys
import timeit

from thumbguard.passes import HardenMode
from thumbguard.sim.kernel import backends
from thumbguard.sim.mpu import build_layout_config

SIM_SNIPPET = """
import time
from thumbguard.harness.corpus import get_benchmark
from thumbguard.harness.pipeline import build_variant
from thumbguard.sim import Machine, load_program, BACKEND
b = get_benchmark({name!r})
p = build_variant(b.program(), "full", "silhouette")
w = b.workload()
t = time.perf_counter()
for _ in range({repeat}):
    Machine(load_program(p), inputs=w.inputs()).run()
print(BACKEND, time.perf_counter() - t)
"""


def micro(number: int) -> dict:
    table = build_layout_config(mode=HardenMode.SILHOUETTE).table
    rng = random.Random(1)
    addrs = [rng.choice((0x100, 0x20001000, 0x20201000, 0x20400010, 0xE000ED94, 0x60000000))
             for _ in range(256)]
    out = {}
    for name, mod in backends().items():
        def mpu():
            for a in addrs:
                mod.mpu_check(table, 1, a, 4, 1, 0)

        def cond():
            for k in range(15):
                mod.cond_passed(k, 1, 0, 1, 0)

        def adc():
            mod.add_with_carry(0xFFFFFFFF, 1, 0)
            mod.add_with_carry(0x7FFFFFFF, 1, 0)
        out[name] = {f.__name__: min(timeit.repeat(f, number=number, repeat=3)) for f in (mpu, cond, adc)}
    return out


def end_to_end(name: str, repeat: int) -> dict:
    out = {}
    for backend in backends():
        env = dict(os.environ)
        if backend == "python":
            env["THUMBGUARD_PURE"] = "1"
        else:
            env.pop("THUMBGUARD_PURE", None)
        res = subprocess.run([sys.executable, "-c", SIM_SNIPPET.format(name=name, repeat=repeat)],
                             env=env, capture_output=True, text=True, check=True)
        label, seconds = res.stdout.split()
        out[label] = float(seconds)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--number", type=int, default=2000, help="micro-benchmark iterations")
    ap.add_argument("--program", default="bubblesort")
    ap.add_argument("--repeat", type=int, default=20, help="simulations per backend")
    args = ap.parse_args()
    results = micro(args.number)
    names = list(results)
    print(f"{'kernel':<8}" + "".join(f"{n:>12}" for n in names) + (f"{'speedup':>10}" if len(names) > 1 else ""))
    for fn in ("mpu", "cond", "adc"):
        row = [results[n][fn] for n in names]
        line = f"{fn:<8}" + "".join(f"{v:>11.4f}s" for v in row)
        if len(names) > 1:
            line += f"{row[0] / row[1]:>9.2f}x"
        print(line)
    sims = end_to_end(args.program, args.repeat)
    print(f"simulate {args.program} x{args.repeat}: " +
          ", ".join(f"{k}={v:.3f}s" for k, v in sims.items()))


if __name__ == "__main__":
    main()
