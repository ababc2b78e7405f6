"""Compare the compiled and numpy backends of the yearly spectrum update.

Times a full trajectory (spin-up plus the observed years), the spin-up
alone and a single year step for each shipped configuration, and checks that both backends
produce the same catches.

    python3 benchmarks/bench_kernels.py [--repeats 5] [--csv out.csv]
"""

import argparse
import statistics
import sys
import time

import numpy as np

from sscalib import kernels, toy_models
from sscalib.inference import simulate, static_params


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), statistics.median(times)


def bench(name, backend, repeats):
    shipped = toy_models.load_shipped(name, backend=backend)
    model, layout, x = shipped.model, shipped.layout, shipped.truth
    states, catches = simulate(model, layout, x)
    static = static_params(layout, x)
    row = layout.phi_matrix(x)[0]

    def trajectory():
        simulate(model, layout, x)

    def one_year():
        model.step_year(states[0], row, static)

    def spin_up():
        model.spin_up(static.phi0, static)

    rows = [(name, backend, "trajectory", *best_of(trajectory, repeats)),
            (name, backend, "spin-up", *best_of(spin_up, repeats)),
            (name, backend, "year", *best_of(one_year, max(repeats, 20)))]
    return rows, catches


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--configs", nargs="+", default=["toy3", "celtic17"])
    ap.add_argument("--csv", help="also write the table to this file")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled backend not built; only the numpy fallback is timed", file=sys.stderr)
    table = []
    for name in args.configs:
        outputs = {}
        for backend in backends:
            rows, catches = bench(name, backend, args.repeats)
            table.extend(rows)
            outputs[backend] = catches
        if len(outputs) == 2:
            (c1, s1), (c2, s2) = outputs.values()
            diff = max(np.max(np.abs(c1 - c2) / np.maximum(np.abs(c1), 1e-300)),
                       np.max(np.abs(s1 - s2) / np.maximum(np.abs(s1), 1e-300)))
            print(f"{name}: max relative difference between backends {diff:.2e}")

    print(f"{'config':<10} {'backend':<9} {'case':<11} {'best s':>10} {'median s':>10}")
    for cfg, backend, case, best, med in table:
        print(f"{cfg:<10} {backend:<9} {case:<11} {best:>10.4f} {med:>10.4f}")
    for name in args.configs:
        t = {(b, c): best for cfg, b, c, best, _ in table if cfg == name}
        for case in ("trajectory", "spin-up", "year"):
            if ("compiled", case) in t and ("python", case) in t:
                print(f"{name} {case}: compiled is {t['python', case] / t['compiled', case]:.1f}x "
                      f"faster")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("config,backend,case,best_s,median_s\n")
            fh.writelines(",".join(map(str, row)) + "\n" for row in table)


if __name__ == "__main__":
    main()
