"""Time the compiled path kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--paths 20000] [--steps 64]

Prints nanoseconds per path-step for each kernel and backend, plus the
speedup. Both backends draw the same counter-based normals, so the
results are also compared.
"""

import argparse
import math
import time

import numpy as np

from killedsde.htransform import (make_double_barrier_h, make_parabolic_h, make_single_barrier_h,
                                  make_transient_h)
from killedsde.models import bs_log_model, bs_log_price_model, hlv_model
from killedsde.rng import RngSpec
from killedsde.schemes import BemKernel, BridgeKernel, EulerKernel, StepGrid, _compiled


def cases(N):
    grid = StepGrid(1.0, N)
    l1, l2, r2 = math.log(0.8), math.log(0.85), math.log(1.25)
    bs1, bs2 = bs_log_model(0.2, l1), bs_log_model(0.2, l2, r2)
    d1, d2 = bs_log_price_model(0.2, l1), bs_log_price_model(0.2, l2, r2)
    hl = hlv_model(0.2, 0.5, 0.85, 1.25)
    yield "bem exp", lambda b: BemKernel(bs1, make_single_barrier_h(l1), grid, 0.0, backend=b)
    yield "bem linear", lambda b: BemKernel(bs1, make_transient_h(l1), grid, 0.0, backend=b)
    yield "bem quartic", lambda b: BemKernel(bs2, make_double_barrier_h(0.2, l2, r2), grid, 0.0, backend=b)
    yield "bem hlv parabolic", lambda b: BemKernel(hl, make_parabolic_h(0.85, 1.25), grid, 1.0, backend=b)
    yield "euler double", lambda b: EulerKernel(d2, grid, d2.domain, 0.0, backend=b)
    yield "bridge single", lambda b: BridgeKernel(d1, grid, d1.domain, 0.0, backend=b)
    yield "bridge double", lambda b: BridgeKernel(d2, grid, d2.domain, 0.0, backend=b)


def timed(kernel, key, n_paths):
    t0 = time.perf_counter()
    out = kernel(key, 0, n_paths)
    return time.perf_counter() - t0, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--steps", type=int, default=64)
    args = ap.parse_args()
    if _compiled is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    key = RngSpec(1).key
    steps = args.paths * args.steps
    print(f"{'kernel':<20}{'compiled ns/step':>18}{'python ns/step':>16}{'speedup':>9}{'max |dx|':>11}")
    for name, make in cases(args.steps):
        tc, oc = timed(make("compiled"), key, args.paths)
        tp, op = timed(make("python"), key, args.paths)
        live = np.isfinite(oc.terminal) & np.isfinite(op.terminal)
        dx = float(np.max(np.abs(oc.terminal[live] - op.terminal[live]))) if live.any() else 0.0
        print(f"{name:<20}{1e9 * tc / steps:>18.1f}{1e9 * tp / steps:>16.1f}{tp / tc:>9.1f}{dx:>11.1e}")


if __name__ == "__main__":
    main()
