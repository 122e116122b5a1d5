"""Backend benchmark: numba-jitted kernels vs the pure-numpy fallback.

    python -m tactile_placement.bench --steps 500 --compare

Runs the physics control-step loop (the hot path of training) under the
current backend and reports steps/second; --compare re-runs the same
workload in a subprocess with TPL_BACKEND=numpy and prints the speedup.
The two backends execute identical function bodies, so the trace hash must
match.
"""

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time

import numpy as np


def run_workload(steps: int, seed: int = 0):
    """Deterministic workload: random joint targets driving the hand around
    a settling sphere. Returns (steps/s, trace-hash, compile_s)."""
    from .backend import BACKEND
    from .experiments import TENNIS
    from .hand import apply_coupling, build_hand
    from .objects import make_object
    from .sim import Simulation

    model = build_hand()
    sim = Simulation(model, make_object(TENNIS))
    state = sim.initial_state([0.0, 0.075, 0.055])
    rng = np.random.default_rng(seed)
    n_act = model.actuated_count

    t0 = time.perf_counter()
    targets = apply_coupling(np.zeros(n_act), model)
    state, *_ = sim.step(state, targets)
    compile_s = time.perf_counter() - t0

    hasher = hashlib.sha256()
    t0 = time.perf_counter()
    for _ in range(steps):
        delta = rng.uniform(-0.05, 0.05, n_act)
        act = np.clip(
            state.hand.positions[model.actuated] + delta,
            model.lo[model.actuated],
            model.hi[model.actuated],
        )
        state, wrenches, _, _ = sim.step(state, apply_coupling(act, model))
        hasher.update(np.round(state.object_pos, 12).tobytes())
    elapsed = time.perf_counter() - t0
    return {
        "backend": BACKEND,
        "steps": steps,
        "steps_per_s": steps / elapsed,
        "elapsed_s": elapsed,
        "compile_s": compile_s,
        "trace_hash": hasher.hexdigest()[:16],
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="python -m tactile_placement.bench")
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--compare", action="store_true",
                        help="also run the pure-numpy fallback in a subprocess")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    args = parser.parse_args(argv)

    res = run_workload(args.steps, args.seed)
    results = [res]
    if args.compare:
        env = dict(os.environ, TPL_BACKEND="numpy")
        out = subprocess.run(
            [sys.executable, "-m", "tactile_placement.bench",
             "--steps", str(args.steps), "--seed", str(args.seed), "--json"],
            env=env, capture_output=True, text=True, check=True,
        )
        results.append(json.loads(out.stdout))

    if args.json:
        print(json.dumps(res))
        return 0

    for r in results:
        print(
            f"{r['backend']:>6}: {r['steps_per_s']:8.1f} control steps/s "
            f"({r['elapsed_s']:.2f}s for {r['steps']}; first-call {r['compile_s']:.2f}s) "
            f"trace {r['trace_hash']}"
        )
    if len(results) == 2:
        a, b = results
        match = "traces match" if a["trace_hash"] == b["trace_hash"] else "TRACES DIFFER"
        print(f"speedup: {a['steps_per_s'] / b['steps_per_s']:.1f}x ({match})")
        if a["trace_hash"] != b["trace_hash"]:
            return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
