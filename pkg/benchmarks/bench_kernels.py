"""Time the numba kernels against their numpy fallbacks on training-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 20]

Also times one end-to-end Boston run under each backend (the backend flag is
read at import time, so that part runs in subprocesses).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from dmls2r import _kernels as K

END_TO_END = (
    "import time; from dmls2r import dataio, bench; "
    "ds, _ = dataio.prepare(None, dataio.load_schema('boston')); t = time.perf_counter(); "
    "r = bench.run_experiment(ds, 50, 0, 'dml-s2r', n_unlabeled=200); "
    "print(f'{time.perf_counter() - t:.3f} {r.mae!r}')"
)


def cases(rng):
    # selection: 50 anchors x 1000 unlabeled scores, k=5
    scores = rng.random((50, 1000))
    # set loss: 50 anchors x 5 distances, positive-set parameters
    d = rng.uniform(0, 2, size=(50, 5))
    # k-NN: 100 train rows, 20,000 queries, 81 features
    tx, ty, q = rng.random((100, 81)), rng.random(100), rng.random((20000, 81))
    return {
        "select_topk_batch (50x1000, k=5)": (K.select_topk_batch_numpy, K.select_topk_batch_numba, (scores, 5)),
        "set_loss_grad (50x5)": (K.set_loss_grad_numpy, K.set_loss_grad_numba, (d, 10.0, 1.0, 0.6, 1.0, 0.6)),
        "knn_predict (100 train, 20000 queries, k=3)": (K.knn_predict_numpy, K.knn_predict_numba, (tx, ty, q, 3)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':46s}{'numpy ms':>12s}{'numba ms':>12s}{'speedup':>10s}")
    for name, (f_np, f_nb, a) in cases(rng).items():
        f_nb(*a)  # compile outside the timing
        t_np = min(timeit.repeat(lambda: f_np(*a), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*a), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:46s}{t_np:12.3f}{t_nb:12.3f}{t_np / t_nb:10.1f}x")

    if args.skip_end_to_end:
        return
    print("\nend to end: boston |S|=50, seed 0, 30 cycles")
    for flag in ("1", "0"):
        env = dict(os.environ, DMLS2R_NO_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True,
                             check=True).stdout.split()
        print(f"  {'numpy' if flag == '1' else 'numba':6s} {float(out[0]):8.3f}s  MAE {out[1]}")


if __name__ == "__main__":
    main()
