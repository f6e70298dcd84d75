"""Compare the compiled projection kernel with its pure-Python twin.

Times batched level-set distances (the per-draw hot loop of the corrected
bootstrap) over a few cone sizes and checks that both kernels agree.

    python3 benchmarks/bench_kernels.py --draws 2000 --sizes 2,4,8,12
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from elmax._backend import compiled_kernel, python_kernel


def random_problem(J: int, draws: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((J, J))
    S = A @ A.T / J + 0.3 * np.eye(J)
    Y = rng.standard_normal((draws, J)) @ np.linalg.cholesky(S).T
    return Y, S


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--draws", type=int, default=2000, help="projections per timing run")
    p.add_argument("--sizes", default="2,4,8,12", help="comma-separated active-set sizes")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    if compiled_kernel is None:
        print("compiled kernel unavailable (not built or ELMAX_PURE_PYTHON set); timing Python only")
    print(f"{'J':>3} {'python us/draw':>15} {'compiled us/draw':>17} {'speedup':>8} {'max abs diff':>13}")
    for J in (int(s) for s in args.sizes.split(",") if s):
        Y, S = random_problem(J, args.draws, args.seed + J)
        t_py = best_of(lambda: python_kernel.levelset_distances(Y, S), args.repeat)
        py = python_kernel.levelset_distances(Y, S)
        if compiled_kernel is None:
            print(f"{J:>3} {1e6 * t_py / args.draws:>15.2f} {'-':>17} {'-':>8} {'-':>13}")
            continue
        t_c = best_of(lambda: compiled_kernel.levelset_distances(Y, S), args.repeat)
        diff = float(np.max(np.abs(compiled_kernel.levelset_distances(Y, S) - py)))
        print(
            f"{J:>3} {1e6 * t_py / args.draws:>15.2f} {1e6 * t_c / args.draws:>17.2f} "
            f"{t_py / t_c:>7.1f}x {diff:>13.1e}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
