"""Compare the compiled and pure-Python kernels.

    python benchmarks/bench_kernels.py [--size-mb 1] [--pairs 2000]

Checksum throughput matters for checkpoint and feature-blob I/O; alignment
throughput matters for scoring whole test splits.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from te2sl.kernels import compiled_kernels, python_kernels


def _time(fn, *args, repeat: int = 3) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size-mb", type=float, default=1.0)
    ap.add_argument("--pairs", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    blob = rng.integers(0, 256, size=int(args.size_mb * 2**20), dtype=np.uint8).tobytes()
    pairs = [
        (rng.integers(0, 64, size=rng.integers(4, 11)).tolist(), rng.integers(0, 64, size=rng.integers(3, 13)).tolist())
        for _ in range(args.pairs)
    ]

    def align_all(kern):
        for r, h in pairs:
            kern.edit_counts(r, h)

    backends = [("python", python_kernels)]
    if compiled_kernels is not None:
        backends.append(("cython", compiled_kernels))
    else:
        print("compiled kernels unavailable; timing the Python fallback only")

    results = {}
    for name, kern in backends:
        t_hash = _time(kern.fnv1a64, blob, repeat=1 if name == "python" else 3)
        t_align = _time(align_all, kern)
        results[name] = (t_hash, t_align)
        print(f"{name:7s} fnv1a64 {args.size_mb:.1f} MB: {t_hash * 1e3:9.2f} ms   "
              f"edit_counts x{args.pairs}: {t_align * 1e3:9.2f} ms")
    if len(results) == 2:
        (ph, pa), (ch, ca) = results["python"], results["cython"]
        print(f"speedup: checksum {ph / ch:.0f}x, alignment {pa / ca:.1f}x")
        assert python_kernels.fnv1a64(blob[:4096]) == compiled_kernels.fnv1a64(blob[:4096])
        assert all(python_kernels.edit_counts(r, h) == compiled_kernels.edit_counts(r, h) for r, h in pairs[:200])


if __name__ == "__main__":
    main()
