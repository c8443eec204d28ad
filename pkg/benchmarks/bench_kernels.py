"""Compare the numba and pure-numpy kernel paths.

Run with ``python3 benchmarks/bench_kernels.py [--rows N] [--dim D] [--repeat R]``.
Prints the best-of-R wall time per kernel and path, the speed-up, and a check
that both paths agree on the benchmark inputs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from evextract import _kernels


def _best(fn, repeat: int) -> float:
    fn()  # warm-up (includes numba compilation on first call)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _token_buffer(n_tokens: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    lengths = rng.integers(2, 12, size=n_tokens)
    offsets = np.zeros(n_tokens + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(lengths)
    buf = rng.integers(97, 123, size=int(offsets[-1]), dtype=np.uint8)
    return buf, offsets


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=20000, help="index rows")
    parser.add_argument("--dim", type=int, default=768)
    parser.add_argument("--tokens", type=int, default=200000, help="tokens for the hashing kernel")
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if not _kernels.HAVE_NUMBA:
        print("numba is not importable; only the numpy path can be timed")
    rng = np.random.default_rng(args.seed)
    matrix = rng.standard_normal((args.rows, args.dim)).astype(np.float32)
    q = rng.standard_normal(args.dim).astype(np.float32)
    buf, offsets = _token_buffer(args.tokens, rng)

    cases = {
        "hash_accumulate": ((buf, offsets, args.dim), np.array_equal),
        "dot_rows": ((matrix, q), lambda a, b: np.allclose(a, b, rtol=1e-12, atol=1e-9)),
        "sqdist_rows": ((matrix, q), lambda a, b: np.allclose(a, b, rtol=1e-12, atol=1e-9)),
        "row_norms": ((matrix,), lambda a, b: np.allclose(a, b, rtol=1e-12, atol=1e-9)),
    }
    print(f"rows={args.rows} dim={args.dim} tokens={args.tokens} repeat={args.repeat}")
    print(f"{'kernel':<18}{'numpy ms':>11}{'numba ms':>11}{'speed-up':>10}  agree")
    for name, (call_args, agree) in cases.items():
        np_fn = getattr(_kernels, f"{name}_numpy")
        t_np = _best(lambda: np_fn(*call_args), args.repeat)
        if _kernels.HAVE_NUMBA:
            nb_fn = getattr(_kernels, f"{name}_numba")
            t_nb = _best(lambda: nb_fn(*call_args), args.repeat)
            ok = agree(np_fn(*call_args), nb_fn(*call_args))
            print(f"{name:<18}{t_np * 1e3:>11.2f}{t_nb * 1e3:>11.2f}{t_np / t_nb:>9.1f}x  {ok}")
        else:
            print(f"{name:<18}{t_np * 1e3:>11.2f}{'-':>11}{'-':>10}  -")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
