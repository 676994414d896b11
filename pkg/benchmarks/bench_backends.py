"""Benchmark the numba kernels against the pure-numpy fallback.

Times the two hot paths (pyramidal point refinement and exhaustive
template correlation) plus a composite per-frame tracking step, and
cross-checks that the backends agree numerically.

Usage: python benchmarks/bench_backends.py [--frames 200] [--points 100]
"""

from __future__ import annotations

import argparse
import time

import numpy as np
from scipy.ndimage import gaussian_filter

from thermoresp.kernels import numba_impl, numpy_impl


def make_scene(seed: int, shape=(120, 160)):
    rng = np.random.default_rng(seed)
    base = gaussian_filter(rng.normal(size=shape), 2.0)
    base = 150.0 * (base - base.min()) / np.ptp(base)
    nxt = np.roll(base, (1, 2), axis=(0, 1)) + gaussian_filter(rng.normal(size=shape), 2.0)
    return np.ascontiguousarray(base), np.ascontiguousarray(np.abs(nxt))


def time_fn(fn, repeats: int) -> float:
    fn()  # warm-up / JIT
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_lk(n_points: int, repeats: int):
    prev, nxt = make_scene(0)
    rng = np.random.default_rng(1)
    pts = np.ascontiguousarray(rng.uniform(20, 100, size=(n_points, 2)))
    guess = np.zeros((n_points, 2))

    def run(impl):
        return impl.lk_refine_level(prev, nxt, pts, guess.copy(), 5, 20, 0.01, 1e-4)

    t_np = time_fn(lambda: run(numpy_impl), repeats)
    t_nb = time_fn(lambda: run(numba_impl), repeats)
    d_np, ok_np = run(numpy_impl)
    d_nb, ok_nb = run(numba_impl)
    both = ok_np & ok_nb
    dev = float(np.abs(d_np[both] - d_nb[both]).max()) if both.any() else 0.0
    return t_np, t_nb, dev


def bench_ncc(repeats: int):
    prev, _ = make_scene(2)
    tmpl = np.ascontiguousarray(prev[50:65, 70:85])

    def run(impl):
        return impl.ncc_search(tmpl, prev, 77.0, 57.0, 20)

    t_np = time_fn(lambda: run(numpy_impl), repeats)
    t_nb = time_fn(lambda: run(numba_impl), repeats)
    r_np, r_nb = run(numpy_impl), run(numba_impl)
    dev = abs(r_np[2] - r_nb[2])
    assert (r_np[0], r_np[1]) == (r_nb[0], r_nb[1]), "backends disagree on the match"
    return t_np, t_nb, dev


def bench_track_step(n_frames: int):
    """Composite workload: one forward-backward grid step per frame pair."""
    results = {}
    for impl_name, impl in (("numpy", numpy_impl), ("numba", numba_impl)):
        prev, nxt = make_scene(3)
        rng = np.random.default_rng(4)
        grid = np.ascontiguousarray(
            np.column_stack([rng.uniform(60, 80, 100), rng.uniform(50, 70, 100)])
        )

        def step():
            fwd, _ = impl.lk_refine_level(prev, nxt, grid, np.zeros((100, 2)), 5, 20, 0.01, 1e-4)
            impl.lk_refine_level(nxt, prev, np.ascontiguousarray(fwd), np.zeros((100, 2)), 5, 20, 0.01, 1e-4)

        step()
        start = time.perf_counter()
        for _ in range(n_frames):
            step()
        results[impl_name] = (time.perf_counter() - start) / n_frames
    return results


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=200, help="frame pairs for the composite bench")
    ap.add_argument("--points", type=int, default=100, help="points per LK call")
    ap.add_argument("--repeats", type=int, default=50)
    args = ap.parse_args()

    print(f"{'kernel':<22}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}{'max |diff|':>12}")
    t_np, t_nb, dev = bench_lk(args.points, args.repeats)
    print(f"{'lk_refine_level':<22}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}"
          f"{t_np / t_nb:>8.1f}x{dev:>12.2e}")
    t_np, t_nb, dev = bench_ncc(args.repeats)
    print(f"{'ncc_search':<22}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}"
          f"{t_np / t_nb:>8.1f}x{dev:>12.2e}")
    comp = bench_track_step(args.frames)
    print(f"{'fb grid step/frame':<22}{comp['numpy'] * 1e3:>10.3f}{comp['numba'] * 1e3:>10.3f}"
          f"{comp['numpy'] / comp['numba']:>8.1f}x{'':>12}")


if __name__ == "__main__":
    main()
