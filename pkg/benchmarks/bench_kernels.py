"""Compare the compiled and pure-numpy rendering kernels.

    python3 benchmarks/bench_kernels.py [--rays 8192] [--samples 64] [--res 32]

Checks that both backends agree before timing them.
"""
import argparse
import time

import numpy as np

from snapfield import _backend
from snapfield.radiance_field import (RadianceGrid, SamplingConfig, render_rays,
                                       render_rays_backward)


def _inputs(n_rays, res, seed=0):
    rng = np.random.default_rng(seed)
    grid = RadianceGrid.create((res,) * 3, (-1, -1, -1), (1, 1, 1), sh_degree=2)
    grid.density_raw[:] = rng.normal(0.0, 2.0, grid.density_raw.shape)
    grid.sh_coeffs[:] = rng.normal(0.0, 0.5, grid.sh_coeffs.shape)
    origins = rng.normal(0.0, 0.1, (n_rays, 3)) + np.array([0.0, 0.0, -4.0])
    dirs = rng.normal(0.0, 0.15, (n_rays, 3)) + np.array([0.0, 0.0, 1.0])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    grad = rng.normal(size=(n_rays, 3))
    return grid, origins, dirs, grad


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def run(n_rays=8192, n_samples=64, res=32, repeat=3):
    grid, o, d, g = _inputs(n_rays, res)
    cfg = SamplingConfig(2.0, 6.0, n_samples)
    results = {}
    for name in ("cython", "python"):
        try:
            _backend.get(name)
        except ImportError:
            print(f"{name:7s} unavailable")
            continue
        colors, _ = render_rays(grid, o, d, cfg, backend=name)
        results[name] = (colors, render_rays_backward(grid, o, d, cfg, g, backend=name).density_raw)
        fwd = _best(lambda: render_rays(grid, o, d, cfg, backend=name), repeat)
        bwd = _best(lambda: render_rays_backward(grid, o, d, cfg, g, backend=name), repeat)
        bwd_ray = _best(lambda: render_rays_backward(grid, o, d, cfg, g, ray_grads=True,
                                                     backend=name), repeat)
        print(f"{name:7s} forward {fwd * 1e3:8.1f} ms   backward {bwd * 1e3:8.1f} ms   "
              f"backward+ray grads {bwd_ray * 1e3:8.1f} ms")
    if len(results) == 2:
        (c1, g1), (c2, g2) = results.values()
        print(f"max |color diff| {np.max(np.abs(c1 - c2)):.2e}   "
              f"max |grad diff| {np.max(np.abs(g1 - g2)):.2e}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rays", type=int, default=8192)
    ap.add_argument("--samples", type=int, default=64)
    ap.add_argument("--res", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args()
    print(f"{a.rays} rays x {a.samples} samples, {a.res}^3 grid, SH degree 2, "
          f"selected backend: {_backend.NAME}")
    run(a.rays, a.samples, a.res, a.repeat)
