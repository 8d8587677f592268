"""Time the numba and numpy paths of every hot kernel on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

Numba timings exclude compilation (one warm-up call). Each row also checks
that both paths agree.
"""

import argparse
import time

import numpy as np

from chillerkit import _accel, kernels
from chillerkit.dispatch import _group_table, _groups, default_plant


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(rng):
    z = 1500 + 300 * rng.standard_normal(200_000)
    yield "kalman_fold (200k samples)", kernels.kalman_fold_numpy, kernels.kalman_fold_numba, (z, 1.0, 1.0, 1.0, 1.0, z[0], 1.0)

    pts = rng.standard_normal((100_000, 3))
    cen = rng.standard_normal((4, 3))
    yield "nearest_centroid (100k x 4)", kernels.nearest_centroid_numpy, kernels.nearest_centroid_numba, (pts, cen)

    plant = default_plant()
    tables = [(t[0], t[1]) for t in (_group_table(k[0], k[1], k[2], 0.01, len(idx)) for k, idx in _groups(plant))]
    yield "bruteforce_search (4 chillers)", kernels.bruteforce_search_numpy, kernels.bruteforce_search_numba, (tables, 2267.2)

    caps = np.array([c.capacity for c in plant.chillers])
    coeffs = np.array([c.coeffs for c in plant.chillers])
    plr = rng.uniform(0, 1, (5000, 4))
    yield "ga_score (5000 genomes)", kernels.ga_score_numpy, kernels.ga_score_numba, (plr, caps, coeffs, 2267.2, 1.0, 0.5, 4000.0)


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=1e-12, atol=1e-9)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not importable (or CHILLERKIT_NUMBA=0); nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'numpy s':>10s} {'numba s':>10s} {'speedup':>8s}  agree")
    for name, f_np, f_nb, a in cases(rng):
        f_nb(*a)  # compile
        t_np, r_np = best_of(lambda: f_np(*a), args.repeat)
        t_nb, r_nb = best_of(lambda: f_nb(*a), args.repeat)
        print(f"{name:34s} {t_np:10.5f} {t_nb:10.5f} {t_np / t_nb:8.1f}  {same(r_np, r_nb)}")


if __name__ == "__main__":
    main()
