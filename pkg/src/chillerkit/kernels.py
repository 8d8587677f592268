"""Hot numeric loops, each in a numba and a vectorised numpy flavour.

The public names (``kalman_fold``, ``nearest_centroid``, ``bruteforce_search``,
``ga_penalised_power``) dispatch on :data:`chillerkit._accel.USE_NUMBA`. The
``*_numba`` / ``*_numpy`` variants stay importable so tests and the benchmark
can drive both paths side by side.

Both flavours sum in the same association order so their results agree
bit-for-bit on the brute-force search (tie-breaking depends on it).
"""

import numpy as np

from . import _accel
from ._accel import njit


# --------------------------------------------------------------------------
# scalar Kalman recursion


@njit(cache=True)
def _kalman_fold_jit(z, a, h, q, r, x0, p0):
    n = z.shape[0]
    xs = np.empty(n)
    ps = np.empty(n)
    ks = np.empty(n)
    x = x0
    p = p0
    for i in range(n):
        x_prior = a * x
        p_prior = a * p * a + q
        k = p_prior * h / (h * p_prior * h + r)
        x = x_prior + k * (z[i] - h * x_prior)
        p = (1.0 - k * h) * p_prior
        xs[i] = x
        ps[i] = p
        ks[i] = k
    return xs, ps, ks


def kalman_fold_numpy(z, a, h, q, r, x0, p0):
    # a sequential fold has no vectorised form; this is the interpreter path
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    xs = np.empty(n)
    ps = np.empty(n)
    ks = np.empty(n)
    x, p = float(x0), float(p0)
    for i in range(n):
        x_prior = a * x
        p_prior = a * p * a + q
        k = p_prior * h / (h * p_prior * h + r)
        x = x_prior + k * (float(z[i]) - h * x_prior)
        p = (1.0 - k * h) * p_prior
        xs[i] = x
        ps[i] = p
        ks[i] = k
    return xs, ps, ks


def kalman_fold_numba(z, a, h, q, r, x0, p0):
    z = np.ascontiguousarray(z, dtype=np.float64)
    return _kalman_fold_jit(z, float(a), float(h), float(q), float(r), float(x0), float(p0))


def kalman_fold(z, a, h, q, r, x0, p0):
    """Run the filter over ``z``; returns (estimates, variances, gains)."""
    if _accel.USE_NUMBA:
        return kalman_fold_numba(z, a, h, q, r, x0, p0)
    return kalman_fold_numpy(z, a, h, q, r, x0, p0)


# --------------------------------------------------------------------------
# nearest centroid


@njit(cache=True)
def _nearest_centroid_jit(points, centroids):
    n, d = points.shape
    k = centroids.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for i in range(n):
        best = np.inf
        arg = 0
        for j in range(k):
            s = 0.0
            for m in range(d):
                diff = points[i, m] - centroids[j, m]
                s += diff * diff
            if s < best:
                best = s
                arg = j
        labels[i] = arg
        dist[i] = best
    return labels, dist


def nearest_centroid_numpy(points, centroids):
    points = np.asarray(points, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    diff = points[:, None, :] - centroids[None, :, :]
    d2 = np.einsum("nkd,nkd->nk", diff, diff)
    labels = np.argmin(d2, axis=1)  # first minimum => lowest label on ties
    return labels.astype(np.int64), d2[np.arange(len(points)), labels]


def nearest_centroid_numba(points, centroids):
    return _nearest_centroid_jit(
        np.ascontiguousarray(points, dtype=np.float64),
        np.ascontiguousarray(centroids, dtype=np.float64),
    )


def nearest_centroid(points, centroids):
    """Label of the closest centroid per point, and the squared distance."""
    if _accel.USE_NUMBA:
        return nearest_centroid_numba(points, centroids)
    return nearest_centroid_numpy(points, centroids)


# --------------------------------------------------------------------------
# exhaustive dispatch search over per-group multiset tables
#
# Every group of identical chillers contributes a table of (supply, power)
# rows, one per sorted PLR multiset. The search walks the cartesian product of
# the group tables in C order and keeps the first strict minimum of power
# among rows whose supply covers the load. Powers are added right to left,
# i.e. W0 + (W1 + (W2 + ...)), in both flavours.


@njit(cache=True)
def _bruteforce_jit(supply, power, offsets, load, tol):
    g = offsets.shape[0] - 1
    sizes = np.empty(g, dtype=np.int64)
    for j in range(g):
        sizes[j] = offsets[j + 1] - offsets[j]
    idx = np.zeros(g, dtype=np.int64)
    best_power = np.inf
    best = np.full(g, -1, dtype=np.int64)
    total = 1
    for j in range(g):
        total *= sizes[j]
    for _ in range(total):
        s = 0.0
        w = 0.0
        for j in range(g - 1, -1, -1):
            s = supply[offsets[j] + idx[j]] + s
            w = power[offsets[j] + idx[j]] + w
        if s >= load - tol and w < best_power:
            best_power = w
            for j in range(g):
                best[j] = idx[j]
        # mixed-radix increment, last group fastest
        j = g - 1
        while j >= 0:
            idx[j] += 1
            if idx[j] < sizes[j]:
                break
            idx[j] = 0
            j -= 1
    return best, best_power


def bruteforce_search_numba(tables, load, tol=1e-9):
    supply = np.ascontiguousarray(np.concatenate([t[0] for t in tables]), dtype=np.float64)
    power = np.ascontiguousarray(np.concatenate([t[1] for t in tables]), dtype=np.float64)
    offsets = np.zeros(len(tables) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(t[0]) for t in tables])
    best, best_power = _bruteforce_jit(supply, power, offsets, float(load), float(tol))
    if best[0] < 0:
        return None, np.inf
    return tuple(int(i) for i in best), float(best_power)


_CHUNK = 1 << 22


def bruteforce_search_numpy(tables, load, tol=1e-9):
    # fold the tail groups into one flat table (C order, right-assoc sums)
    rest_s = np.asarray(tables[-1][0], dtype=np.float64)
    rest_w = np.asarray(tables[-1][1], dtype=np.float64)
    for s, w in reversed(tables[1:-1]):
        rest_s = (np.asarray(s)[:, None] + rest_s[None, :]).ravel()
        rest_w = (np.asarray(w)[:, None] + rest_w[None, :]).ravel()
    if len(tables) == 1:
        head_s = np.zeros(1)
        head_w = np.zeros(1)
        rest_len = len(rest_s)
        single = True
    else:
        head_s = np.asarray(tables[0][0], dtype=np.float64)
        head_w = np.asarray(tables[0][1], dtype=np.float64)
        rest_len = len(rest_s)
        single = False

    best_power = np.inf
    best_flat = -1
    step = max(1, _CHUNK // max(rest_len, 1))
    for lo in range(0, len(head_s), step):
        hi = min(lo + step, len(head_s))
        if single:
            s = rest_s[None, :]
            w = rest_w[None, :]
        else:
            s = head_s[lo:hi, None] + rest_s[None, :]
            w = head_w[lo:hi, None] + rest_w[None, :]
        w = np.where(s >= load - tol, w, np.inf)
        flat = int(np.argmin(w))
        val = w.flat[flat]
        if val < best_power:
            best_power = float(val)
            best_flat = lo * rest_len + flat
    if best_flat < 0:
        return None, np.inf
    sizes = [len(t[0]) for t in tables]
    return tuple(int(i) for i in np.unravel_index(best_flat, sizes)), best_power


def bruteforce_search(tables, load, tol=1e-9):
    """Best row index per group table, and the matching total power.

    ``tables`` is a sequence of ``(supply, power)`` array pairs. Returns
    ``(None, inf)`` when no combination covers ``load``.
    """
    if _accel.USE_NUMBA:
        return bruteforce_search_numba(tables, load, tol)
    return bruteforce_search_numpy(tables, load, tol)


# --------------------------------------------------------------------------
# GA population scoring


@njit(cache=True)
def _ga_score_jit(plr, caps, coeffs, load, lam, ctol, offset):
    pop, n = plr.shape
    power = np.empty(pop)
    supplied = np.empty(pop)
    score = np.empty(pop)
    for i in range(pop):
        w = 0.0
        s = 0.0
        for j in range(n):
            x = plr[i, j]
            if x > 0.0:
                w += coeffs[j, 0] + x * (coeffs[j, 1] + x * (coeffs[j, 2] + x * coeffs[j, 3]))
                s += x * caps[j]
        short = load - s
        if short < 0.0:
            short = 0.0
        f = w + lam * short * short
        if short > ctol:
            f += offset
        power[i] = w
        supplied[i] = s
        score[i] = f
    return score, power, supplied


def ga_score_numpy(plr, caps, coeffs, load, lam, ctol, offset):
    plr = np.asarray(plr, dtype=np.float64)
    x = plr
    per = coeffs[None, :, 0] + x * (coeffs[None, :, 1] + x * (coeffs[None, :, 2] + x * coeffs[None, :, 3]))
    per = np.where(x > 0.0, per, 0.0)
    power = np.zeros(len(x))
    supplied = np.zeros(len(x))
    for j in range(x.shape[1]):
        power += per[:, j]
        supplied += x[:, j] * caps[j]
    short = np.maximum(load - supplied, 0.0)
    score = power + lam * short * short + np.where(short > ctol, offset, 0.0)
    return score, power, supplied


def ga_score_numba(plr, caps, coeffs, load, lam, ctol, offset):
    return _ga_score_jit(
        np.ascontiguousarray(plr, dtype=np.float64),
        np.ascontiguousarray(caps, dtype=np.float64),
        np.ascontiguousarray(coeffs, dtype=np.float64),
        float(load), float(lam), float(ctol), float(offset),
    )


def ga_score(plr, caps, coeffs, load, lam, ctol, offset):
    """Penalised power of every individual: ``(score, power, supplied)``."""
    if _accel.USE_NUMBA:
        return ga_score_numba(plr, caps, coeffs, load, lam, ctol, offset)
    return ga_score_numpy(plr, caps, coeffs, load, lam, ctol, offset)
