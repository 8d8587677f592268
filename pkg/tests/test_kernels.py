import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chillerkit import kernels
from chillerkit.dispatch import _group_table, _groups, optimize_dispatch_bruteforce


def test_kalman_paths_agree():
    z = 1500 + 300 * np.random.default_rng(0).standard_normal(2000)
    a = kernels.kalman_fold_numpy(z, 0.99, 1.0, 2.0, 3.0, z[0], 1.0)
    b = kernels.kalman_fold_numba(z, 0.99, 1.0, 2.0, 3.0, z[0], 1.0)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-13)


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_nearest_centroid_paths_agree(seed, k):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(200, 3))
    cen = rng.normal(size=(k, 3))
    la, da = kernels.nearest_centroid_numpy(pts, cen)
    lb, db = kernels.nearest_centroid_numba(pts, cen)
    assert np.array_equal(la, lb)
    np.testing.assert_allclose(da, db, rtol=1e-12)


def test_nearest_centroid_tie_goes_to_lowest_index():
    cen = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
    for f in (kernels.nearest_centroid_numpy, kernels.nearest_centroid_numba):
        labels, _ = f(np.zeros((1, 3)), cen)
        assert labels[0] == 0


@pytest.mark.parametrize("load", [0.5, 350.0, 1234.5, 2267.2, 3000.0, 3499.0, 3500.0])
def test_bruteforce_paths_agree(plant, load):
    tables = [(t[0], t[1]) for t in (_group_table(k[0], k[1], k[2], 0.01, len(idx)) for k, idx in _groups(plant))]
    a = kernels.bruteforce_search_numpy(tables, load)
    b = kernels.bruteforce_search_numba(tables, load)
    assert a[0] == b[0]
    assert a[1] == pytest.approx(b[1], rel=1e-12)
    assert a[1] == pytest.approx(optimize_dispatch_bruteforce(plant, load).total_power, rel=1e-12)


def test_bruteforce_paths_report_infeasible(plant):
    tables = [(t[0], t[1]) for t in (_group_table(k[0], k[1], k[2], 0.01, len(idx)) for k, idx in _groups(plant))]
    for f in (kernels.bruteforce_search_numpy, kernels.bruteforce_search_numba):
        best, power = f(tables, 3600.0)
        assert best is None and power == np.inf


@given(st.integers(0, 10_000), st.floats(0, 3500))
def test_ga_score_paths_agree(plant, seed, load):
    rng = np.random.default_rng(seed)
    plr = rng.uniform(0, 1, (50, 4))
    plr[rng.uniform(size=plr.shape) < 0.3] = 0.0
    caps = np.array([c.capacity for c in plant.chillers])
    coeffs = np.array([c.coeffs for c in plant.chillers])
    a = kernels.ga_score_numpy(plr, caps, coeffs, load, 1.0, 0.5, 4000.0)
    b = kernels.ga_score_numba(plr, caps, coeffs, load, 1.0, 0.5, 4000.0)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-9)


def test_fallback_flag_selects_numpy():
    env = {**os.environ, "CHILLERKIT_NUMBA": "0"}
    code = (
        "from chillerkit import _accel\n"
        "from chillerkit.dispatch import default_plant, optimize_dispatch_bruteforce\n"
        "print(_accel.backend(), optimize_dispatch_bruteforce(default_plant(), 2267.2).total_power)\n"
    )
    r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    name, power = r.stdout.split()
    assert name == "numpy"
    assert float(power) == pytest.approx(1063.4966666666664, rel=1e-12)
