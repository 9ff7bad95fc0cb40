import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from outres import _kernels_py, kernels

compiled = pytest.importorskip("outres._kernels")


@given(st.integers(2, 60), st.integers(1, 5), st.integers(0, 10_000), st.booleans())
def test_knn_backends_identical(n, v, seed, grid):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, (n, v)).astype(float) if grid else rng.normal(size=(n, v))
    k = int(rng.integers(1, n))
    a = compiled.knn_with_ties(X, k)
    b = _kernels_py.knn_with_ties(X, k)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


@given(st.integers(3, 60), st.integers(1, 4), st.integers(0, 10_000))
def test_lof_backends_agree(n, v, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, v))
    k = int(rng.integers(1, n))
    la, ra = compiled.lof_scores(X, k)
    lb, rb = _kernels_py.lof_scores(X, k)
    assert np.allclose(la, lb, rtol=1e-12, atol=1e-12)
    assert np.allclose(ra, rb, rtol=1e-12, atol=1e-12)


@given(st.integers(1, 80), st.integers(1, 6), st.integers(1, 5), st.integers(0, 10_000))
def test_nearest_centroid_identical(n, k, v, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, v))
    C = rng.normal(size=(k, v))
    la, da = compiled.nearest_centroid(X, C)
    lb, db = _kernels_py.nearest_centroid(X, C)
    assert np.array_equal(la, lb) and np.array_equal(da, db)


def test_backend_selection_env():
    code = "from outres import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, OUTRES_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert kernels.BACKEND in ("compiled", "python")
