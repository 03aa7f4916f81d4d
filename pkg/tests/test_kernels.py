"""The numba kernels and their numpy twins must agree."""
import numpy as np
import pytest

from sklab.field import CounterexampleField
from sklab.kernels import nb
from sklab.kernels import np_

S = np.eye(3)


@pytest.fixture(scope="module")
def F():
    return CounterexampleField(0.3, n1=1, m_max=12).table().as_tuple()


def test_path_keys_identical():
    for seed, path in [(0, 0), (7, 123456), (2**40, 3)]:
        assert int(nb.path_key(seed, path)) == int(np_.path_key(seed, path))


def test_normal_block_identical():
    a = nb.normal_block(5, 11, 100, 500, 3)
    b = np_.normal_block(5, 11, 100, 500, 3)
    assert np.allclose(a, b, rtol=1e-14, atol=1e-14)


def test_normal_block_blocks_concatenate():
    whole = nb.normal_block(1, 2, 0, 200, 2)
    parts = np.concatenate([nb.normal_block(1, 2, 0, 80, 2), nb.normal_block(1, 2, 80, 120, 2)])
    assert np.array_equal(whole, parts)


def test_skorokhod_identical():
    w = np.cumsum(np.random.default_rng(0).normal(size=5000)) * 0.01
    for a, b in zip(nb.skorokhod_1d(w), np_.skorokhod_1d(w)):
        assert np.allclose(a, b, atol=1e-15)


def test_phi_batch_identical(F):
    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.uniform(-5, 5, (3000, 2)), rng.exponential(0.1, 3000)])
    pts[:10, 2] = 0.0
    pts[10:20, 2] = 20.0
    assert np.allclose(nb.phi_batch(pts, F), np_.phi_batch(pts, F), atol=1e-13)


# The rough field amplifies last-ulp differences exponentially along a path
# (about 1e-15 after 100 steps, 1e-13 after 300, 1e-3 after 1000), so twins
# are compared over short horizons.


def test_coupling_batch_identical(F):
    args = (3, np.arange(16), np.zeros(3), np.array([2.0**-4, 0, 0]), S, F, 4.0**-8, 300,
            2.0**-4.02, 2.0**-3.98, 1e9, 1e9)
    a = nb.coupling_batch(*args)
    b = np_.coupling_batch(*args)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    for u, v in zip(a[2:], b[2:]):
        assert np.allclose(u, v, rtol=0, atol=1e-10)


def test_coupling_trace_identical(F):
    args = (4, 2, np.zeros(3), np.array([2.0**-4, 0, 0]), S, F, 4.0**-8, 300,
            -1.0, 1e9, 1e9, 1e9, 7)
    ra, sa, ca = nb.coupling_trace(*args)
    rb, sb, cb = np_.coupling_trace(*args)
    assert sa == sb and ca == cb
    assert np.allclose(ra, rb, rtol=0, atol=1e-10)


def test_halfspace_path_identical(F):
    args = (9, 1, np.array([0.1, 0.2, 0.01]), S, F, 1e-5, 300, 0.05)
    a = nb.halfspace_path(*args)
    b = np_.halfspace_path(*args)
    assert a[2] == b[2] and a[3] == b[3]
    assert np.allclose(a[0], b[0], rtol=0, atol=1e-10)
    assert np.allclose(a[1], b[1], atol=1e-14)


def test_halfspace_batch_identical(F):
    args = (2, np.arange(30), np.array([0.0, 0.0, 0.01]), S, F, 1e-5, 300, 0.75, 1e-4)
    a = nb.halfspace_batch(*args)
    b = np_.halfspace_batch(*args)
    for u, v in zip(a, b):
        assert np.allclose(u, v, rtol=1e-10, atol=1e-10)
