import numpy as np
import pytest

from uadbo import _pykernels, kernels

ck = pytest.importorskip("uadbo._ckernels", reason="compiled kernels not built")


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv1d_backends_agree(stride):
    rng = np.random.default_rng(stride)
    xp = rng.standard_normal((4, 3, 23))
    w = rng.standard_normal((5, 3, 3))
    b = rng.standard_normal(5)
    out_c = ck.conv1d_forward(xp, w, b, stride)
    out_p = _pykernels.conv1d_forward(xp, w, b, stride)
    np.testing.assert_allclose(out_c, out_p, rtol=1e-12, atol=1e-12)
    g = rng.standard_normal(out_c.shape)
    for a, b_ in zip(ck.conv1d_backward(xp, w, g, stride),
                     _pykernels.conv1d_backward(xp, w, g, stride)):
        np.testing.assert_allclose(a, b_, rtol=1e-12, atol=1e-12)


def test_pareto_kernels_agree():
    rng = np.random.default_rng(0)
    f = np.round(rng.uniform(size=(60, 3)), 1)  # ties on purpose
    np.testing.assert_array_equal(ck.nondominated_ranks(f), _pykernels.nondominated_ranks(f))
    front = f[_pykernels.nondominated_ranks(f) == 0]
    np.testing.assert_allclose(ck.crowding_distance(np.ascontiguousarray(front)),
                               _pykernels.crowding_distance(front))


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("n,c,o", [(1, 3, 8), (16, 32, 64)])
def test_dispatch_matches_reference(n, c, o):
    rng = np.random.default_rng(n)
    xp = rng.standard_normal((n, c, 53))
    w = rng.standard_normal((o, c, 3))
    g = rng.standard_normal((n, o, 26))
    np.testing.assert_allclose(kernels.conv1d_forward(xp, w, np.zeros(o), 2),
                               _pykernels.conv1d_forward(xp, w, np.zeros(o), 2), rtol=1e-12, atol=1e-12)
    for a, b_ in zip(kernels.conv1d_backward(xp, w, g, 2), _pykernels.conv1d_backward(xp, w, g, 2)):
        np.testing.assert_allclose(a, b_, rtol=1e-12, atol=1e-12)
