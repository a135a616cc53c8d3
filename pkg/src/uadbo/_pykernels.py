"""Pure-numpy reference versions of the compiled kernels.

Same signatures and results as ``_ckernels``; selected automatically when the
extension is not built, or forced with ``UA_DBO_PURE=1``.
"""
import numpy as np


def conv1d_forward(xp, w, b, stride):
    k = w.shape[2]
    lout = (xp.shape[2] - k) // stride + 1
    out = np.einsum("ock,nckt->not", w, _windows(xp, k, stride, lout), optimize=True)
    out += b[None, :, None]
    return out


def conv1d_backward(xp, w, gout, stride):
    k = w.shape[2]
    lout = gout.shape[2]
    cols = _windows(xp, k, stride, lout)
    dw = np.einsum("not,nckt->ock", gout, cols, optimize=True)
    db = gout.sum(axis=(0, 2))
    dxp = np.zeros_like(xp)
    for kk in range(k):
        dxp[:, :, kk: kk + stride * lout: stride] += np.einsum(
            "not,oc->nct", gout, w[:, :, kk], optimize=True)
    return dxp, dw, db


def _windows(xp, k, stride, lout):
    # (N, C, K, Lout) strided view, no copy
    n, c, _ = xp.shape
    s0, s1, s2 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, shape=(n, c, k, lout), strides=(s0, s1, s2, s2 * stride), writeable=False)


def nondominated_ranks(f):
    f = np.asarray(f, dtype=np.float64)
    n = f.shape[0]
    le = np.all(f[:, None, :] <= f[None, :, :], axis=2)
    lt = np.any(f[:, None, :] < f[None, :, :], axis=2)
    dom = le & lt
    count = dom.sum(axis=0)
    ranks = np.full(n, -1, dtype=np.int64)
    r = 0
    while np.any(ranks < 0):
        front = np.flatnonzero((ranks < 0) & (count == 0))
        ranks[front] = r
        count[front] = -1
        count -= dom[front].sum(axis=0)
        r += 1
    return ranks


def crowding_distance(f):
    f = np.asarray(f, dtype=np.float64)
    n, m_count = f.shape
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for m in range(m_count):
        order = np.argsort(f[:, m], kind="stable")
        dist[order[0]] = np.inf
        dist[order[-1]] = np.inf
        span = f[order[-1], m] - f[order[0], m]
        if span <= 0.0:
            continue
        dist[order[1:-1]] += (f[order[2:], m] - f[order[:-2], m]) / span
    return dist
