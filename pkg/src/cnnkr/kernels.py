"""Hot training loops: full-batch gradient descent with momentum.

These loops dominate the runtime of the simulation studies, so they are
compiled with numba when available.  Set ``CNNKR_BACKEND=numpy`` to force the
pure-numpy path (implemented in :mod:`cnnkr.estimation`), or
``CNNKR_BACKEND=numba`` to require the compiled one.  The two paths use the
same update rule and stopping logic; ``benchmarks/bench_kernels.py`` compares
their throughput.

Inputs arrive rearranged: ``mmat`` has one row per sample, the row being the
sample's transformed input laid out as a (pool-cells x kernel-cells) matrix
in row-major order.  A model prediction is then a plain matrix inner product,
which keeps every iteration inside BLAS.

Status codes returned by every trainer: 0 converged (objective drop below
tolerance), 1 iteration budget exhausted, 2 diverged.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "BACKEND",
    "HAVE_NUMBA",
    "LOSS_LS",
    "LOSS_LOGISTIC",
    "STATUS_CONVERGED",
    "STATUS_MAX_ITERS",
    "STATUS_DIVERGED",
    "DIVERGENCE_LIMIT",
    "train_free",
    "train_tucker",
    "train_cp",
    "as_typed_list",
]

LOSS_LS = 0
LOSS_LOGISTIC = 1

STATUS_CONVERGED = 0
STATUS_MAX_ITERS = 1
STATUS_DIVERGED = 2

DIVERGENCE_LIMIT = 1e12

_env = os.environ.get("CNNKR_BACKEND", "").strip().lower()
if _env not in ("", "numba", "numpy"):
    raise ValueError(f"CNNKR_BACKEND must be 'numba' or 'numpy', got {_env!r}")

try:
    from numba import njit
    from numba.typed import List as _TypedList

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False
    _TypedList = None

    def njit(*args, **kwargs):  # pragma: no cover - numba always present in CI
        def wrap(fn):
            return fn

        return wrap


if _env == "numba" and not HAVE_NUMBA:
    raise ImportError("CNNKR_BACKEND=numba requested but numba is not importable")

BACKEND = "numba" if (HAVE_NUMBA and _env != "numpy") else "numpy"


def as_typed_list(arrays):
    """Wrap a python list of arrays for passing into a compiled trainer."""
    out = _TypedList()
    for a in arrays:
        out.append(np.ascontiguousarray(a))
    return out


@njit(cache=True, nogil=True)
def _phi(z):
    # log(1 + e^z), overflow safe
    if z > 0.0:
        return z + np.log1p(np.exp(-z))
    return np.log1p(np.exp(z))


@njit(cache=True, nogil=True)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def _loss_and_score(preds, y, loss_kind, score):
    """Objective value plus the per-sample score d(obj)/d(pred), in place."""
    n, m = preds.shape
    nm = n * m
    obj = 0.0
    if loss_kind == LOSS_LS:
        for i in range(n):
            for j in range(m):
                r = preds[i, j] - y[i, j]
                obj += r * r
                score[i, j] = 2.0 * r / nm
        return obj / nm
    for i in range(n):
        for j in range(m):
            z = preds[i, j]
            obj += _phi(z) - y[i, j] * z
            score[i, j] = (_sigmoid(z) - y[i, j]) / nm
    return obj / nm


@njit(cache=True, nogil=True)
def _clip_fc(b, wflat, radius):
    """Project the composite weight onto the Frobenius ball by scaling the
    fully-connected side (exact along the ray through the origin)."""
    if radius <= 0.0:
        return
    s = 0.0
    for v in wflat.ravel():
        s += v * v
    nrm = np.sqrt(s)
    if nrm > radius:
        b *= radius / nrm


@njit(cache=True, nogil=True)
def _kron2(a, b):
    ra, ca = a.shape
    rb, cb = b.shape
    out = np.empty((ra * rb, ca * cb))
    for i in range(ra):
        for j in range(ca):
            v = a[i, j]
            for k in range(rb):
                for l in range(cb):
                    out[i * rb + k, j * cb + l] = v * b[k, l]
    return out


@njit(cache=True, nogil=True)
def _gather2(flat, src):
    rows, cols = src.shape
    out = np.empty((rows, cols))
    for i in range(rows):
        for j in range(cols):
            out[i, j] = flat[src[i, j]]
    return out


@njit(cache=True, nogil=True)
def _vec_f(a):
    """Column-major vectorization of a 2-D array."""
    rows, cols = a.shape
    out = np.empty(rows * cols)
    for j in range(cols):
        for i in range(rows):
            out[i + rows * j] = a[i, j]
    return out


@njit(cache=True, nogil=True)
def train_free(mmat, y, a, b, lr, mom, tol, max_iters, loss_kind, clip_radius):
    """GD with momentum over the kernel matrix (L, K) and fc weights (M, P, K)."""
    n = mmat.shape[0]
    big_l, big_k = a.shape
    m_cls, big_p, _ = b.shape
    va = np.zeros_like(a)
    vb = np.zeros_like(b)
    trace = np.empty(max_iters + 1)
    score = np.empty((n, m_cls))
    wflat = np.empty((big_p * big_l, m_cls))
    status = STATUS_MAX_ITERS
    it = 0
    for t in range(max_iters + 1):
        for m in range(m_cls):
            w = np.dot(b[m], a.T)
            wflat[:, m] = w.ravel()
        preds = np.dot(mmat, wflat)
        obj = _loss_and_score(preds, y, loss_kind, score)
        trace[t] = obj
        it = t
        if not np.isfinite(obj) or obj > DIVERGENCE_LIMIT:
            status = STATUS_DIVERGED
            break
        if t > 0:
            drop = trace[t - 1] - obj
            if 0.0 <= drop < tol:
                status = STATUS_CONVERGED
                break
        if t == max_iters:
            status = STATUS_MAX_ITERS
            break
        gwflat = np.dot(mmat.T, score)
        ga = np.zeros_like(a)
        for m in range(m_cls):
            gw = np.ascontiguousarray(gwflat[:, m]).reshape(big_p, big_l)
            ga += np.dot(gw.T, b[m])
            gb = np.dot(gw, a)
            for i in range(big_p):
                for j in range(big_k):
                    vb[m, i, j] = mom * vb[m, i, j] + gb[i, j]
                    b[m, i, j] -= lr * vb[m, i, j]
        va = mom * va + ga
        a -= lr * va
        if clip_radius > 0.0:
            for m in range(m_cls):
                w = np.dot(b[m], a.T)
                wflat[:, m] = w.ravel()
            _clip_fc(b, wflat, clip_radius)
    return trace[: it + 1], it, status


@njit(cache=True, nogil=True)
def train_tucker(
    mmat,
    y,
    core_flat,
    factors,
    b,
    tdims,
    rdims,
    src_t,
    src_r,
    lr,
    mom,
    tol,
    max_iters,
    loss_kind,
    clip_radius,
):
    """GD with momentum over a Tucker-factorized kernel stack.

    ``factors`` covers every stack mode including the output-channel one;
    ``core_flat`` is the core in column-major order.  ``src_t``/``src_r`` are
    precomputed unfolding gather indices for the stack and core dims.
    """
    n = mmat.shape[0]
    n_modes = len(factors)
    big_k = tdims[n_modes - 1]
    big_l = 1
    for j in range(n_modes - 1):
        big_l *= tdims[j]
    m_cls, big_p, _ = b.shape
    v_core = np.zeros_like(core_flat)
    v_fac = [np.zeros_like(f) for f in factors]
    vb = np.zeros_like(b)
    trace = np.empty(max_iters + 1)
    score = np.empty((n, m_cls))
    wflat = np.empty((big_p * big_l, m_cls))
    status = STATUS_MAX_ITERS
    it = 0
    for t in range(max_iters + 1):
        kfull = factors[0]
        for j in range(1, n_modes):
            kfull = _kron2(factors[j], kfull)
        af = np.dot(kfull, core_flat)
        at = af.reshape(big_k, big_l)  # row k = vec of kernel k
        for m in range(m_cls):
            w = np.dot(b[m], at)
            wflat[:, m] = w.ravel()
        preds = np.dot(mmat, wflat)
        obj = _loss_and_score(preds, y, loss_kind, score)
        trace[t] = obj
        it = t
        if not np.isfinite(obj) or obj > DIVERGENCE_LIMIT:
            status = STATUS_DIVERGED
            break
        if t > 0:
            drop = trace[t - 1] - obj
            if 0.0 <= drop < tol:
                status = STATUS_CONVERGED
                break
        if t == max_iters:
            status = STATUS_MAX_ITERS
            break
        gwflat = np.dot(mmat.T, score)
        ga = np.zeros((big_l, big_k))
        for m in range(m_cls):
            gw = np.ascontiguousarray(gwflat[:, m]).reshape(big_p, big_l)
            ga += np.dot(gw.T, b[m])
            gb = np.dot(gw, at.T)
            for i in range(big_p):
                for j in range(big_k):
                    vb[m, i, j] = mom * vb[m, i, j] + gb[i, j]
                    b[m, i, j] -= lr * vb[m, i, j]
        gaf = _vec_f(ga)
        g_core = np.dot(kfull.T, gaf)
        g_fac = [np.zeros_like(f) for f in factors]
        for j in range(n_modes):
            first = True
            omega = factors[0]  # placeholder, replaced below
            for i in range(n_modes):
                if i == j:
                    continue
                if first:
                    omega = factors[i]
                    first = False
                else:
                    omega = _kron2(factors[i], omega)
            gmat = _gather2(gaf, src_t[j])
            cmat = _gather2(core_flat, src_r[j])
            g_fac[j] = np.dot(np.dot(gmat, omega), cmat.T)
        for j in range(n_modes):
            v_fac[j] = mom * v_fac[j] + g_fac[j]
            factors[j] -= lr * v_fac[j]
        v_core = mom * v_core + g_core
        core_flat -= lr * v_core
        if clip_radius > 0.0:
            kfull = factors[0]
            for j in range(1, n_modes):
                kfull = _kron2(factors[j], kfull)
            af = np.dot(kfull, core_flat)
            at = af.reshape(big_k, big_l)
            for m in range(m_cls):
                w = np.dot(b[m], at)
                wflat[:, m] = w.ravel()
            _clip_fc(b, wflat, clip_radius)
    return trace[: it + 1], it, status


@njit(cache=True, nogil=True)
def _khatri_rao_cols(factors):
    """Column r is the column-major vectorization of the rank-1 tensor built
    from each factor's r-th column."""
    out = factors[0]
    n_modes = len(factors)
    for i in range(1, n_modes):
        f = factors[i]
        rows_o, r = out.shape
        rows_f = f.shape[0]
        nxt = np.empty((rows_f * rows_o, r))
        for c in range(r):
            for a_i in range(rows_f):
                v = f[a_i, c]
                for b_i in range(rows_o):
                    nxt[b_i + rows_o * a_i, c] = v * out[b_i, c]
        out = nxt
    return out


@njit(cache=True, nogil=True)
def _kron_vec_skip(factors, col, skip):
    """Kronecker chain of the ``col``-th factor columns, skipping one mode."""
    n_modes = len(factors)
    out = np.ones(1)
    for i in range(n_modes):
        if i == skip:
            continue
        f = factors[i]
        rows_f = f.shape[0]
        rows_o = out.shape[0]
        nxt = np.empty(rows_f * rows_o)
        for a_i in range(rows_f):
            v = f[a_i, col]
            for b_i in range(rows_o):
                nxt[b_i + rows_o * a_i] = v * out[b_i]
        out = nxt
    return out


@njit(cache=True, nogil=True)
def train_cp(
    mmat,
    y,
    factors,
    sf,
    b,
    src_l,
    lr,
    mom,
    tol,
    max_iters,
    loss_kind,
    clip_radius,
):
    """GD with momentum over a CP-factorized kernel stack.

    ``factors`` are the per-kernel-mode factor matrices (columns unnormalized
    during training); ``sf`` is the output-channel factor (K, R).
    """
    n = mmat.shape[0]
    n_modes = len(factors)
    big_l = 1
    for j in range(n_modes):
        big_l *= factors[j].shape[0]
    big_k, rank = sf.shape
    m_cls, big_p, _ = b.shape
    v_fac = [np.zeros_like(f) for f in factors]
    v_sf = np.zeros_like(sf)
    vb = np.zeros_like(b)
    trace = np.empty(max_iters + 1)
    score = np.empty((n, m_cls))
    wflat = np.empty((big_p * big_l, m_cls))
    status = STATUS_MAX_ITERS
    it = 0
    for t in range(max_iters + 1):
        kr = _khatri_rao_cols(factors)
        at = np.dot(sf, kr.T)  # (K, L)
        for m in range(m_cls):
            w = np.dot(b[m], at)
            wflat[:, m] = w.ravel()
        preds = np.dot(mmat, wflat)
        obj = _loss_and_score(preds, y, loss_kind, score)
        trace[t] = obj
        it = t
        if not np.isfinite(obj) or obj > DIVERGENCE_LIMIT:
            status = STATUS_DIVERGED
            break
        if t > 0:
            drop = trace[t - 1] - obj
            if 0.0 <= drop < tol:
                status = STATUS_CONVERGED
                break
        if t == max_iters:
            status = STATUS_MAX_ITERS
            break
        gwflat = np.dot(mmat.T, score)
        ga = np.zeros((big_l, big_k))
        for m in range(m_cls):
            gw = np.ascontiguousarray(gwflat[:, m]).reshape(big_p, big_l)
            ga += np.dot(gw.T, b[m])
            gb = np.dot(gw, at.T)
            for i in range(big_p):
                for j in range(big_k):
                    vb[m, i, j] = mom * vb[m, i, j] + gb[i, j]
                    b[m, i, j] -= lr * vb[m, i, j]
        g_sf = np.dot(ga.T, kr)
        cmat = np.dot(ga, sf)  # (L, R)
        g_fac = [np.zeros_like(f) for f in factors]
        for j in range(n_modes):
            for r in range(rank):
                gj = _gather2(cmat[:, r], src_l[j])
                vj = _kron_vec_skip(factors, r, j)
                g_fac[j][:, r] = np.dot(gj, vj)
        for j in range(n_modes):
            v_fac[j] = mom * v_fac[j] + g_fac[j]
            factors[j] -= lr * v_fac[j]
        v_sf = mom * v_sf + g_sf
        sf -= lr * v_sf
        if clip_radius > 0.0:
            kr = _khatri_rao_cols(factors)
            at = np.dot(sf, kr.T)
            for m in range(m_cls):
                w = np.dot(b[m], at)
                wflat[:, m] = w.ravel()
            _clip_fc(b, wflat, clip_radius)
    return trace[: it + 1], it, status
