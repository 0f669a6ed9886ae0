"""Hot numeric kernels with a numba path and a pure-numpy path.

The backend is chosen once at import time from the ``BCFEED_BACKEND``
environment variable (``numba`` or ``numpy``).  When unset, numba is used if
it imports cleanly.  Both paths compute the same per-sample quantities; they
may differ in the last few ulps because of different libm and summation
order, so results are bit-reproducible only for a fixed backend.
"""

import os

import numpy as np

_LOG2E = 1.4426950408889634
_TWO_PI = 6.283185307179586
_U53 = 1.0 / 9007199254740992.0  # 2**-53

# reduction block for the numpy grid kernel; fixed so sums never depend on
# how callers chunk their samples
_GRID_BLOCK = 8192


def _select_backend():
    requested = os.environ.get("BCFEED_BACKEND", "").strip().lower()
    if requested not in ("", "numba", "numpy"):
        raise ValueError(
            f"BCFEED_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numpy":
        return "numpy", None
    try:
        import numba
    except ImportError:
        if requested == "numba":
            raise
        return "numpy", None
    # prefer OpenMP; the TBB probe warns on older system TBB builds
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]
    return "numba", numba


BACKEND, _numba = _select_backend()


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _np_normals_from_raw(raw):
    raw = np.asarray(raw, dtype=np.uint64)
    top = (raw >> np.uint64(11)).astype(np.float64)
    u1 = (top[0::2] + 1.0) * _U53
    u2 = top[1::2] * _U53
    r = np.sqrt(-2.0 * np.log(u1))
    theta = _TWO_PI * u2
    out = np.empty(raw.shape[0], dtype=np.float64)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out


def _np_chol_logdet(m):
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        # find the offending samples one by one so callers get NaN there
        out = np.empty(m.shape[0])
        for i in range(m.shape[0]):
            try:
                c = np.linalg.cholesky(m[i])
                out[i] = 2.0 * np.sum(np.log2(np.diagonal(c).real))
            except np.linalg.LinAlgError:
                out[i] = np.nan
        return out
    diag = np.diagonal(chol, axis1=-2, axis2=-1).real
    return 2.0 * np.sum(np.log2(diag), axis=-1)


def _np_whitened_gram(a, x):
    chol = np.linalg.cholesky(a)
    y = np.linalg.solve(chol, np.conj(np.swapaxes(x, -1, -2)))
    return np.conj(np.swapaxes(y, -1, -2)) @ y


def _np_log2_shift_grid_mean(lam, scales):
    n = lam.shape[0]
    acc = np.zeros(scales.shape[0])
    for start in range(0, n, _GRID_BLOCK):
        blk = lam[start:start + _GRID_BLOCK]
        vals = np.log2(1.0 + blk[:, :, None] * scales[None, None, :]).sum(axis=1)
        acc += vals.sum(axis=0)
    return acc / n


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _numba is not None:
    from numba import njit, prange

    @njit(cache=True)
    def _nb_normals_from_raw(raw):
        n = raw.shape[0]
        out = np.empty(n, dtype=np.float64)
        for i in range(0, n, 2):
            u1 = (float(raw[i] >> np.uint64(11)) + 1.0) * _U53
            u2 = float(raw[i + 1] >> np.uint64(11)) * _U53
            r = np.sqrt(-2.0 * np.log(u1))
            theta = _TWO_PI * u2
            out[i] = r * np.cos(theta)
            out[i + 1] = r * np.sin(theta)
        return out

    @njit(cache=True)
    def _nb_cholesky_inplace(c, n):
        # lower Cholesky factor of a Hermitian matrix; returns False if not PD
        for j in range(n):
            d = c[j, j].real
            for k in range(j):
                d -= c[j, k].real * c[j, k].real + c[j, k].imag * c[j, k].imag
            if not d > 0.0:
                return False
            d = np.sqrt(d)
            c[j, j] = d
            for i in range(j + 1, n):
                s = c[i, j]
                for k in range(j):
                    s -= c[i, k] * np.conj(c[j, k])
                c[i, j] = s / d
        return True

    @njit(cache=True)
    def _nb_chol_logdet(m):
        nsamp, n = m.shape[0], m.shape[1]
        out = np.empty(nsamp)
        c = np.empty((n, n), dtype=np.complex128)
        for s in range(nsamp):
            for i in range(n):
                for j in range(n):
                    c[i, j] = m[s, i, j]
            if not _nb_cholesky_inplace(c, n):
                out[s] = np.nan
                continue
            acc = 0.0
            for i in range(n):
                acc += np.log(c[i, i].real)
            out[s] = 2.0 * acc * _LOG2E
        return out

    @njit(cache=True)
    def _nb_whitened_gram(a, x):
        nsamp, n, m = a.shape[0], a.shape[1], x.shape[1]
        out = np.empty((nsamp, m, m), dtype=np.complex128)
        c = np.empty((n, n), dtype=np.complex128)
        y = np.empty((n, m), dtype=np.complex128)
        for s in range(nsamp):
            for i in range(n):
                for j in range(n):
                    c[i, j] = a[s, i, j]
            if not _nb_cholesky_inplace(c, n):
                for i in range(m):
                    for j in range(m):
                        out[s, i, j] = np.nan
                continue
            # forward substitution: L y = x^H
            for col in range(m):
                for i in range(n):
                    v = np.conj(x[s, col, i])
                    for k in range(i):
                        v -= c[i, k] * y[k, col]
                    y[i, col] = v / c[i, i].real
            for i in range(m):
                for j in range(m):
                    acc = 0.0 + 0.0j
                    for k in range(n):
                        acc += np.conj(y[k, i]) * y[k, j]
                    out[s, i, j] = acc
        return out

    @njit(cache=True, parallel=True)
    def _nb_log2_shift_grid_mean(lam, scales):
        n, m = lam.shape
        g = scales.shape[0]
        out = np.empty(g)
        for gi in prange(g):
            c = scales[gi]
            acc = 0.0
            for s in range(n):
                for k in range(m):
                    acc += np.log1p(c * lam[s, k])
            out[gi] = acc * _LOG2E / n
        return out


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------

def normals_from_raw(raw):
    """Box-Muller transform of raw 64-bit words into standard normals.

    Consumes exactly one word per output value, so the i-th normal depends
    only on the i-th pair of words.  ``raw`` must have even length.
    """
    raw = np.ascontiguousarray(raw, dtype=np.uint64)
    if raw.shape[0] % 2:
        raise ValueError("raw word count must be even")
    if BACKEND == "numba":
        return _nb_normals_from_raw(raw)
    return _np_normals_from_raw(raw)


def chol_logdet(m):
    """Base-2 log-determinant of a stack of Hermitian PD matrices.

    Returns NaN for samples whose matrix is not positive definite; callers
    decide whether that is an error.
    """
    m = np.ascontiguousarray(m, dtype=np.complex128)
    if BACKEND == "numba":
        return _nb_chol_logdet(m)
    return _np_chol_logdet(m)


def whitened_gram(a, x):
    """Return ``x @ inv(a) @ x^H`` per sample using a Cholesky factor of ``a``.

    a : (N, n, n) Hermitian PD, x : (N, m, n).  Output is (N, m, m).
    """
    a = np.ascontiguousarray(a, dtype=np.complex128)
    x = np.ascontiguousarray(x, dtype=np.complex128)
    if BACKEND == "numba":
        return _nb_whitened_gram(a, x)
    return _np_whitened_gram(a, x)


def log2_shift_grid_mean(lam, scales):
    """Sample mean of ``sum_k log2(1 + c * lam[:, k])`` for every c in scales.

    lam : (N, m) nonnegative eigenvalues, scales : (G,).  Returns (G,).
    """
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    scales = np.ascontiguousarray(scales, dtype=np.float64)
    if lam.ndim != 2:
        raise ValueError("lam must be 2-D (samples, eigenvalues)")
    if BACKEND == "numba":
        return _nb_log2_shift_grid_mean(lam, scales)
    return _np_log2_shift_grid_mean(lam, scales)


# the raw implementations are exposed for the benchmark and backend tests
NUMPY_KERNELS = {
    "normals_from_raw": _np_normals_from_raw,
    "chol_logdet": _np_chol_logdet,
    "whitened_gram": _np_whitened_gram,
    "log2_shift_grid_mean": _np_log2_shift_grid_mean,
}

NUMBA_KERNELS = {}
if _numba is not None:
    NUMBA_KERNELS = {
        "normals_from_raw": _nb_normals_from_raw,
        "chol_logdet": _nb_chol_logdet,
        "whitened_gram": _nb_whitened_gram,
        "log2_shift_grid_mean": _nb_log2_shift_grid_mean,
    }
