"""Hot numeric kernels with numba-compiled and pure-numpy implementations.

The JIT path is on by default and disabled by setting the environment
variable ``STYLE_TOOLKIT_NUMBA`` to ``0``/``false``/``off`` before import
(or per call via the ``use_numba`` argument). Both paths compute the same
quantities; ``benchmarks/bench_kernels.py`` compares their throughput.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("STYLE_TOOLKIT_NUMBA", "1").strip().lower()
NUMBA_ENABLED = _FLAG not in ("0", "false", "off", "no")

if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

# Identical-vector pairs short-circuit to cosine 1.0: mathematically exact,
# and required so a constant-residual mapper reports mean 1.0 / std 0.0.


def _render_batch_np(A, S, bias):
    return np.clip(S @ A.T + bias, 0.0, 1.0)


def _embed_batch_np(B, X, normalize):
    E = X @ B.T
    if normalize:
        norms = np.linalg.norm(E, axis=1, keepdims=True)
        nz = norms[:, 0] > 0.0
        E[nz] = E[nz] / norms[nz]
    return E


def _pairwise_cosines_np(R):
    n = R.shape[0]
    norms = np.linalg.norm(R, axis=1)
    vals = np.empty(n * (n - 1) // 2)
    valid = np.empty(n * (n - 1) // 2, dtype=np.bool_)
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            if norms[i] == 0.0 or norms[j] == 0.0:
                vals[k] = 0.0
                valid[k] = False
            elif np.array_equal(R[i], R[j]):
                vals[k] = 1.0
                valid[k] = True
            else:
                vals[k] = float(R[i] @ R[j]) / (norms[i] * norms[j])
                valid[k] = True
            k += 1
    return vals, valid


if NUMBA_ENABLED:
    # Matrix products delegate to BLAS even inside njit; the JIT wins come
    # from fusing the clamp/normalize passes and from the loop-shaped
    # pairwise kernel, not from hand-rolled matmuls.

    @njit(cache=True)
    def _render_batch_nb(A, S, bias):  # pragma: no cover - exercised via dispatcher
        out = S @ A.T
        n, p = out.shape
        for i in range(n):
            for j in range(p):
                v = out[i, j] + bias
                if v < 0.0:
                    v = 0.0
                elif v > 1.0:
                    v = 1.0
                out[i, j] = v
        return out

    @njit(cache=True)
    def _embed_batch_nb(B, X, normalize):  # pragma: no cover
        out = X @ B.T
        n, e = out.shape
        if normalize:
            for i in range(n):
                norm = 0.0
                for j in range(e):
                    norm += out[i, j] * out[i, j]
                norm = np.sqrt(norm)
                if norm > 0.0:
                    for j in range(e):
                        out[i, j] /= norm
        return out

    @njit(cache=True)
    def _pairwise_cosines_nb(R):  # pragma: no cover
        n, d = R.shape
        norms = np.empty(n)
        for i in range(n):
            acc = 0.0
            for k in range(d):
                acc += R[i, k] * R[i, k]
            norms[i] = np.sqrt(acc)
        m = n * (n - 1) // 2
        vals = np.empty(m)
        valid = np.empty(m, dtype=np.bool_)
        idx = 0
        for i in range(n):
            for j in range(i + 1, n):
                if norms[i] == 0.0 or norms[j] == 0.0:
                    vals[idx] = 0.0
                    valid[idx] = False
                else:
                    same = True
                    for k in range(d):
                        if R[i, k] != R[j, k]:
                            same = False
                            break
                    if same:
                        vals[idx] = 1.0
                    else:
                        dot = 0.0
                        for k in range(d):
                            dot += R[i, k] * R[j, k]
                        vals[idx] = dot / (norms[i] * norms[j])
                    valid[idx] = True
                idx += 1
        return vals, valid


def _use(use_numba):
    return NUMBA_ENABLED if use_numba is None else (use_numba and NUMBA_ENABLED)


def render_batch(A, S, bias=0.0, use_numba=None):
    """Images for a batch of style codes: ``clamp01(A @ s + bias)`` per row of S.

    A is (pixels, channels), S is (batch, channels); returns (batch, pixels).
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    S = np.ascontiguousarray(S, dtype=np.float64)
    if _use(use_numba):
        return _render_batch_nb(A, S, float(bias))
    return _render_batch_np(A, S, float(bias))


def embed_batch(B, X, normalize=True, use_numba=None):
    """Joint embeddings for a batch of pixel vectors: rows of ``B @ x``.

    Rows are scaled to unit norm when ``normalize`` is set; zero rows are
    left at zero for the caller to flag.
    """
    B = np.ascontiguousarray(B, dtype=np.float64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    if _use(use_numba):
        return _embed_batch_nb(B, X, bool(normalize))
    return _embed_batch_np(B, X, bool(normalize))


def pairwise_cosines(R, use_numba=None):
    """Cosine similarity of all unordered row pairs of R.

    Returns ``(values, valid)`` over the upper triangle in (i, j) order; a
    pair involving a zero-norm row is marked invalid. Bitwise-identical rows
    yield exactly 1.0.
    """
    R = np.ascontiguousarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] < 2:
        raise ValueError("pairwise_cosines needs a 2-D array with at least two rows")
    if _use(use_numba):
        return _pairwise_cosines_nb(R)
    return _pairwise_cosines_np(R)


def warmup() -> None:
    """Force JIT compilation of all kernels (no-op on the numpy path)."""
    if not NUMBA_ENABLED:
        return
    A = np.ones((2, 3))
    S = np.ones((2, 3))
    render_batch(A, S, 0.5)
    embed_batch(np.ones((2, 2)), np.ones((2, 2)))
    pairwise_cosines(np.eye(2))
