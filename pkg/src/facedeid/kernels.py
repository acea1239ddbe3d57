"""Hot numeric kernels: box-filter blur and pairwise embedding distances.

Two interchangeable backends:

* numba ``@njit`` loops (default when numba imports cleanly), and
* a pure-numpy path, selected by setting the environment variable
  ``FACEDEID_NUMBA`` to ``0``/``off``/``false`` before import.

Both backends are exact-integer (blur) or order-identical float64
(distances), so they produce bit-identical results; ``benchmarks/``
compares their speed.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

_FLAG = os.environ.get("FACEDEID_NUMBA", "1").strip().lower()
_WANT_NUMBA = _FLAG not in ("0", "off", "false", "no")

if _WANT_NUMBA:
    try:
        from numba import njit
    except ImportError:
        warnings.warn("numba not importable; falling back to pure-numpy kernels")
        njit = None
else:
    njit = None

USING_NUMBA = njit is not None


# -- box blur ---------------------------------------------------------------
#
# Replicate-border box mean over a kxk window anchored at floor(k/2).
# Sums are integer (summed-area table over an edge-padded int64 image), and
# the mean rounds half-up via (2*s + k^2) // (2*k^2), so both backends agree
# bit-for-bit.


def _box_blur_numpy(img: np.ndarray, k: int) -> np.ndarray:
    pad_t = k // 2
    pad_b = k - 1 - pad_t
    p = np.pad(img.astype(np.int64), ((pad_t, pad_b), (pad_t, pad_b), (0, 0)), mode="edge")
    sat = p.cumsum(axis=0).cumsum(axis=1)
    sat = np.pad(sat, ((1, 0), (1, 0), (0, 0)))
    s = sat[k:, k:] - sat[:-k, k:] - sat[k:, :-k] + sat[:-k, :-k]
    k2 = k * k
    return ((2 * s + k2) // (2 * k2)).astype(np.uint8)


if USING_NUMBA:

    @njit(cache=True)
    def _box_blur_jit(img, k):  # pragma: no cover - exercised via box_blur
        h, w, c = img.shape
        anchor = k // 2
        ph = h + k - 1
        pw = w + k - 1
        k2 = k * k
        out = np.empty((h, w, c), np.uint8)
        sat = np.zeros((ph + 1, pw + 1), np.int64)
        for ch in range(c):
            for i in range(ph):
                si = min(max(i - anchor, 0), h - 1)
                row = 0
                for j in range(pw):
                    sj = min(max(j - anchor, 0), w - 1)
                    row += img[si, sj, ch]
                    sat[i + 1, j + 1] = sat[i, j + 1] + row
            for i in range(h):
                for j in range(w):
                    s = sat[i + k, j + k] - sat[i, j + k] - sat[i + k, j] + sat[i, j]
                    out[i, j, ch] = (2 * s + k2) // (2 * k2)
        return out

    def _box_blur_numba(img: np.ndarray, k: int) -> np.ndarray:
        return _box_blur_jit(np.ascontiguousarray(img), k)

else:
    _box_blur_numba = None


def box_blur(img: np.ndarray, k: int) -> np.ndarray:
    """Box-filter mean of a uint8 image (HxW or HxWxC) with replicated borders."""
    if k < 1:
        raise ValueError(f"kernel size must be >= 1, got {k}")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got {img.dtype}")
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    if k == 1:
        out = img.copy()
    elif USING_NUMBA:
        out = _box_blur_numba(img, k)
    else:
        out = _box_blur_numpy(img, k)
    return out[:, :, 0] if squeeze else out


# -- pairwise squared distances ---------------------------------------------
#
# Accumulation runs over the feature axis in index order in both backends,
# so float64 results are bit-identical.


def _pairwise_numpy(queries: np.ndarray, refs: np.ndarray) -> np.ndarray:
    nq, dim = queries.shape
    nr = refs.shape[0]
    out = np.zeros((nq, nr), np.float64)
    for t in range(dim):
        diff = queries[:, t : t + 1] - refs[None, :, t]
        out += diff * diff
    return out


if USING_NUMBA:

    @njit(cache=True)
    def _pairwise_jit(queries, refs):  # pragma: no cover - exercised via wrapper
        nq, dim = queries.shape
        nr = refs.shape[0]
        out = np.empty((nq, nr), np.float64)
        for i in range(nq):
            for j in range(nr):
                acc = 0.0
                for t in range(dim):
                    d = queries[i, t] - refs[j, t]
                    acc += d * d
                out[i, j] = acc
        return out

    def _pairwise_numba(queries: np.ndarray, refs: np.ndarray) -> np.ndarray:
        return _pairwise_jit(np.ascontiguousarray(queries), np.ascontiguousarray(refs))

else:
    _pairwise_numba = None


def pairwise_sq_distances(queries: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance between every query and reference vector."""
    queries = np.asarray(queries, np.float64)
    refs = np.asarray(refs, np.float64)
    if queries.ndim != 2 or refs.ndim != 2:
        raise ValueError("expected 2-D (count, dim) arrays")
    if queries.shape[1] != refs.shape[1]:
        raise ValueError(
            f"dimension mismatch: queries {queries.shape[1]} vs references {refs.shape[1]}"
        )
    if USING_NUMBA:
        return _pairwise_numba(queries, refs)
    return _pairwise_numpy(queries, refs)


BACKENDS = {
    "numpy": {"box_blur": _box_blur_numpy, "pairwise": _pairwise_numpy},
}
if USING_NUMBA:
    BACKENDS["numba"] = {"box_blur": _box_blur_numba, "pairwise": _pairwise_numba}
