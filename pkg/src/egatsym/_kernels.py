"""Segment kernels used by message passing.

Every kernel has two implementations: a numba ``@njit`` loop and a plain
numpy version. The numba path is used when numba imports cleanly and the
environment variable ``EGATSYM_DISABLE_NUMBA`` is unset (or ``0``). Both
paths are exposed as ``*_numba`` / ``*_numpy`` so they can be compared.
"""
from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("EGATSYM_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLE:
        raise ImportError("numba disabled by EGATSYM_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------- numpy path

def segment_sum_numpy(x: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n,) + x.shape[1:], dtype=np.float64)
    np.add.at(out, seg, x)
    return out


def segment_max_numpy(x: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    out = np.full((n,) + x.shape[1:], -np.inf)
    np.maximum.at(out, seg, x)
    return out


def segment_softmax_numpy(logits: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    mx = segment_max_numpy(logits, seg, n)
    z = np.exp(logits - mx[seg])
    den = segment_sum_numpy(z, seg, n)
    return z / den[seg]


def segment_softmax_grad_numpy(s: np.ndarray, g: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    dot = segment_sum_numpy(s * g, seg, n)
    return s * (g - dot[seg])


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def _segment_sum_2d(x, seg, n):
        out = np.zeros((n, x.shape[1]))
        for e in range(x.shape[0]):
            r = seg[e]
            for k in range(x.shape[1]):
                out[r, k] += x[e, k]
        return out

    @njit(cache=True)
    def _segment_softmax_2d(logits, seg, n):
        m = logits.shape[1]
        mx = np.full((n, m), -np.inf)
        for e in range(logits.shape[0]):
            r = seg[e]
            for k in range(m):
                if logits[e, k] > mx[r, k]:
                    mx[r, k] = logits[e, k]
        z = np.empty_like(logits)
        den = np.zeros((n, m))
        for e in range(logits.shape[0]):
            r = seg[e]
            for k in range(m):
                v = np.exp(logits[e, k] - mx[r, k])
                z[e, k] = v
                den[r, k] += v
        for e in range(logits.shape[0]):
            r = seg[e]
            for k in range(m):
                z[e, k] /= den[r, k]
        return z

    @njit(cache=True)
    def _segment_softmax_grad_2d(s, g, seg, n):
        m = s.shape[1]
        dot = np.zeros((n, m))
        for e in range(s.shape[0]):
            r = seg[e]
            for k in range(m):
                dot[r, k] += s[e, k] * g[e, k]
        out = np.empty_like(s)
        for e in range(s.shape[0]):
            r = seg[e]
            for k in range(m):
                out[e, k] = s[e, k] * (g[e, k] - dot[r, k])
        return out

    def _as2d(x):
        return x.reshape(x.shape[0], int(np.prod(x.shape[1:], dtype=np.int64)))

    def segment_sum_numba(x, seg, n):
        x = np.ascontiguousarray(x, dtype=np.float64)
        out = _segment_sum_2d(_as2d(x), np.asarray(seg, dtype=np.int64), n)
        return out.reshape((n,) + x.shape[1:])

    def segment_softmax_numba(logits, seg, n):
        x = np.ascontiguousarray(logits, dtype=np.float64)
        out = _segment_softmax_2d(_as2d(x), np.asarray(seg, dtype=np.int64), n)
        return out.reshape(x.shape)

    def segment_softmax_grad_numba(s, g, seg, n):
        s = np.ascontiguousarray(s, dtype=np.float64)
        g = np.ascontiguousarray(g, dtype=np.float64)
        out = _segment_softmax_grad_2d(_as2d(s), _as2d(g), np.asarray(seg, dtype=np.int64), n)
        return out.reshape(s.shape)

    segment_sum = segment_sum_numba
    segment_softmax = segment_softmax_numba
    segment_softmax_grad = segment_softmax_grad_numba
else:
    segment_sum = segment_sum_numpy
    segment_softmax = segment_softmax_numpy
    segment_softmax_grad = segment_softmax_grad_numpy


def check_segments(seg: np.ndarray, n: int) -> None:
    if seg.size and (seg.min() < 0 or seg.max() >= n):
        raise IndexError(f"segment index out of range for {n} segments")
