"""Hot loops with a numba path and a pure-numpy fallback.

The backend is picked once at import time. Set ``HAT_NUMBA=0`` to force the
numpy path (useful for debugging and for checking the two paths agree).
Both paths give bit-identical results, so outputs never depend on the backend.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dep, but keep the fallback honest
    numba = None

_FLAG = os.environ.get("HAT_NUMBA", "1").strip().lower()
USE_NUMBA = numba is not None and _FLAG not in ("0", "false", "no", "off")
BACKEND = "numba" if USE_NUMBA else "numpy"


def _njit(fn):
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# --------------------------------------------------------------------------
# AUC pair counting. Returns 2*wins + ties so the result is an exact integer.
# --------------------------------------------------------------------------


@_njit
def _pair_count_nb(pos, neg):
    # merge two sorted arrays; lo/hi track negatives strictly below / at-or-below p
    ps = np.sort(pos)
    ns = np.sort(neg)
    m = ns.shape[0]
    lo = 0
    hi = 0
    total = 0
    for i in range(ps.shape[0]):
        p = ps[i]
        while lo < m and ns[lo] < p:
            lo += 1
        if hi < lo:
            hi = lo
        while hi < m and ns[hi] <= p:
            hi += 1
        total += lo + hi
    return total


def _pair_count_np(pos, neg):
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    at_or_below = np.searchsorted(neg_sorted, pos, side="right")
    return int(np.sum(below + at_or_below, dtype=np.int64))


def pair_count(pos: np.ndarray, neg: np.ndarray) -> int:
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    neg = np.ascontiguousarray(neg, dtype=np.float64)
    if USE_NUMBA:
        return int(_pair_count_nb(pos, neg))
    return _pair_count_np(pos, neg)


# --------------------------------------------------------------------------
# Bootstrap AUC. Resample indices are drawn by the caller so both paths see
# the same random stream; each row of ``pos_idx``/``neg_idx`` is one resample.
# --------------------------------------------------------------------------


def _rank_tables(pos, neg):
    order = np.argsort(neg, kind="stable")
    neg_sorted = neg[order]
    lo = np.searchsorted(neg_sorted, pos, side="left").astype(np.int64)
    hi = np.searchsorted(neg_sorted, pos, side="right").astype(np.int64)
    rank_of_neg = np.empty(neg.shape[0], dtype=np.int64)
    rank_of_neg[order] = np.arange(neg.shape[0])
    return lo, hi, rank_of_neg


@_njit
def _bootstrap_counts_nb(lo, hi, rank_of_neg, pos_idx, neg_idx):
    n_res = pos_idx.shape[0]
    m = rank_of_neg.shape[0]
    out = np.empty(n_res, dtype=np.int64)
    cum = np.zeros(m + 1, dtype=np.int64)
    for r in range(n_res):
        for k in range(m + 1):
            cum[k] = 0
        for k in range(neg_idx.shape[1]):
            cum[rank_of_neg[neg_idx[r, k]] + 1] += 1
        for k in range(m):
            cum[k + 1] += cum[k]
        total = 0
        for k in range(pos_idx.shape[1]):
            i = pos_idx[r, k]
            total += cum[lo[i]] + cum[hi[i]]
        out[r] = total
    return out


def _bootstrap_counts_np(lo, hi, rank_of_neg, pos_idx, neg_idx):
    m = rank_of_neg.shape[0]
    n_res = pos_idx.shape[0]
    ranks = rank_of_neg[neg_idx] + 1 + (m + 1) * np.arange(n_res)[:, None]
    cum = np.bincount(ranks.ravel(), minlength=n_res * (m + 1)).reshape(n_res, m + 1)
    np.cumsum(cum, axis=1, out=cum)
    rows = np.arange(n_res)[:, None]
    return (cum[rows, lo[pos_idx]] + cum[rows, hi[pos_idx]]).sum(axis=1).astype(np.int64)


def bootstrap_pair_counts(pos, neg, pos_idx, neg_idx) -> np.ndarray:
    """2*wins + ties for every resample row."""
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    neg = np.ascontiguousarray(neg, dtype=np.float64)
    lo, hi, rank_of_neg = _rank_tables(pos, neg)
    pos_idx = np.ascontiguousarray(pos_idx, dtype=np.int64)
    neg_idx = np.ascontiguousarray(neg_idx, dtype=np.int64)
    if USE_NUMBA:
        return _bootstrap_counts_nb(lo, hi, rank_of_neg, pos_idx, neg_idx)
    return _bootstrap_counts_np(lo, hi, rank_of_neg, pos_idx, neg_idx)


# --------------------------------------------------------------------------
# Set overlap: does outfit o share an item with anything in group g?
# Outfits and groups are CSR-style ragged arrays of item indices.
# --------------------------------------------------------------------------


@_njit
def _overlap_nb(out_ptr, out_items, grp_ptr, grp_items, n_items):
    n_out = out_ptr.shape[0] - 1
    n_grp = grp_ptr.shape[0] - 1
    result = np.zeros((n_grp, n_out), dtype=np.bool_)
    seen = np.zeros(n_items, dtype=np.bool_)
    for g in range(n_grp):
        for k in range(grp_ptr[g], grp_ptr[g + 1]):
            seen[grp_items[k]] = True
        for o in range(n_out):
            for k in range(out_ptr[o], out_ptr[o + 1]):
                if seen[out_items[k]]:
                    result[g, o] = True
                    break
        for k in range(grp_ptr[g], grp_ptr[g + 1]):
            seen[grp_items[k]] = False
    return result


def _incidence(ptr, items, n_items):
    rows = np.repeat(np.arange(ptr.shape[0] - 1), np.diff(ptr))
    mat = np.zeros((ptr.shape[0] - 1, n_items), dtype=np.int32)
    mat[rows, items] = 1
    return mat


def _overlap_np(out_ptr, out_items, grp_ptr, grp_items, n_items):
    outs = _incidence(out_ptr, out_items, n_items)
    grps = _incidence(grp_ptr, grp_items, n_items)
    return (grps @ outs.T) > 0


def overlap_matrix(out_ptr, out_items, grp_ptr, grp_items, n_items: int) -> np.ndarray:
    """Boolean (n_groups, n_outfits) matrix of shared-item hits."""
    args = [np.ascontiguousarray(a, dtype=np.int64) for a in (out_ptr, out_items, grp_ptr, grp_items)]
    if USE_NUMBA:
        return _overlap_nb(*args, int(n_items))
    return _overlap_np(*args, int(n_items))


def to_csr(lists) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(lists))
    ptr = np.zeros(len(lists) + 1, dtype=np.int64)
    np.cumsum(lengths, out=ptr[1:])
    flat = np.fromiter((i for x in lists for i in x), dtype=np.int64, count=int(ptr[-1]))
    return ptr, flat


# --------------------------------------------------------------------------
# Row scatter-add: backward of gathering rows by an integer index array.
# --------------------------------------------------------------------------


@_njit
def _scatter_rows_nb(idx, g, out):
    for k in range(idx.shape[0]):
        r = idx[k]
        for j in range(g.shape[1]):
            out[r, j] += g[k, j]


def scatter_add_rows(idx: np.ndarray, g: np.ndarray, n_rows: int) -> np.ndarray:
    """``out[idx[k]] += g[k]`` for a flat index array and 2-d ``g``."""
    out = np.zeros((n_rows, g.shape[1]), dtype=g.dtype)
    if USE_NUMBA and g.dtype == np.float64:
        _scatter_rows_nb(np.ascontiguousarray(idx, dtype=np.int64), np.ascontiguousarray(g), out)
    else:
        np.add.at(out, idx, g)
    return out


# --------------------------------------------------------------------------
# tanh-form GELU. Fused loops skip numpy temporaries; tanh itself stays in
# numpy, which vectorises it better than a scalar loop. Operation order
# matches the numpy path so both backends agree bit for bit.
# --------------------------------------------------------------------------

GELU_C = float(np.sqrt(2.0 / np.pi))
GELU_K = 0.044715
_GELU_K3 = 3.0 * GELU_K


@_njit
def _gelu_inner_nb(x, out):
    for i in range(x.size):
        xi = x[i]
        out[i] = GELU_C * (xi + GELU_K * ((xi * xi) * xi))


@_njit
def _gelu_outer_nb(x, t, out):
    for i in range(x.size):
        out[i] = (0.5 * x[i]) * (1.0 + t[i])


@_njit
def _gelu_bwd_nb(x, t, g, out):
    for i in range(x.size):
        xi = x[i]
        ti = t[i]
        d = GELU_C * (1.0 + _GELU_K3 * (xi * xi))
        out[i] = g[i] * (0.5 * (1.0 + ti) + ((0.5 * xi) * (1.0 - ti * ti)) * d)


def _gelu_fwd_np(x):
    t = np.tanh(GELU_C * (x + GELU_K * ((x * x) * x)))
    return (0.5 * x) * (1.0 + t), t


def _gelu_bwd_np(x, t, g):
    d = GELU_C * (1.0 + _GELU_K3 * (x * x))
    return g * (0.5 * (1.0 + t) + ((0.5 * x) * (1.0 - t * t)) * d)


def _fusable(*arrs) -> bool:
    return USE_NUMBA and all(a.dtype == np.float64 and a.flags.c_contiguous for a in arrs)


def gelu_forward(x: np.ndarray):
    """Returns ``(gelu(x), tanh_term)``; the tanh term is reused by the backward."""
    if not _fusable(x):
        return _gelu_fwd_np(x)
    u = np.empty_like(x)
    _gelu_inner_nb(x.reshape(-1), u.reshape(-1))
    t = np.tanh(u, out=u)
    y = np.empty_like(x)
    _gelu_outer_nb(x.reshape(-1), t.reshape(-1), y.reshape(-1))
    return y, t


def gelu_backward(x: np.ndarray, t: np.ndarray, g: np.ndarray) -> np.ndarray:
    if not (_fusable(x, t, g) and g.shape == x.shape):
        return _gelu_bwd_np(x, t, g)
    out = np.empty_like(x)
    _gelu_bwd_nb(x.reshape(-1), t.reshape(-1), g.reshape(-1), out.reshape(-1))
    return out
