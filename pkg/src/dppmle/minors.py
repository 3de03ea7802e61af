"""Bitmask subset enumeration and batched principal-minor linear algebra.

Subsets of [n] are encoded as integer bitmasks (bit i set means index i
is in the subset).  Enumeration order is increasing mask value; within a
subset, indices are increasing.  The empty subset has det = 1, tr = 0.

The heavy loops group masks by cardinality so determinants and inverses
of all principal submatrices run through numpy's stacked gufuncs instead
of a Python loop per subset.
"""

from __future__ import annotations

import numpy as np

from .errors import GroundSetTooLarge

#: Hard cap on ground-set size for full 2^n enumeration (8 MiB per table).
MAX_ENUM_N = 20

# Size-grouped index arrays per ground-set size, built once per n.
_GROUP_CACHE: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
_GROUP_CACHE_MAX_N = 12


def check_enum_budget(n: int, cap: int = MAX_ENUM_N) -> None:
    if n > cap:
        raise GroundSetTooLarge(
            f"ground set of size {n} exceeds the enumeration cap of {cap}")


def subset_indices(mask: int) -> np.ndarray:
    """Indices contained in a bitmask, in increasing order."""
    out = []
    i = 0
    m = int(mask)
    while m:
        if m & 1:
            out.append(i)
        m >>= 1
        i += 1
    return np.asarray(out, dtype=np.intp)


def mask_of(indices) -> int:
    """Bitmask for an iterable of indices."""
    m = 0
    for i in indices:
        m |= 1 << int(i)
    return m


def popcounts(masks: np.ndarray) -> np.ndarray:
    """Cardinality of each mask in an integer array."""
    m = masks.astype(np.uint64)
    counts = np.zeros(m.shape, dtype=np.int64)
    while m.any():
        counts += (m & 1).astype(np.int64)
        m >>= 1
    return counts


def _group_masks(n: int, masks: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Group masks by cardinality.

    Returns a list of (masks_of_size_s, indices) with indices of shape
    (count, s) giving the member indices of each mask, for s = 0..n.
    """
    sizes = popcounts(masks)
    groups = []
    for s in range(n + 1):
        sel = masks[sizes == s]
        if sel.size == 0:
            groups.append((sel, np.empty((0, s), dtype=np.intp)))
            continue
        idx = np.empty((sel.size, s), dtype=np.intp)
        for row, m in enumerate(sel):
            idx[row] = subset_indices(int(m))
        groups.append((sel, idx))
    return groups


def all_masks(n: int) -> np.ndarray:
    check_enum_budget(n)
    return np.arange(2 ** n, dtype=np.int64)


def _groups_for(n: int, masks: np.ndarray | None):
    if masks is None:
        if n in _GROUP_CACHE:
            return _GROUP_CACHE[n], all_masks(n)
        full = all_masks(n)
        groups = _group_masks(n, full)
        if n <= _GROUP_CACHE_MAX_N:
            _GROUP_CACHE[n] = groups
        return groups, full
    masks = np.asarray(masks, dtype=np.int64)
    return _group_masks(n, masks), masks


def principal_logdets(matrix: np.ndarray, masks: np.ndarray | None = None) -> np.ndarray:
    """log det of every principal submatrix A_J.

    Result is aligned with `masks` (all 2^n masks when omitted, indexed
    by mask value).  Assumes every principal minor is positive, which
    holds for symmetric positive definite input.
    """
    a = np.asarray(matrix, dtype=float)
    n = a.shape[0]
    groups, masks = _groups_for(n, masks)
    out = np.empty(masks.size)
    pos = {int(m): k for k, m in enumerate(masks)}
    for sel, idx in groups:
        if sel.size == 0:
            continue
        rows = np.fromiter((pos[int(m)] for m in sel), dtype=np.intp, count=sel.size)
        if idx.shape[1] == 0:
            out[rows] = 0.0
            continue
        sub = a[idx[:, :, None], idx[:, None, :]]
        sign, logdet = np.linalg.slogdet(sub)
        if not np.all(sign > 0):
            bad = sel[sign <= 0]
            raise np.linalg.LinAlgError(
                f"nonpositive principal minor at masks {bad[:4].tolist()}")
        out[rows] = logdet
    return out


def padded_inverses(matrix: np.ndarray, masks: np.ndarray | None = None) -> np.ndarray:
    """Inverses of all principal submatrices, zero-padded to n x n.

    Entry k is the n x n matrix whose J x J block is (A_J)^{-1} for the
    k-th mask and which vanishes elsewhere.
    """
    a = np.asarray(matrix, dtype=float)
    n = a.shape[0]
    groups, masks = _groups_for(n, masks)
    out = np.zeros((masks.size, n, n))
    pos = {int(m): k for k, m in enumerate(masks)}
    for sel, idx in groups:
        if sel.size == 0 or idx.shape[1] == 0:
            continue
        rows = np.fromiter((pos[int(m)] for m in sel), dtype=np.intp, count=sel.size)
        sub = a[idx[:, :, None], idx[:, None, :]]
        inv = np.linalg.inv(sub)
        out[rows[:, None, None], idx[:, :, None], idx[:, None, :]] = inv
    return out


def weighted_inverse_sum(matrix: np.ndarray, weights: np.ndarray,
                         masks: np.ndarray | None = None) -> np.ndarray:
    """Sum_J w_J * padded (A_J)^{-1} without materializing all inverses.

    `weights` is aligned with `masks`; zero-weight masks are skipped.
    """
    a = np.asarray(matrix, dtype=float)
    n = a.shape[0]
    weights = np.asarray(weights, dtype=float)
    groups, masks = _groups_for(n, masks)
    pos = {int(m): k for k, m in enumerate(masks)}
    acc = np.zeros((n, n))
    for sel, idx in groups:
        if sel.size == 0 or idx.shape[1] == 0:
            continue
        rows = np.fromiter((pos[int(m)] for m in sel), dtype=np.intp, count=sel.size)
        w = weights[rows]
        live = w != 0.0
        if not live.any():
            continue
        idx_live = idx[live]
        sub = a[idx_live[:, :, None], idx_live[:, None, :]]
        inv = np.linalg.inv(sub)
        np.add.at(acc, (idx_live[:, :, None], idx_live[:, None, :]),
                  inv * w[live, None, None])
    return acc


def supersets_of(masks: np.ndarray, s: int) -> np.ndarray:
    """Boolean selector of masks J with J >= S (as sets)."""
    m = np.asarray(masks, dtype=np.int64)
    return (m & int(s)) == int(s)
