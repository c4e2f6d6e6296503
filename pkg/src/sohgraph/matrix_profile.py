"""Self-join matrix profile of a concatenated discharge series.

Two routes compute the same profile. :func:`mp_brute` scans every admissible
pair of windows directly and serves as the reference. :func:`mp_fast` walks
the diagonals of the distance matrix, updating a centered cross-product in
O(1) per step, which makes the whole profile O(phi^2) time and O(phi) memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit, prange

from .errors import BoundaryMismatch, DegenerateSeries, EmptySlice, ValidationError, WindowTooLong
from .series_core import ConcatSeries, VoltageCycle, as_series, flat_window_mask, sliding_stats


@dataclass(frozen=True, eq=False)
class MatrixProfile:
    distances: np.ndarray
    indices: np.ndarray
    m: int
    exclusion: int
    normalize: bool = True

    def __len__(self):
        return self.distances.size


@dataclass(frozen=True)
class DiscordResult:
    lambda_: int
    profile_peak: float
    v_ref: float


def default_exclusion(m: int) -> int:
    return max(1, int(math.ceil(m / 2)))


def _check_args(series, m, exclusion):
    if not isinstance(series, ConcatSeries):
        series = as_series(series)
    m = int(m)
    if m < 2:
        raise ValidationError("window length must be >= 2")
    if m > series.phi:
        raise WindowTooLong(f"window length {m} exceeds series length {series.phi}")
    exclusion = default_exclusion(m) if exclusion is None else int(exclusion)
    if exclusion < 1:
        raise ValidationError("exclusion zone must be >= 1")
    n = series.phi - m + 1
    if n < 2 * exclusion + 1:
        raise DegenerateSeries(
            f"{n} windows cannot host an admissible match with exclusion {exclusion}"
        )
    return series, m, exclusion


def _window_matrix(values, m, normalize):
    windows = np.lib.stride_tricks.sliding_window_view(values, m)
    if not normalize:
        return np.ascontiguousarray(windows)
    mu = windows.mean(axis=1, keepdims=True)
    centered = windows - mu
    sd = np.sqrt((centered**2).mean(axis=1, keepdims=True))
    flat = flat_window_mask(values, m)
    sd[flat] = 1.0
    z = centered / sd
    z[flat] = 0.0
    return np.ascontiguousarray(z)


@njit(cache=True)
def _brute_scan(z, exclusion):
    n, m = z.shape
    dist = np.full(n, np.inf)
    idx = np.full(n, -1, dtype=np.int64)
    for q in range(n):
        best = np.inf
        best_j = -1
        for j in range(n):
            if abs(q - j) < exclusion:
                continue
            s = 0.0
            for t in range(m):
                d = z[q, t] - z[j, t]
                s += d * d
            if s < best:
                best = s
                best_j = j
        dist[q] = np.sqrt(best)
        idx[q] = best_j
    return dist, idx


def mp_brute(series, m: int, exclusion: Optional[int] = None, *, normalize: bool = True) -> MatrixProfile:
    """Exhaustive reference profile: every admissible pair, ties to smallest j."""
    series, m, exclusion = _check_args(series, m, exclusion)
    z = _window_matrix(np.asarray(series.values, dtype=np.float64), m, normalize)
    dist, idx = _brute_scan(z, exclusion)
    return _freeze(dist, idx, m, exclusion, normalize)


def _freeze(dist, idx, m, exclusion, normalize):
    dist.setflags(write=False)
    idx.setflags(write=False)
    return MatrixProfile(dist, idx, m, exclusion, normalize)


# --- streaming kernel -------------------------------------------------------


@njit(cache=True)
def _walk_corr(x, m, k, mu, df, dg, invn, flat_half, best, bidx):
    # Normalized route: track the largest correlation. Flat windows enter
    # through flat_half (0.5 for a constant window), giving correlation 1
    # between two flats and 0.5 (distance sqrt(m)) against any other window.
    n = mu.size
    cov = 0.0
    for t in range(m):
        cov += (x[t] - mu[0]) * (x[k + t] - mu[k])
    for i in range(n - k):
        j = i + k
        if i > 0:
            cov += df[i] * dg[j] + df[j] * dg[i]
        r = cov * invn[i] * invn[j] + flat_half[i] + flat_half[j]
        # ">" for the later window, ">=" for the earlier one: ties settle
        # on the smallest match index whatever the walk order.
        if r > best[i]:
            best[i] = r
            bidx[i] = j
        if r >= best[j]:
            best[j] = r
            bidx[j] = i


@njit(cache=True)
def _walk_sq(x, m, k, mu, df, dg, var, best, bidx):
    # Raw route: track the smallest squared distance, expressed through the
    # centered cross-product to avoid cancellation against the means.
    n = mu.size
    cov = 0.0
    for t in range(m):
        cov += (x[t] - mu[0]) * (x[k + t] - mu[k])
    for i in range(n - k):
        j = i + k
        if i > 0:
            cov += df[i] * dg[j] + df[j] * dg[i]
        dm = mu[i] - mu[j]
        d2 = m * (var[i] + var[j] + dm * dm) - 2.0 * cov
        if d2 < best[i]:
            best[i] = d2
            bidx[i] = j
        if d2 <= best[j]:
            best[j] = d2
            bidx[j] = i


@njit(cache=True)
def _walk(x, m, k, mu, df, dg, invn, flat_half, var, normalize, best, bidx):
    if normalize:
        _walk_corr(x, m, k, mu, df, dg, invn, flat_half, best, bidx)
    else:
        _walk_sq(x, m, k, mu, df, dg, var, best, bidx)


@njit(cache=True)
def _diagonals_serial(x, m, exclusion, mu, df, dg, invn, flat_half, var, normalize):
    n = mu.size
    best = np.full(n, -np.inf if normalize else np.inf)
    bidx = np.full(n, -1, dtype=np.int64)
    for k in range(exclusion, n):
        _walk(x, m, k, mu, df, dg, invn, flat_half, var, normalize, best, bidx)
    return best, bidx


@njit(cache=True, parallel=True)
def _diagonals_parallel(x, m, exclusion, mu, df, dg, invn, flat_half, var, normalize, n_chunks):
    n = mu.size
    best = np.full((n_chunks, n), -np.inf if normalize else np.inf)
    bidx = np.full((n_chunks, n), -1, dtype=np.int64)
    for c in prange(n_chunks):
        row = best[c]
        irow = bidx[c]
        for k in range(exclusion + c, n, n_chunks):
            _walk(x, m, k, mu, df, dg, invn, flat_half, var, normalize, row, irow)
    out = best[0].copy()
    oidx = bidx[0].copy()
    sign = 1.0 if normalize else -1.0
    for c in range(1, n_chunks):
        for q in range(n):
            v = sign * best[c, q]
            cur = sign * out[q]
            if v > cur or (v == cur and bidx[c, q] < oidx[q]):
                out[q] = best[c, q]
                oidx[q] = bidx[c, q]
    return out, oidx


@njit(cache=True)
def _exact_pair_distances(x, m, pidx, normalize):
    # Exact distance for each reported pair; the streaming value loses
    # digits to cancellation when the two windows nearly coincide.
    n = pidx.size
    out = np.empty(n)
    a = np.empty(m)
    b = np.empty(m)
    for q in range(n):
        j = pidx[q]
        for t in range(m):
            a[t] = x[q + t]
            b[t] = x[j + t]
        if normalize:
            _znorm_inplace(a)
            _znorm_inplace(b)
        s = 0.0
        for t in range(m):
            d = a[t] - b[t]
            s += d * d
        out[q] = np.sqrt(s)
    return out


@njit(cache=True)
def _znorm_inplace(w):
    m = w.size
    flat = True
    for t in range(1, m):
        if w[t] != w[0]:
            flat = False
            break
    if flat:
        w[:] = 0.0
        return
    mu = w.mean()
    ss = 0.0
    for t in range(m):
        w[t] -= mu
        ss += w[t] * w[t]
    sd = np.sqrt(ss / m)
    for t in range(m):
        w[t] /= sd


def _update_terms(x, m, mu):
    n = mu.size
    df = np.zeros(n)
    dg = np.zeros(n)
    df[1:] = (x[m:] - x[: n - 1]) / 2.0
    dg[1:] = (x[m:] - mu[1:]) + (x[: n - 1] - mu[:-1])
    return df, dg


def mp_fast(
    series,
    m: int,
    exclusion: Optional[int] = None,
    *,
    normalize: bool = True,
    parallel: bool = False,
    n_chunks: Optional[int] = None,
) -> MatrixProfile:
    """Diagonal-streaming profile, equal to :func:`mp_brute` within 1e-8."""
    series, m, exclusion = _check_args(series, m, exclusion)
    x = np.ascontiguousarray(series.values, dtype=np.float64)
    stats = sliding_stats(x, m)
    mu = np.array(stats.means)
    sd = np.array(stats.stds)
    df, dg = _update_terms(x, m, mu)
    var = sd * sd
    flat = sd == 0.0
    invn = np.zeros_like(sd)
    invn[~flat] = 1.0 / (np.sqrt(m) * sd[~flat])
    flat_half = np.where(flat, 0.5, 0.0)
    args = (x, m, exclusion, mu, df, dg, invn, flat_half, var, normalize)
    if parallel:
        import numba

        chunks = int(n_chunks or max(1, numba.get_num_threads()))
        _, pidx = _diagonals_parallel(*args, chunks)
    else:
        _, pidx = _diagonals_serial(*args)
    dist = _exact_pair_distances(x, m, pidx, normalize)
    return _freeze(dist, pidx, m, exclusion, normalize)


# --- cycle partitioning and discord -----------------------------------------


def partition_profile(mp: MatrixProfile, series: ConcatSeries) -> list:
    """Split the profile into one slice per cycle, keyed by window start."""
    n = series.phi - mp.m + 1
    if len(mp) != n:
        raise BoundaryMismatch(
            f"profile has {len(mp)} entries, series of length {series.phi} with "
            f"m={mp.m} implies {n}"
        )
    starts = np.asarray(series.boundaries)
    ends = np.append(starts[1:], series.phi)
    return [mp.distances[min(s, n) : min(e, n)] for s, e in zip(starts, ends)]


def find_discord(profile_slice, cycle: VoltageCycle, search_len: Optional[int] = None) -> DiscordResult:
    """Highest profile peak within the first ``search_len`` window starts."""
    p = np.asarray(profile_slice, dtype=np.float64)
    if search_len is None:
        search_len = p.size
    search_len = min(int(search_len), p.size, len(cycle))
    if search_len < 1:
        raise EmptySlice("nothing to search for a discord")
    lam = int(np.argmax(p[:search_len]))  # first occurrence on ties
    return DiscordResult(lam, float(p[lam]), float(cycle.samples[lam]))


def save_profile_csv(mp: MatrixProfile, path) -> None:
    from .data_io import atomic_write_text

    lines = ["position,distance,match_index"]
    for q, (d, j) in enumerate(zip(mp.distances, mp.indices)):
        lines.append(f"{q},{float(d)!r},{int(j)}")
    atomic_write_text(path, "\n".join(lines) + "\n")
