"""A from-scratch BM3D-style collaborative filter for single 2-D slices.

Stage 1 groups the best-matching patches of every reference patch, applies a
separable 3-D transform (orthonormal 2-D DCT per patch, orthonormal Haar across
the group), hard-thresholds, inverts and aggregates. The optional stage 2
repeats the grouping on the stage-1 pilot and applies an empirical Wiener
shrink instead of the hard threshold.

The noise level is given on the 0..255 scale and divided by 255 internally.
"""
from __future__ import annotations

import functools
import logging

import numba
import numpy as np

logger = logging.getLogger(__name__)


@functools.lru_cache(maxsize=None)
def dct_matrix(n):
    """Orthonormal DCT-II matrix: ``C @ x`` is the 1-D transform of ``x``."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    c = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    c[0] /= np.sqrt(2.0)
    return c


def haar_matrix(n):
    """Orthonormal multi-level Haar matrix for ``n`` a power of two."""
    if n == 1:
        return np.ones((1, 1))
    h = haar_matrix(n // 2)
    top = np.kron(h, [1.0, 1.0])
    bottom = np.kron(np.eye(n // 2), [1.0, -1.0])
    return np.vstack([top, bottom]) / np.sqrt(2.0)


@functools.lru_cache(maxsize=None)
def _haar_bank(max_depth):
    size = 1
    while size < max_depth:
        size *= 2
    bank = np.zeros((size + 1, size, size))
    d = 1
    while d <= size:
        bank[d, :d, :d] = haar_matrix(d)
        d *= 2
    return bank


def _positions(length, patch, stride):
    last = length - patch
    pos = list(range(0, last + 1, stride))
    if pos[-1] != last:
        pos.append(last)
    return np.array(pos, dtype=np.int64)


@numba.njit(cache=True, fastmath=True)
def _patch_dct(img, patch, dct):
    ny, nx = img.shape
    py, px = ny - patch + 1, nx - patch + 1
    out = np.empty((py, px, patch * patch))
    tmp = np.empty((patch, patch))
    for y in range(py):
        for x in range(px):
            # rows: tmp = C @ P
            for a in range(patch):
                for b in range(patch):
                    s = 0.0
                    for k in range(patch):
                        s += dct[a, k] * img[y + k, x + b]
                    tmp[a, b] = s
            # columns: out = tmp @ C^T
            for a in range(patch):
                for b in range(patch):
                    s = 0.0
                    for k in range(patch):
                        s += tmp[a, k] * dct[b, k]
                    out[y, x, a * patch + b] = s
    return out


@numba.njit(cache=True, fastmath=True)
def _distance(a, b):
    s = 0.0
    for k in range(a.shape[0]):
        d = a[k] - b[k]
        s += d * d
    return s


@numba.njit(cache=True)
def _block_match(coefs, refs_y, refs_x, half, max_matches):
    """Best matches for every reference patch.

    ``coefs`` holds the orthonormal transform of every patch position, so the
    L2 distance between coefficient vectors equals the spatial patch distance.
    Candidates are all positions within ``half`` pixels of the reference along
    each axis. Returns ``(members, counts)``: ``members[i, :counts[i]]`` are
    flattened positions sorted by distance, reference first, ties in scan order.
    """
    py, px, m = coefs.shape
    nry, nrx = refs_y.shape[0], refs_x.shape[0]
    cap = min(max_matches, py * px)
    members = np.empty((nry * nrx, cap), dtype=np.int64)
    counts = np.zeros(nry * nrx, dtype=np.int64)
    best_d = np.empty(cap)
    for iy in range(nry):
        for ix in range(nrx):
            r = iy * nrx + ix
            ry, rx = refs_y[iy], refs_x[ix]
            ref = coefs[ry, rx]
            best_d[0] = -1.0
            members[r, 0] = ry * px + rx
            kept = 1
            for y in range(max(0, ry - half), min(py - 1, ry + half) + 1):
                for x in range(max(0, rx - half), min(px - 1, rx + half) + 1):
                    if y == ry and x == rx:
                        continue
                    s = _distance(coefs[y, x], ref)
                    if kept == cap and s >= best_d[cap - 1]:
                        continue
                    pos = kept if kept < cap else cap - 1
                    while pos > 1 and best_d[pos - 1] > s:
                        if pos < cap:
                            best_d[pos] = best_d[pos - 1]
                            members[r, pos] = members[r, pos - 1]
                        pos -= 1
                    best_d[pos] = s
                    members[r, pos] = y * px + x
                    if kept < cap:
                        kept += 1
            counts[r] = kept
    return members, counts


@numba.njit(cache=True, fastmath=True)
def _inverse_patch(coef, patch, dct, out):
    # out = C^T @ K @ C, K the coefficient block
    tmp = np.empty((patch, patch))
    for a in range(patch):
        for b in range(patch):
            s = 0.0
            for k in range(patch):
                s += dct[k, a] * coef[k * patch + b]
            tmp[a, b] = s
    for a in range(patch):
        for b in range(patch):
            s = 0.0
            for k in range(patch):
                s += tmp[a, k] * dct[k, b]
            out[a, b] = s


@numba.njit(cache=True, fastmath=True)
def _apply(mat, x, depth, transpose):
    out = np.zeros((depth, x.shape[1]))
    for t in range(depth):
        for s in range(depth):
            c = mat[s, t] if transpose else mat[t, s]
            if c != 0.0:
                for k in range(x.shape[1]):
                    out[t, k] += c * x[s, k]
    return out


@numba.njit(cache=True)
def _depth(count):
    d = 1
    while d < count:
        d *= 2
    return d


@numba.njit(cache=True)
def _stage(noisy_coefs, pilot_coefs, members, counts, patch, dct, haar_bank,
           sigma, thr, wiener, shape):
    ny, nx = shape
    py, px, m = noisy_coefs.shape
    num = np.zeros((ny, nx))
    den = np.zeros((ny, nx))
    est = np.empty((patch, patch))
    for r in range(counts.shape[0]):
        count = counts[r]
        depth = _depth(count)
        haar = haar_bank[depth]
        group = np.empty((depth, m))
        pilot = np.empty((depth, m))
        for t in range(depth):
            src = members[r, min(t, count - 1)]
            yy, xx = src // px, src % px
            for k in range(m):
                group[t, k] = noisy_coefs[yy, xx, k]
                if wiener:
                    pilot[t, k] = pilot_coefs[yy, xx, k]
        spec = _apply(haar, group, depth, False)
        weight_sum = 0.0
        if wiener:
            pspec = _apply(haar, pilot, depth, False)
            for t in range(depth):
                for k in range(m):
                    p2 = pspec[t, k] * pspec[t, k]
                    wk = p2 / (p2 + sigma * sigma)
                    spec[t, k] *= wk
                    weight_sum += wk * wk
            weight = 1.0 / max(weight_sum, 1e-12)
        else:
            kept = 0
            for t in range(depth):
                for k in range(m):
                    if k != 0 and abs(spec[t, k]) < thr:
                        spec[t, k] = 0.0
                    elif spec[t, k] != 0.0:
                        kept += 1
            weight = 1.0 / (1.0 + kept)
        back = _apply(haar, spec, depth, True)
        for t in range(count):
            src = members[r, t]
            yy, xx = src // px, src % px
            _inverse_patch(back[t], patch, dct, est)
            for a in range(patch):
                for b in range(patch):
                    num[yy + a, xx + b] += weight * est[a, b]
                    den[yy + a, xx + b] += weight
    return num / den


def denoise_bm3d(g, sigma_level, patch=8, search_window=39, max_matches=16, stride=3,
                 threshold_factor=2.7, two_stage=False):
    """Denoise a 2-D slice with noise level ``sigma_level`` on the 0..255 scale.

    Slices smaller than one patch fall back to TV with weight ``10*sigma**2``.
    """
    g = np.ascontiguousarray(g, dtype=np.float64)
    sigma = float(sigma_level) / 255.0
    if sigma == 0:
        return g.copy()
    ny, nx = g.shape
    if ny < patch or nx < patch:
        from .denoisers import denoise_tv

        logger.warning("slice %dx%d smaller than BM3D patch %d; using TV fallback",
                       ny, nx, patch)
        return denoise_tv(g, sigma * sigma * 10)
    dct = dct_matrix(patch)
    bank = _haar_bank(max_matches)
    refs_y = _positions(ny, patch, stride)
    refs_x = _positions(nx, patch, stride)
    half = search_window // 2
    coefs = _patch_dct(g, patch, dct)
    members, counts = _block_match(coefs, refs_y, refs_x, half, max_matches)
    basic = _stage(coefs, coefs, members, counts, patch, dct, bank,
                   sigma, threshold_factor * sigma, False, g.shape)
    if not two_stage:
        return basic
    pilot = _patch_dct(basic, patch, dct)
    members, counts = _block_match(pilot, refs_y, refs_x, half, max_matches)
    return _stage(coefs, pilot, members, counts, patch, dct, bank,
                  sigma, 0.0, True, g.shape)
