"""Compiled inner loops (numba). Everything here works on flat arrays."""

from __future__ import annotations

import heapq

import numpy as np
from numba import njit


@njit(cache=True)
def _lex_less(a, b):
    for i in range(a.shape[0]):
        if a[i] < b[i]:
            return True
        if a[i] > b[i]:
            return False
    return False


@njit(cache=True)
def nearest_in_cells(pts, order, start, lo, cs, shape, queries, excluded):
    """Exact nearest point for each query using a uniform cell list.

    Rings of cells are scanned outward until the best squared distance is
    strictly below the distance to any unscanned cell. Ties go to the
    lexicographically smallest point. ``excluded`` masks points out.
    Returns ``(index, squared distance)``; index is -1 when no point is left.
    """
    d = pts.shape[1]
    nq = queries.shape[0]
    out_i = np.full(nq, -1, np.int64)
    out_d = np.full(nq, np.inf)
    strides = np.ones(d, np.int64)
    for a in range(d - 2, -1, -1):
        strides[a] = strides[a + 1] * shape[a + 1]
    c = np.zeros(d, np.int64)
    off = np.zeros(d, np.int64)
    for qi in range(nq):
        q = queries[qi]
        for a in range(d):
            k = int(np.floor((q[a] - lo[a]) / cs))
            c[a] = min(max(k, 0), shape[a] - 1)
        best = np.inf
        bi = -1
        r = 0
        while True:
            for a in range(d):
                off[a] = -r
            while True:
                ring = False
                inside = True
                flat = 0
                for a in range(d):
                    if off[a] == r or off[a] == -r:
                        ring = True
                    ca = c[a] + off[a]
                    if ca < 0 or ca >= shape[a]:
                        inside = False
                    flat += ca * strides[a]
                if ring and inside:
                    for t in range(start[flat], start[flat + 1]):
                        j = order[t]
                        if excluded[j]:
                            continue
                        d2 = 0.0
                        for a in range(d):
                            diff = pts[j, a] - q[a]
                            d2 += diff * diff
                        if d2 < best or (d2 == best and bi >= 0 and _lex_less(pts[j], pts[bi])):
                            best = d2
                            bi = j
                a = d - 1
                while a >= 0:
                    off[a] += 1
                    if off[a] <= r:
                        break
                    off[a] = -r
                    a -= 1
                if a < 0:
                    break
            full = True
            bound = np.inf
            for a in range(d):
                if c[a] - r > 0:
                    full = False
                    bound = min(bound, q[a] - (lo[a] + (c[a] - r) * cs))
                if c[a] + r < shape[a] - 1:
                    full = False
                    bound = min(bound, lo[a] + (c[a] + r + 1) * cs - q[a])
            if full:
                break
            if bi >= 0 and bound > 0 and best < bound * bound:
                break
            r += 1
        out_i[qi] = bi
        out_d[qi] = best
    return out_i, out_d


@njit(cache=True)
def _site_strides(shape):
    d = shape.shape[0]
    strides = np.ones(d, np.int64)
    for a in range(d - 2, -1, -1):
        strides[a] = strides[a + 1] * shape[a + 1]
    return strides


@njit(cache=True)
def _step(s, k, offsets, strides, shape):
    """Flat index of neighbour ``k`` of site ``s``, or -1 off the grid."""
    t = s
    for a in range(shape.shape[0]):
        o = offsets[k, a]
        if o != 0:
            x = (s // strides[a]) % shape[a] + o
            if x < 0 or x >= shape[a]:
                return -1
            t += o * strides[a]
    return t


@njit(cache=True)
def invade(weights, allowed, source, target_class, n_classes, shape, offsets):
    """Bottleneck thresholds from the source sites to each target class.

    Invasion (Prim order on node weights) over allowed sites joined by the
    neighbour ``offsets``. ``thr[c]`` is the smallest level ``q`` such that
    some source is joined to a site of class ``c`` through sites of weight
    ``<= q``; the connection exists at parameter ``p`` iff ``thr[c] < p``.
    """
    n = weights.shape[0]
    strides = _site_strides(shape)
    visited = np.zeros(n, np.bool_)
    thr = np.full(n_classes, np.inf)
    heap = [(0.0, np.int64(0))]
    heap.pop()
    for s in range(n):
        if source[s] and allowed[s]:
            visited[s] = True
            heap.append((weights[s], np.int64(s)))
    heapq.heapify(heap)
    present = np.zeros(n_classes, np.bool_)
    for s in range(n):
        if allowed[s] and target_class[s] >= 0:
            present[target_class[s]] = True
    remaining = 0
    for c in range(n_classes):
        if present[c]:
            remaining += 1
    level = -np.inf
    while len(heap) > 0 and remaining > 0:
        w, s = heapq.heappop(heap)
        if w > level:
            level = w
        c = target_class[s]
        if c >= 0 and thr[c] == np.inf:
            thr[c] = level
            remaining -= 1
        for k in range(offsets.shape[0]):
            t = _step(s, k, offsets, strides, shape)
            if t >= 0 and allowed[t] and not visited[t]:
                visited[t] = True
                heapq.heappush(heap, (weights[t], t))
    return thr


@njit(cache=True)
def connects(mask, source, target, shape, offsets):
    """True iff a masked source site is joined to a masked target site."""
    n = mask.shape[0]
    strides = _site_strides(shape)
    visited = np.zeros(n, np.bool_)
    stack = np.empty(n, np.int64)
    top = 0
    for s in range(n):
        if source[s] and mask[s]:
            if target[s]:
                return True
            visited[s] = True
            stack[top] = s
            top += 1
    while top > 0:
        top -= 1
        s = stack[top]
        for k in range(offsets.shape[0]):
            t = _step(s, k, offsets, strides, shape)
            if t >= 0 and mask[t] and not visited[t]:
                if target[t]:
                    return True
                visited[t] = True
                stack[top] = t
                top += 1
    return False


@njit(cache=True)
def certify_rounds(y, eps, offsets, norms, grid_lo, grid_shape, table, pts, sub_lo, sub_hi, shell, t_cap):
    """First round ``t`` at which revealing boxes ``|o| eps <= t`` around box
    ``y`` certifies its colouring (see ``exploration.Explorer.discover``).

    Returns -1 if ``t`` passes ``t_cap`` first.
    """
    d = y.shape[0]
    m = offsets.shape[0]
    nq = sub_lo.shape[0]
    strides = _site_strides(grid_shape)
    box = np.empty(d, np.int64)
    qlo = np.empty((nq, d))
    qhi = np.empty((nq, d))
    for q in range(nq):
        for a in range(d):
            qlo[q, a] = y[a] * eps + sub_lo[q, a]
            qhi[q, a] = y[a] * eps + sub_hi[q, a]
    ub = np.full(nq, np.inf)
    gap = np.empty(nq)
    t = 0
    done = 0
    while True:
        # fold in the points of boxes newly inside the ball of radius t
        while done < m and norms[done] <= t + 1e-12:
            inside = True
            flat = 0
            for a in range(d):
                box[a] = y[a] + offsets[done, a]
                c = box[a] - grid_lo[a]
                if c < 0 or c >= grid_shape[a]:
                    inside = False
                flat += c * strides[a]
            if inside:
                for s in range(table.shape[1]):
                    j = table[flat, s]
                    if j < 0:
                        break
                    for q in range(nq):
                        far = 0.0
                        for a in range(d):
                            u = pts[j, a] - qlo[q, a]
                            v = pts[j, a] - qhi[q, a]
                            far += max(u * u, v * v)
                        if far < ub[q]:
                            ub[q] = far
            done += 1
        for q in range(nq):
            gap[q] = np.inf
        # unrevealed boxes: outside the grid inside the ball, or in the shell
        k = 0
        while k < m and norms[k] <= t + shell + 1e-12:
            hidden = norms[k] > t + 1e-12
            if not hidden:
                for a in range(d):
                    c = y[a] + offsets[k, a] - grid_lo[a]
                    if c < 0 or c >= grid_shape[a]:
                        hidden = True
            if hidden:
                for q in range(nq):
                    g = 0.0
                    for a in range(d):
                        blo = (y[a] + offsets[k, a]) * eps
                        e = max(blo - qhi[q, a], qlo[q, a] - (blo + eps), 0.0)
                        g += e * e
                    if g < gap[q]:
                        gap[q] = g
            k += 1
        ok = True
        for q in range(nq):
            if not ub[q] < gap[q]:
                ok = False
                break
        if ok:
            return t
        if t > t_cap:
            return -1
        t += 1
