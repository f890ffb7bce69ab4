"""Compiled inner loops: batch resampling, tree construction and exact queries.

Exponents are passed as integer codes: 1, 2, or ``EXP_INF`` (0) for the
max-norm. Every distance handled here is un-averaged; callers rescale at the
API boundary. All kernels release the GIL so batches can be spread over a
thread pool.
"""

import numpy as np
from numba import njit

EXP_INF = 0

BOUND_MIXED = 0
BOUND_HOLDER = 1
BOUND_ENVELOPE = 2

# Relative slack applied before pruning a subtree or abandoning a row early.
# Keeps every lower bound strictly conservative under floating-point rounding.
_SLACK = 1e-12


@njit(cache=True, nogil=True)
def resample_csr(points, offsets, n_points, out):
    """Resample every streamline of a CSR tractogram into ``out``.

    Returns -1 on success, ``s`` when streamline ``s`` is degenerate (fewer
    than two points or zero arc length) and ``-2 - s`` when it holds a
    non-finite coordinate, which always makes its arc length non-finite.
    """
    n = offsets.shape[0] - 1
    cum = np.empty(16, np.float64)
    for s in range(n):
        a = offsets[s]
        m = offsets[s + 1] - a
        if m < 2:
            return s
        if cum.shape[0] < m:
            cum = np.empty(2 * m, np.float64)
        cum[0] = 0.0
        for i in range(1, m):
            dx = np.float64(points[a + i, 0]) - np.float64(points[a + i - 1, 0])
            dy = np.float64(points[a + i, 1]) - np.float64(points[a + i - 1, 1])
            dz = np.float64(points[a + i, 2]) - np.float64(points[a + i - 1, 2])
            cum[i] = cum[i - 1] + np.sqrt(dx * dx + dy * dy + dz * dz)
        total = cum[m - 1]
        if not np.isfinite(total):
            return -2 - s
        if not total > 0.0:
            return s
        for c in range(3):
            out[s, 0, c] = points[a, c]
            out[s, n_points - 1, c] = points[a + m - 1, c]
        seg = 0
        for j in range(1, n_points - 1):
            t = total * j / (n_points - 1)
            while seg < m - 2 and cum[seg + 1] <= t:
                seg += 1
            length = cum[seg + 1] - cum[seg]
            frac = 0.0
            if length > 0.0:
                frac = (t - cum[seg]) / length
                if frac > 1.0:
                    frac = 1.0
            for c in range(3):
                p0 = np.float64(points[a + seg, c])
                p1 = np.float64(points[a + seg + 1, c])
                out[s, j, c] = p0 + frac * (p1 - p0)
    return -1


@njit(cache=True, nogil=True)
def _point_norm(dx, dy, dz, inner):
    if inner == 2:
        return np.sqrt(dx * dx + dy * dy + dz * dz)
    if inner == 1:
        return dx + dy + dz
    m = dx
    if dy > m:
        m = dy
    if dz > m:
        m = dz
    return m


@njit(cache=True, nogil=True)
def row_distance(q, data, row, n_points, inner, outer, cutoff):
    """Un-averaged mixed norm between ``q`` and ``data[row]``.

    Returns ``inf`` as soon as the partial aggregate provably exceeds
    ``cutoff``.
    """
    if outer == 2:
        limit = cutoff * cutoff * (1.0 + _SLACK)
    else:
        limit = cutoff
    acc = 0.0
    for k in range(n_points):
        j = 3 * k
        dx = abs(q[j] - np.float64(data[row, j]))
        dy = abs(q[j + 1] - np.float64(data[row, j + 1]))
        dz = abs(q[j + 2] - np.float64(data[row, j + 2]))
        v = _point_norm(dx, dy, dz, inner)
        if outer == 1:
            acc += v
        elif outer == 2:
            acc += v * v
        elif v > acc:
            acc = v
        if acc > limit:
            return np.inf
    if outer == 2:
        return np.sqrt(acc)
    return acc


@njit(cache=True, nogil=True)
def box_bound(q, lo, hi, node, n_points, inner, outer, mode, holder_factor):
    """Lower bound on the un-averaged mixed distance from ``q`` to any row
    inside the bounding box of ``node``."""
    acc = 0.0
    for k in range(n_points):
        gx = 0.0
        gy = 0.0
        gz = 0.0
        j = 3 * k
        for c in range(3):
            v = q[j + c]
            lc = np.float64(lo[node, j + c])
            hc = np.float64(hi[node, j + c])
            g = 0.0
            if v < lc:
                g = lc - v
            elif v > hc:
                g = v - hc
            if c == 0:
                gx = g
            elif c == 1:
                gy = g
            else:
                gz = g
        if mode == BOUND_MIXED:
            v = _point_norm(gx, gy, gz, inner)
            if outer == 1:
                acc += v
            elif outer == 2:
                acc += v * v
            elif v > acc:
                acc = v
        else:
            if mode == BOUND_HOLDER:
                e = outer
            elif inner == EXP_INF or outer == EXP_INF:
                e = EXP_INF
            else:
                e = max(inner, outer)
            if e == 1:
                acc += gx + gy + gz
            elif e == 2:
                acc += gx * gx + gy * gy + gz * gz
            else:
                m = _point_norm(gx, gy, gz, EXP_INF)
                if m > acc:
                    acc = m
    if mode == BOUND_MIXED:
        if outer == 2:
            acc = np.sqrt(acc)
        return acc
    if mode == BOUND_HOLDER:
        if outer == 2:
            acc = np.sqrt(acc)
        return acc * holder_factor
    if not (inner == EXP_INF or outer == EXP_INF) and max(inner, outer) == 2:
        acc = np.sqrt(acc)
    return acc


@njit(cache=True, nogil=True)
def _grow(lo, hi, node, work, r, dim):
    for d in range(dim):
        v = work[r, d]
        if v < lo[node, d]:
            lo[node, d] = v
        if v > hi[node, d]:
            hi[node, d] = v


@njit(cache=True, nogil=True)
def build_tree(work, leaf_size):
    """Sliding-midpoint k-d tree over the rows of ``work``, which is
    permuted in place into tree order.

    Returns ``(order, start, end, left, right, axis, split, lo, hi)`` where
    the permuted ``work`` equals ``original[order]``, node ``i`` owns
    positions ``start[i]:end[i]`` and ``lo``/``hi`` are tight per-node
    bounding boxes. Both children's boxes are accumulated during the
    partition, so each level reads every row once.
    """
    n, dim = work.shape
    max_nodes = max(1, 2 * n)
    order = np.arange(n)
    start = np.full(max_nodes, -1, np.int64)
    end = np.full(max_nodes, -1, np.int64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    axis = np.full(max_nodes, -1, np.int64)
    split = np.zeros(max_nodes, np.float64)
    lo = np.empty((max_nodes, dim), np.float32)
    hi = np.empty((max_nodes, dim), np.float32)
    stack = np.empty(max_nodes, np.int64)

    start[0] = 0
    end[0] = n
    for d in range(dim):
        lo[0, d] = np.inf
        hi[0, d] = -np.inf
    for r in range(n):
        _grow(lo, hi, 0, work, r, dim)
    n_nodes = 1
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s = start[node]
        e = end[node]
        if e - s <= leaf_size:
            continue
        best = 0
        spread = -1.0
        for d in range(dim):
            w = np.float64(hi[node, d]) - np.float64(lo[node, d])
            if w > spread:
                spread = w
                best = d
        if not spread > 0.0:
            # all rows identical; nothing to split on
            continue
        mid = 0.5 * (np.float64(lo[node, best]) + np.float64(hi[node, best]))
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        for d in range(dim):
            lo[lc, d] = np.inf
            hi[lc, d] = -np.inf
            lo[rc, d] = np.inf
            hi[rc, d] = -np.inf
        # Hoare partition; a tight box guarantees min <= mid < max, so
        # neither side ends up empty
        i = s
        j = e - 1
        while True:
            while i <= j and work[i, best] <= mid:
                _grow(lo, hi, lc, work, i, dim)
                i += 1
            while i <= j and work[j, best] > mid:
                _grow(lo, hi, rc, work, j, dim)
                j -= 1
            if i > j:
                break
            tmp = order[i]
            order[i] = order[j]
            order[j] = tmp
            for d in range(dim):
                v = work[i, d]
                work[i, d] = work[j, d]
                work[j, d] = v
            _grow(lo, hi, lc, work, i, dim)
            _grow(lo, hi, rc, work, j, dim)
            i += 1
            j -= 1
        start[lc] = s
        end[lc] = i
        start[rc] = i
        end[rc] = e
        left[node] = lc
        right[node] = rc
        axis[node] = best
        split[node] = mid
        stack[sp] = rc
        sp += 1
        stack[sp] = lc
        sp += 1
    return (order, start[:n_nodes].copy(), end[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(),
            axis[:n_nodes].copy(), split[:n_nodes].copy(),
            lo[:n_nodes].copy(), hi[:n_nodes].copy())


@njit(cache=True, nogil=True)
def _heap_insert(hd, hid, hf, count, k, d, rid, flip, dedup):
    """Insert into ascending (distance, id) arrays of capacity ``k``.

    With ``dedup`` an id already present keeps the smaller distance; ties keep
    the existing entry. Returns the new count.
    """
    if dedup:
        for p in range(count):
            if hid[p] == rid:
                if not d < hd[p]:
                    return count
                for t in range(p, count - 1):
                    hd[t] = hd[t + 1]
                    hid[t] = hid[t + 1]
                    hf[t] = hf[t + 1]
                count -= 1
                break
    if count == k:
        wd = hd[k - 1]
        if d > wd or (d == wd and rid > hid[k - 1]):
            return count
        pos = k - 1
    else:
        pos = count
        count += 1
    while pos > 0 and (hd[pos - 1] > d or (hd[pos - 1] == d and hid[pos - 1] > rid)):
        hd[pos] = hd[pos - 1]
        hid[pos] = hid[pos - 1]
        hf[pos] = hf[pos - 1]
        pos -= 1
    hd[pos] = d
    hid[pos] = rid
    hf[pos] = flip
    return count


@njit(cache=True, nogil=True)
def _knn_pass(q, data, order, start, end, left, right, lo, hi, n_points,
              inner, outer, mode, holder_factor, k, hd, hid, hf, count,
              flip, dedup, stack_n, stack_b, counters):
    sp = 0
    stack_n[0] = 0
    stack_b[0] = 0.0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack_n[sp]
        b = stack_b[sp]
        if count == k and b * (1.0 - _SLACK) > hd[k - 1]:
            continue
        counters[0] += 1
        lc = left[node]
        if lc < 0:
            counters[1] += 1
            for pos in range(start[node], end[node]):
                cutoff = np.inf
                if count == k:
                    cutoff = hd[k - 1]
                counters[2] += 1
                d = row_distance(q, data, pos, n_points, inner, outer, cutoff)
                if d <= cutoff:
                    count = _heap_insert(hd, hid, hf, count, k, d, order[pos], flip, dedup)
            continue
        rc = right[node]
        bl = box_bound(q, lo, hi, lc, n_points, inner, outer, mode, holder_factor)
        br = box_bound(q, lo, hi, rc, n_points, inner, outer, mode, holder_factor)
        if bl <= br:
            near, bn, far, bf = lc, bl, rc, br
        else:
            near, bn, far, bf = rc, br, lc, bl
        if not (count == k and bf * (1.0 - _SLACK) > hd[k - 1]):
            stack_n[sp] = far
            stack_b[sp] = bf
            sp += 1
        if not (count == k and bn * (1.0 - _SLACK) > hd[k - 1]):
            stack_n[sp] = near
            stack_b[sp] = bn
            sp += 1
    return count


@njit(cache=True, nogil=True)
def _reverse_flat(q, n_points):
    r = np.empty_like(q)
    for k in range(n_points):
        src = 3 * (n_points - 1 - k)
        r[3 * k] = q[src]
        r[3 * k + 1] = q[src + 1]
        r[3 * k + 2] = q[src + 2]
    return r


@njit(cache=True, nogil=True)
def knn_batch(queries, data, order, start, end, left, right, lo, hi, n_points,
              inner, outer, mode, holder_factor, k, use_flip):
    """Exact k nearest rows for every query (rows of ``queries``).

    Returns ``(dist, ids, flipped, counts, counters)``; unused slots hold
    ``inf`` / -1 when fewer than ``k`` rows exist.
    """
    nq = queries.shape[0]
    dist = np.full((nq, k), np.inf)
    ids = np.full((nq, k), -1, np.int64)
    flips = np.zeros((nq, k), np.bool_)
    counts = np.zeros(nq, np.int64)
    counters = np.zeros(3, np.int64)
    depth_cap = start.shape[0] + 1
    stack_n = np.empty(depth_cap, np.int64)
    stack_b = np.empty(depth_cap, np.float64)
    for i in range(nq):
        q = queries[i]
        c = _knn_pass(q, data, order, start, end, left, right, lo, hi, n_points,
                      inner, outer, mode, holder_factor, k, dist[i], ids[i],
                      flips[i], 0, False, False, stack_n, stack_b, counters)
        if use_flip:
            qr = _reverse_flat(q, n_points)
            c = _knn_pass(qr, data, order, start, end, left, right, lo, hi,
                          n_points, inner, outer, mode, holder_factor, k,
                          dist[i], ids[i], flips[i], c, True, True, stack_n,
                          stack_b, counters)
        counts[i] = c
    return dist, ids, flips, counts, counters


@njit(cache=True, nogil=True)
def _radius_pass(q, qi, data, order, start, end, left, right, lo, hi, n_points,
                 inner, outer, mode, holder_factor, radius, min_id, flip,
                 out_q, out_id, out_d, out_f, n_out, stack_n, counters):
    sp = 1
    stack_n[0] = 0
    while sp > 0:
        sp -= 1
        node = stack_n[sp]
        counters[0] += 1
        lc = left[node]
        if lc < 0:
            counters[1] += 1
            for pos in range(start[node], end[node]):
                rid = order[pos]
                if rid <= min_id:
                    continue
                counters[2] += 1
                d = row_distance(q, data, pos, n_points, inner, outer, radius)
                if d <= radius:
                    if n_out == out_id.shape[0]:
                        grow = 2 * n_out + 16
                        nq_ = np.empty(grow, np.int64)
                        ni_ = np.empty(grow, np.int64)
                        nd_ = np.empty(grow, np.float64)
                        nf_ = np.empty(grow, np.bool_)
                        nq_[:n_out] = out_q[:n_out]
                        ni_[:n_out] = out_id[:n_out]
                        nd_[:n_out] = out_d[:n_out]
                        nf_[:n_out] = out_f[:n_out]
                        out_q, out_id, out_d, out_f = nq_, ni_, nd_, nf_
                    out_q[n_out] = qi
                    out_id[n_out] = rid
                    out_d[n_out] = d
                    out_f[n_out] = flip
                    n_out += 1
            continue
        for child in (right[node], lc):
            b = box_bound(q, lo, hi, child, n_points, inner, outer, mode, holder_factor)
            if not b * (1.0 - _SLACK) > radius:
                stack_n[sp] = child
                sp += 1
    return out_q, out_id, out_d, out_f, n_out


@njit(cache=True, nogil=True)
def radius_batch(queries, data, order, start, end, left, right, lo, hi, n_points,
                 inner, outer, mode, holder_factor, radius, use_flip, min_ids):
    """Raw radius hits for every query, unsorted and possibly duplicated per
    id when both orientations match.

    ``min_ids[i]`` restricts query ``i`` to rows with a strictly larger id
    (-1 disables the restriction).
    """
    nq = queries.shape[0]
    cap = 16 * nq + 16
    out_q = np.empty(cap, np.int64)
    out_id = np.empty(cap, np.int64)
    out_d = np.empty(cap, np.float64)
    out_f = np.empty(cap, np.bool_)
    n_out = 0
    counters = np.zeros(3, np.int64)
    stack_n = np.empty(start.shape[0] + 1, np.int64)
    for i in range(nq):
        q = queries[i]
        out_q, out_id, out_d, out_f, n_out = _radius_pass(
            q, i, data, order, start, end, left, right, lo, hi, n_points,
            inner, outer, mode, holder_factor, radius, min_ids[i], False,
            out_q, out_id, out_d, out_f, n_out, stack_n, counters)
        if use_flip:
            qr = _reverse_flat(q, n_points)
            out_q, out_id, out_d, out_f, n_out = _radius_pass(
                qr, i, data, order, start, end, left, right, lo, hi, n_points,
                inner, outer, mode, holder_factor, radius, min_ids[i], True,
                out_q, out_id, out_d, out_f, n_out, stack_n, counters)
    return out_q[:n_out], out_id[:n_out], out_d[:n_out], out_f[:n_out], counters
