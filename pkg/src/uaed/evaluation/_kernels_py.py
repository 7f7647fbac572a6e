"""Pure-Python counterparts of the compiled kernels in ``_kernels.pyx``.

Results are bit-identical to the compiled versions; only speed differs.
"""

import math

import numpy as np


def candidate_pairs(pred, gt, max_dist):
    pred = np.ascontiguousarray(pred, dtype=np.uint8)
    gt = np.ascontiguousarray(gt, dtype=np.uint8)
    H, W = pred.shape
    R = int(math.floor(max_dist))
    r2 = max_dist * max_dist
    pis, gis, dds = [], [], []
    py, px = np.nonzero(pred)
    for dy in range(-R, R + 1):
        for dx in range(-R, R + 1):
            d2 = dy * dy + dx * dx
            if d2 > r2:
                continue
            yy, xx = py + dy, px + dx
            ok = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
            ok[ok] = gt[yy[ok], xx[ok]] > 0
            pis.append(py[ok] * W + px[ok])
            gis.append(yy[ok] * W + xx[ok])
            dds.append(np.full(int(ok.sum()), d2, dtype=np.int64))
    if not pis:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy()
    return (
        np.concatenate(pis).astype(np.int64),
        np.concatenate(gis).astype(np.int64),
        np.concatenate(dds).astype(np.int64),
    )


def greedy_assign(pi, gi, size):
    match_p = np.full(size, -1, dtype=np.int64)
    match_g = np.full(size, -1, dtype=np.int64)
    for a, b in zip(pi.tolist(), gi.tolist()):
        if match_p[a] >= 0 or match_g[b] >= 0:
            continue
        match_p[a] = b
        match_g[b] = a
    return match_p, match_g


def augment(indptr, adj, match_p, match_g):
    indptr = indptr.tolist()
    adj = adj.tolist()
    stamp = [0] * len(match_p)
    n_aug = 0
    for root in range(len(match_p)):
        if match_p[root] >= 0 or indptr[root] == indptr[root + 1]:
            continue
        current = root + 1
        stack = [[root, indptr[root]]]
        via = []
        found = False
        while stack and not found:
            frame = stack[-1]
            u, e = frame
            if e == indptr[u + 1]:
                stack.pop()
                if via and len(via) > len(stack):
                    via.pop()
                continue
            frame[1] = e + 1
            v = adj[e]
            if stamp[v] == current:
                continue
            stamp[v] = current
            del via[len(stack) - 1 :]
            via.append(v)
            w = int(match_g[v])
            if w < 0:
                found = True
            else:
                stack.append([w, indptr[w]])
        if found:
            for (u, _), v in zip(stack, via):
                match_p[u] = v
                match_g[v] = u
            n_aug += 1
    return n_aug


def _interp(E, y, x):
    H, W = E.shape
    y = np.clip(y, 0.0, H - 1.001)
    x = np.clip(x, 0.0, W - 1.001)
    y0 = y.astype(np.intp)
    x0 = x.astype(np.intp)
    fy = y - y0
    fx = x - x0
    return (1.0 - fy) * ((1.0 - fx) * E[y0, x0] + fx * E[y0, x0 + 1]) + fy * (
        (1.0 - fx) * E[y0 + 1, x0] + fx * E[y0 + 1, x0 + 1]
    )


def nms_suppress(E, cos_t, sin_t, radius):
    E = np.ascontiguousarray(E, dtype=np.float64)
    out = np.zeros_like(E)
    ys, xs = np.nonzero(E > 0)
    e = E[ys, xs]
    c = cos_t[ys, xs]
    s = sin_t[ys, xs]
    keep = np.ones(len(ys), dtype=bool)
    for d in range(1, radius + 1):
        fwd = _interp(E, ys + d * s, xs + d * c)
        bwd = _interp(E, ys - d * s, xs - d * c)
        keep &= ~((e < fwd) | (e < bwd))
    out[ys[keep], xs[keep]] = e[keep]
    return out
