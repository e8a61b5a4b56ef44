"""Independent numpy re-implementations used as test oracles."""

import math

import numpy as np


def attention(w, heads, xq, xk):
    """Loop-over-heads attention; ``w`` is (w_q, w_k, w_v, w_o)."""
    wq, wk, wv, wo = w
    c = wq.shape[0]
    d = c // heads
    q, k, v = xq @ wq, xk @ wk, xk @ wv
    out = np.zeros((xq.shape[0], c))
    for h in range(heads):
        cols = slice(h * d, (h + 1) * d)
        s = q[:, cols] @ k[:, cols].T / math.sqrt(d)
        s = np.exp(s - s.max(axis=1, keepdims=True))
        out[:, cols] = (s / s.sum(axis=1, keepdims=True)) @ v[:, cols]
    return out @ wo


def guided(w, heads, rows, vec):
    """Attend over ``rows`` plus len(rows) copies of ``vec``; keep the visual rows."""
    if vec is None:
        return attention(w, heads, rows, rows)
    seq = np.vstack([rows, np.tile(vec, (len(rows), 1))])
    return attention(w, heads, seq, seq)[: len(rows)]


def spatial(w, heads, grid, vec):
    out = np.empty_like(grid)
    for t in range(grid.shape[1]):
        out[:, t] = guided(w, heads, grid[:, t], vec)
    return out


def temporal(w, heads, grid, vec):
    out = np.empty_like(grid)
    for s in range(grid.shape[0]):
        out[s] = guided(w, heads, grid[s], vec)
    return out


def joint(w, heads, grid, np_vec, vp_vec):
    n_f, t, c = grid.shape
    flat = grid.reshape(n_f * t, c)
    return guided(w, heads, flat, (np_vec + vp_vec) / 2).reshape(n_f, t, c)


def step(params, variant, grid, np_vec, vp_vec):
    sw, tw, jw, heads = params["spatial"], params["temporal"], params.get("joint"), params["heads"]
    if variant == "joint":
        return joint(jw, heads, grid, np_vec, vp_vec)
    if variant == "swap":
        np_vec, vp_vec = vp_vec, np_vec
    if variant == "no-lang":
        np_vec = vp_vec = None
    x = grid
    if variant != "no-spatial":
        x = spatial(sw, heads, x, np_vec)
    if variant != "no-temporal":
        x = temporal(tw, heads, x, vp_vec)
    return x


def refine(params, variant, grid0, pairs):
    w = params["w"]
    if not pairs:
        return grid0
    if variant.startswith("parallel"):
        outs = [grid0 @ w + step(params, variant, grid0, n, v) for n, v in pairs]
        total = sum(outs)
        return total / len(outs) if variant == "parallel-avg" else total
    o = grid0
    for n, v in pairs:
        o = o @ w + step(params, variant, o, n, v)
    return o


def as_dict(params):
    d = {
        "spatial": [p.data for p in params.spatial_attn.parameters()],
        "temporal": [p.data for p in params.temporal_attn.parameters()],
        "w": params.residual_w.data,
        "heads": params.spatial_attn.heads,
    }
    if params.joint_attn is not None:
        d["joint"] = [p.data for p in params.joint_attn.parameters()]
    return d


# ------------------------------------------------------------ metric oracles


def brute_iou(a, b):
    sa, sb = set(range(a.start, a.end)), set(range(b.start, b.end))
    return len(sa & sb) / len(sa | sb)


def brute_rank(queries, n, m):
    hits = 0
    for ranked, gt in queries:
        hits += any(brute_iou(seg, gt) >= m for seg in ranked[:n])
    return hits / len(queries)


def brute_boundary(m):
    h, w = m.shape
    out = np.zeros_like(m)
    for i in range(h):
        for j in range(w):
            if not m[i, j]:
                continue
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                a, b = i + di, j + dj
                if not (0 <= a < h and 0 <= b < w) or not m[a, b]:
                    out[i, j] = True
    return out


def brute_f(pred, gt, r):
    bp, bg = brute_boundary(pred), brute_boundary(gt)
    P, G = list(zip(*np.nonzero(bp))), list(zip(*np.nonzero(bg)))
    if not P and not G:
        return 1.0
    if not P or not G:
        return 0.0
    near = lambda p, S: any(max(abs(p[0] - s[0]), abs(p[1] - s[1])) <= r for s in S)
    prec = sum(near(p, G) for p in P) / len(P)
    rec = sum(near(g, P) for g in G) / len(G)
    return 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)


def brute_j(pred, gt):
    inter = union = 0
    for a, b in zip(pred.ravel(), gt.ravel()):
        inter += bool(a and b)
        union += bool(a or b)
    return 1.0 if union == 0 else inter / union
