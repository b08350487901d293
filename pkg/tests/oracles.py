"""Slow, loop-based reference implementations.

Nothing here imports the package under test; these are written from the
definitions with explicit Python loops over plain arrays.
"""

import math

import numpy as np


def central_diff(f, x, h=1e-4):
    """Central finite-difference gradient of scalar ``f`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def max_rel_err(g_ad, g_fd):
    return float(np.max(np.abs(g_ad - g_fd) / np.maximum(1.0, np.abs(g_fd)))) if g_fd.size else 0.0


def matmul_loop(a, b):
    p, q = a.shape
    r = b.shape[1]
    out = np.zeros((p, r))
    for i in range(p):
        for j in range(r):
            s = 0.0
            for k in range(q):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def conv1d_loop(x, kernel, bias):
    c_out, c_in, k = kernel.shape
    length = x.shape[1]
    half = (k - 1) // 2
    out = np.zeros((c_out, length))
    for o in range(c_out):
        for n in range(length):
            s = bias[o]
            for c in range(c_in):
                for j in range(k):
                    pos = n - half + j
                    if 0 <= pos < length:
                        s += kernel[o, c, j] * x[c, pos]
            out[o, n] = s
    return out


def maxpool_loop(x, axis, window, stride):
    """Valid (unpadded) windows; returns values and the first argmax of each window."""
    v = x if axis == 1 else x.T
    rows, n = v.shape
    starts = list(range(0, n - window + 1, stride))
    out = np.zeros((rows, len(starts)))
    arg = np.zeros((rows, len(starts)), dtype=int)
    for r in range(rows):
        for o, s in enumerate(starts):
            best, best_i = -math.inf, -1
            for i in range(s, s + window):
                if v[r, i] > best:
                    best, best_i = v[r, i], i
            out[r, o], arg[r, o] = best, best_i
    return (out if axis == 1 else out.T), arg


def same_maxpool_1d(v, window):
    n = len(v)
    left = (window - 1) // 2
    out = np.zeros(n)
    for i in range(n):
        out[i] = max(v[j] for j in range(i - left, i - left + window) if 0 <= j < n)
    return out


def project_loop(W, b, E):
    F, D = W.shape
    out = np.zeros((F, E.shape[1]))
    for n in range(E.shape[1]):
        for f in range(F):
            s = b[f]
            for d in range(D):
                s += W[f, d] * E[d, n]
            out[f, n] = s
    return out


def scaled_dot_loop(W, b, Em, Ex):
    pm, px = project_loop(W, b, Em), project_loop(W, b, Ex)
    F = W.shape[0]
    G = np.zeros((Em.shape[1], Ex.shape[1]))
    for n in range(Em.shape[1]):
        for x in range(Ex.shape[1]):
            G[n, x] = sum(pm[f, n] * px[f, x] for f in range(F)) / math.sqrt(F)
    return G


def attention_score_loop(G, kernel, bias, k2):
    n_words, n_ent = G.shape
    x = np.array([[G[n, c] for n in range(n_words)] for c in range(n_ent)])
    conv = conv1d_loop(x, kernel, bias)
    act = np.array([[max(v, 0.0) for v in row] for row in conv])
    chan = np.array([max(act[c, n] for c in range(n_ent)) for n in range(n_words)])
    return same_maxpool_1d(chan, k2)


def softmax_loop(u, mask=None):
    idx = [i for i in range(len(u)) if mask is None or mask[i]]
    m = max(u[i] for i in idx)
    e = {i: math.exp(u[i] - m) for i in idx}
    tot = sum(e.values())
    return np.array([e[i] / tot if i in e else 0.0 for i in range(len(u))])


def weighted_pool_loop(Em, u, mask=None):
    alpha = softmax_loop(u, mask)
    z = np.zeros(Em.shape[0])
    for n in range(Em.shape[1]):
        for d in range(Em.shape[0]):
            z[d] += alpha[n] * Em[d, n]
    return alpha, z


def dense_loop(W, b, x):
    return np.array([b[i] + sum(W[i, j] * x[j] for j in range(len(x))) for i in range(W.shape[0])])


def sigmoid_scalar(t):
    return 1.0 / (1.0 + math.exp(-t)) if t >= 0 else math.exp(t) / (1.0 + math.exp(t))


def fusion_loop(p, zE, zY):
    h = dense_loop(p["fuse.W"], p["fuse.b"], list(zE) + list(zY))
    h = dense_loop(p["mid.W"], p["mid.b"], h)
    logits = dense_loop(p["out.W"], p["out.b"], h)
    return np.array([sigmoid_scalar(t) for t in logits])


def bce_loop(y_hat, y, eps=1e-12):
    s = 0.0
    for p, t in zip(y_hat, y):
        p = min(max(p, eps), 1 - eps)
        s += t * math.log(p) + (1 - t) * math.log(1 - p)
    return -s / len(y)


def entity_mean_loop(table, entities):
    out = np.zeros((table.shape[1], len(entities)))
    for i, ent in enumerate(entities):
        ids = [t for t in ent if t != 0]
        for d in range(table.shape[1]):
            out[d, i] = sum(table[t, d] for t in ids) / len(ids)
    return out


def lerp_forward_loop(p, table, tokens, events, labels, k2):
    """Whole LERP graph for one unpadded record, from raw arrays."""
    Em = np.array([[table[t, d] for t in tokens] for d in range(table.shape[1])])
    EE = entity_mean_loop(table, events)
    EY = entity_mean_loop(table, labels)
    n_ev = len(events)
    k = p["event_conv.W"].shape[2]
    ev_kernel = np.zeros((n_ev, n_ev, k))
    for c in range(n_ev):
        ev_kernel[c, c, :] = p["event_conv.W"][0, 0, :]
    ev_bias = np.full(n_ev, p["event_conv.b"][0])
    uE = attention_score_loop(scaled_dot_loop(p["proj.W"], p["proj.b"], Em, EE), ev_kernel, ev_bias, k2)
    uY = attention_score_loop(
        scaled_dot_loop(p["proj.W"], p["proj.b"], Em, EY), p["label_conv.W"], p["label_conv.b"], k2
    )
    aE, zE = weighted_pool_loop(Em, uE)
    aY, zY = weighted_pool_loop(Em, uY)
    return fusion_loop(p, zE, zY), aE, aY


def auc_pairwise(scores, targets):
    pos = [s for s, t in zip(scores, targets) if t == 1]
    neg = [s for s, t in zip(scores, targets) if t == 0]
    credit = 0.0
    for a in pos:
        for b in neg:
            credit += 1.0 if a > b else 0.5 if a == b else 0.0
    return credit / (len(pos) * len(neg))


def confusion_loop(scores, targets, threshold):
    """Per-label [tp, fp, fn] by explicit counting."""
    out = []
    for j in range(scores.shape[1]):
        tp = fp = fn = 0
        for i in range(scores.shape[0]):
            pred = scores[i, j] >= threshold
            if pred and targets[i, j] == 1:
                tp += 1
            elif pred:
                fp += 1
            elif targets[i, j] == 1:
                fn += 1
        out.append((tp, fp, fn))
    return out


def precision_recall_loop(scores, targets, threshold=0.5):
    counts = confusion_loop(scores, targets, threshold)

    def ratio(a, b):
        return a / b if b else 0.0

    TP = sum(c[0] for c in counts)
    FP = sum(c[1] for c in counts)
    FN = sum(c[2] for c in counts)
    macro_p = sum(ratio(tp, tp + fp) for tp, fp, _ in counts) / len(counts)
    macro_r = sum(ratio(tp, tp + fn) for tp, _, fn in counts) / len(counts)
    return ratio(TP, TP + FP), macro_p, ratio(TP, TP + FN), macro_r
