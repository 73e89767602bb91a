"""Brute-force reference computations.

Plain loops over float64 values, written independently of the vectorised
operations they check. Slow by design; use only on small inputs.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d(x, w, b=None, stride=1, pad=0):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b_ in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else float(b[oc])
                    for ic in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                r = i * stride + u - pad
                                s = j * stride + v - pad
                                if 0 <= r < h and 0 <= s < wd:
                                    acc += x[b_, ic, r, s] * w[oc, ic, u, v]
                    out[b_, oc, i, j] = acc
    return out


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            out[i, j] = sum(a[i, t] * b[t, j] for t in range(k))
    return out


def softmax_row(row):
    exps = [math.exp(v) for v in row]
    total = sum(exps)
    return [e / total for e in exps]


def mean_pool(x):
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    out = np.zeros((n, c))
    for i in range(n):
        for j in range(c):
            out[i, j] = sum(x[i, j, r, s] for r in range(h) for s in range(w)) / (h * w)
    return out


def _bilinear_sample(img, y, x):
    h, w = img.shape
    y = max(y, 0.0)
    x = max(x, 0.0)
    y0 = min(int(math.floor(y)), h - 1)
    x0 = min(int(math.floor(x)), w - 1)
    y1 = min(y0 + 1, h - 1)
    x1 = min(x0 + 1, w - 1)
    fy, fx = y - y0, x - x0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_bilinear(x, out_h, out_w):
    """Per-pixel bilinear resampling with half-pixel centres (align_corners=False)."""
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    sy, sx = h / out_h, w / out_w
    out = np.zeros((n, c, out_h, out_w))
    for i in range(n):
        for j in range(c):
            for r in range(out_h):
                for s in range(out_w):
                    out[i, j, r, s] = _bilinear_sample(x[i, j], (r + 0.5) * sy - 0.5, (s + 0.5) * sx - 0.5)
    return out


def upsample_bilinear(x, factor):
    x = np.asarray(x)
    return resize_bilinear(x, x.shape[2] * factor, x.shape[3] * factor)


def resize_nearest(mask, out_h, out_w):
    mask = np.asarray(mask)
    h, w = mask.shape[-2:]
    out = np.zeros(mask.shape[:-2] + (out_h, out_w), dtype=mask.dtype)
    for r in range(out_h):
        for s in range(out_w):
            out[..., r, s] = mask[..., min(int((r + 0.5) * h / out_h), h - 1), min(int((s + 0.5) * w / out_w), w - 1)]
    return out


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def attention(q, k, v):
    """softmax(q kᵀ / sqrt(d)) v for a single [T, d] sequence; returns (out, weights)."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    t, d = q.shape
    weights = np.zeros((t, k.shape[0]))
    for i in range(t):
        logits = [sum(q[i, c] * k[j, c] for c in range(d)) / math.sqrt(d) for j in range(k.shape[0])]
        weights[i] = softmax_row(logits)
    out = np.zeros((t, v.shape[1]))
    for i in range(t):
        for c in range(v.shape[1]):
            out[i, c] = sum(weights[i, j] * v[j, c] for j in range(k.shape[0]))
    return out, weights


def dense(x, w, b):
    """Row vector times [in, out] weight plus bias."""
    return [sum(x[i] * w[i, j] for i in range(len(x))) + b[j] for j in range(w.shape[1])]


def encoder_attention(pooled, p):
    """Global context for one sample from its five pooled stage vectors."""
    tokens = np.array([dense(vec, p[f"ea.proj{i}.w"], p[f"ea.proj{i}.b"])
                       for i, vec in enumerate(pooled, start=1)])
    zero = np.zeros(tokens.shape[1])
    q = np.array([dense(t, p["ea.q.w"], zero) for t in tokens])
    k = np.array([dense(t, p["ea.k.w"], zero) for t in tokens])
    v = np.array([dense(t, p["ea.v.w"], zero) for t in tokens])
    out, weights = attention(q, k, v)
    return out.mean(axis=0), weights


def kernel_mlp(g, p):
    h = [max(0.0, v) for v in dense(g, p["dk.phi1.w"], p["dk.phi1.b"])]
    return np.array(dense(h, p["dk.phi2.w"], p["dk.phi2.b"]))


def predict(k, d, bias):
    """Logits [H, W] of one sample: per-pixel dot product of kernel and features."""
    c, h, w = d.shape
    out = np.zeros((h, w))
    for r in range(h):
        for s in range(w):
            out[r, s] = sum(k[ch] * d[ch, r, s] for ch in range(c)) + bias
    return out


def assemble(d, prev_logits):
    """Foreground-probability-weighted mean of [C,H,W] features; prev is [H/2, W/2] logits."""
    c, h, w = d.shape
    up = upsample_bilinear(np.asarray(prev_logits)[None, None], 2)[0, 0]
    out = np.zeros(c)
    for ch in range(c):
        out[ch] = sum(d[ch, r, s] * sigmoid(up[r, s]) for r in range(h) for s in range(w)) / (h * w)
    return out


def update_kernel(a, k_prev, p):
    """Linear split, gate, and convex blend for one sample; returns (kernel, gate)."""
    c = len(k_prev)
    both = dense(a, p["dk.split.w"], p["dk.split.b"])
    feat, gate_in = both[:c], both[c:]
    gated = [gate_in[i] * k_prev[i] for i in range(c)]
    g = [sigmoid(z) for z in dense(gated, p["dk.gate.w"], p["dk.gate.b"])]
    k = np.array([g[i] * feat[i] + (1.0 - g[i]) * k_prev[i] for i in range(c)])
    return k, np.array(g)


def run_head(g, decoder_stages, p):
    """Chained head for one sample; decoder_stages[i-1] is D_i [C,H,W]. Returns logits P5..P1."""
    bias = float(np.asarray(p["dk.pred.b"]).ravel()[0])
    k = kernel_mlp(g, p)
    preds = [predict(k, decoder_stages[4], bias)]
    for i in range(4, 0, -1):
        a = assemble(decoder_stages[i - 1], preds[-1])
        k, _ = update_kernel(a, k, p)
        preds.append(predict(k, decoder_stages[i - 1], bias))
    return preds


def bce(logits, target):
    z = np.asarray(logits, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    total = 0.0
    for zi, ti in zip(z, t):
        p = sigmoid(zi)
        total += -(ti * math.log(p) + (1 - ti) * math.log(1 - p))
    return total / len(z)


def dice_loss(logits, target, eps=1.0):
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    per = []
    for zi, ti in zip(z, t):
        ps = [sigmoid(v) for v in zi.ravel()]
        ts = list(ti.ravel())
        inter = sum(a * b for a, b in zip(ps, ts))
        per.append(1.0 - (2 * inter + eps) / (sum(ps) + sum(ts) + eps))
    return sum(per) / len(per)


def confusion(pred, truth):
    tp = fp = tn = fn = 0
    for p_, t_ in zip(np.asarray(pred).ravel(), np.asarray(truth).ravel()):
        if p_ and t_:
            tp += 1
        elif p_:
            fp += 1
        elif t_:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def metrics_from_counts(tp, fp, tn, fn):
    def r(a, b):
        return 1.0 if b == 0 else a / b
    iou_p = r(tp, tp + fp + fn)
    iou_b = r(tn, tn + fp + fn)
    return {
        "recall": r(tp, tp + fn), "specificity": r(tn, tn + fp), "precision": r(tp, tp + fp),
        "dice": r(2 * tp, 2 * tp + fp + fn), "iou_p": iou_p, "iou_b": iou_b,
        "miou": (iou_p + iou_b) / 2, "accuracy": r(tp + tn, tp + fp + tn + fn),
    }
