"""Naive reference implementations used as independent test oracles.

Everything here is deliberately written with explicit Python loops and scalar
math so it shares no code path with the library's vectorized versions.
"""

import math

import numpy as np


def cosine(x, y):
    num = sum(a * b for a, b in zip(x, y))
    nx = math.sqrt(sum(a * a for a in x))
    ny = math.sqrt(sum(b * b for b in y))
    return num / (nx * ny)


def naive_attention_side(a_t, a_s):
    """1 - mean over (layer, head) cosine of flattened maps; [L, H, S, S] arrays."""
    layers, heads = a_t.shape[0], a_t.shape[1]
    if layers == 0:
        return 0.0
    total = 0.0
    for l in range(layers):
        for i in range(heads):
            total += cosine(a_t[l, i].ravel().tolist(), a_s[l, i].ravel().tolist())
    return 1.0 - total / (layers * heads)


def naive_attention_loss(t_enc, s_enc, t_dec, s_dec):
    return naive_attention_side(t_enc, s_enc) + naive_attention_side(t_dec, s_dec)


def softmax_row(row):
    m = max(row)
    exps = [math.exp(v - m) for v in row]
    z = sum(exps)
    return [e / z for e in exps]


def naive_caks(e_t, e_s, w_q, w_k, num_heads):
    """Brute-force selection: per-head cross attention, head average, score,
    stable descending sort, gather.

    w_q: [attn_dim, student_dim], w_k: [attn_dim, teacher_dim] (torch Linear
    weight layout, y = x W^T).
    """
    s_len, d_t = e_t.shape
    d_s = e_s.shape[1]
    attn_dim = w_q.shape[0]
    head_dim = attn_dim // num_heads
    q = np.array([[sum(e_s[l, j] * w_q[o, j] for j in range(d_s)) for o in range(attn_dim)]
                  for l in range(s_len)])
    k = np.array([[sum(e_t[l, j] * w_k[o, j] for j in range(d_t)) for o in range(attn_dim)]
                  for l in range(s_len)])
    attn = np.zeros((s_len, s_len))
    for h in range(num_heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        for l in range(s_len):
            logits = [
                sum(q[l, o] * k[m, o] for o in range(lo, hi)) / math.sqrt(head_dim)
                for m in range(s_len)
            ]
            probs = softmax_row(logits)
            for m in range(s_len):
                attn[l, m] += probs[m] / num_heads
    scores = np.zeros(d_t)
    for d in range(d_t):
        total = 0.0
        for l in range(s_len):
            for m in range(s_len):
                total += attn[l, m] * e_t[m, d]
        scores[d] = total
    order = sorted(range(d_t), key=lambda d: (-scores[d], d))
    indices = order[:d_s]
    filtered = np.zeros((s_len, d_s))
    for l in range(s_len):
        for j in range(d_s):
            filtered[l, j] = e_t[l, indices[j]]
    return np.array(indices), filtered, attn, scores


def naive_row_cosine_loss(filtered, e_s):
    """1 - mean over rows of cosine(filtered row, student row)."""
    s_len = filtered.shape[0]
    total = 0.0
    for l in range(s_len):
        total += cosine(filtered[l].tolist(), e_s[l].tolist())
    return 1.0 - total / s_len


def naive_masked_mse(h_hat, h, masked_entries):
    """Mean |H[e] - H_hat[e]|^2 over an iterable of (t, k, n) entries."""
    total = 0.0
    count = 0
    for t, k, n in masked_entries:
        d = h[t, k, n] - h_hat[t, k, n]
        total += d.real * d.real + d.imag * d.imag
        count += 1
    return total / count


def masked_entries_of(mask, coords, patch, dims):
    """All tensor entries covered by the masked tokens of a MaskSet."""
    out = []
    for g in mask.masked_idx:
        ct, ck, cn = coords[g]
        for dt in range(patch.t):
            for dk in range(patch.k):
                for dn in range(patch.n):
                    out.append((ct * patch.t + dt, ck * patch.k + dk, cn * patch.n + dn))
    return out


def fd_gradient(fn, x, eps):
    """Central finite differences of scalar fn at numpy array x."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        f_plus = fn(x)
        x[idx] = orig - eps
        f_minus = fn(x)
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2 * eps)
        it.iternext()
    return grad


def param_count_by_enumeration(model):
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
