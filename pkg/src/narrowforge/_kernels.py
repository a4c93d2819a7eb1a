"""Compiled evaluation kernels.

Deep synthesized networks are extremely narrow (width <= 3) but thousands of
layers deep, so evaluation is loop-bound rather than BLAS-bound.  These
kernels walk the packed layer arrays with per-sample register state.  The
pure numpy twins live in :mod:`narrowforge.backend`; which pair runs is
decided there by the NARROWFORGE_BACKEND environment flag.

fastmath stays off: reassociation would break run-to-run byte determinism.
"""

import math

import numpy as np
from numba import njit

INV_SQRT2 = 1.0 / math.sqrt(2.0)


@njit(cache=True, inline="always")
def _act_scalar(code, p0, p1, x):
    if code == 0:  # identity
        return x
    if code == 1:  # relu
        return x if x > 0.0 else 0.0
    if code == 2:  # leaky_relu
        return x if x >= 0.0 else p0 * x
    if code == 3:  # softplus, stable both tails
        t = p0 * x
        m = t if t > 0.0 else 0.0
        return (m + math.log1p(math.exp(-abs(t)))) / p0
    if code == 4:  # elu
        return x if x > 0.0 else p0 * math.expm1(x)
    if code == 5:  # celu
        return x if x > 0.0 else p0 * math.expm1(x / p0)
    if code == 6:  # selu: p0 = lambda, p1 = alpha
        return p0 * x if x > 0.0 else p0 * (p1 * math.expm1(x))
    if code == 7:  # gelu
        return x * 0.5 * (1.0 + math.erf(x * INV_SQRT2))
    if code == 8:  # silu
        if x >= 0.0:
            return x / (1.0 + math.exp(-x))
        e = math.exp(x)
        return x * e / (1.0 + e)
    if code == 9:  # mish
        m = x if x > 0.0 else 0.0
        sp = m + math.log1p(math.exp(-abs(x)))
        return x * math.tanh(sp)
    return x


@njit(cache=True)
def forward_kernel(dims, offs_w, offs_b, weights, biases, actflags, code, p0, p1, X, out):
    n = X.shape[0]
    L = dims.shape[0] - 1
    maxd = 0
    for i in range(dims.shape[0]):
        if dims[i] > maxd:
            maxd = dims[i]
    cur = np.empty(maxd, dtype=np.float64)
    nxt = np.empty(maxd, dtype=np.float64)
    for s in range(n):
        d = dims[0]
        for j in range(d):
            cur[j] = X[s, j]
        for l in range(L):
            din = dims[l]
            dout = dims[l + 1]
            ow = offs_w[l]
            ob = offs_b[l]
            for r in range(dout):
                acc = biases[ob + r]
                base = ow + r * din
                for cidx in range(din):
                    acc += weights[base + cidx] * cur[cidx]
                nxt[r] = acc
            if actflags[l] == 1:
                for r in range(dout):
                    nxt[r] = _act_scalar(code, p0, p1, nxt[r])
            tmp = cur
            cur = nxt
            nxt = tmp
            d = dout
        for j in range(d):
            out[s, j] = cur[j]
    return out


@njit(cache=True)
def seq_forward_kernel(
    kinds,
    acts,
    d_in_arr,
    d_state_arr,
    d_out_arr,
    offsets,
    flat,
    code,
    p0,
    p1,
    X,
    out,
):
    """Evaluate a stack of (bi)recurrent cells token-wise.

    kinds: 0 = forward recurrence, 1 = bidirectional cell.
    acts: 1 when the recurrence output passes the activation.
    offsets: (n_cells, 8) slots [W1, W2, b, W1b, W2b, bb, A, B] into flat.
    X: (N, T, d0); out: (N, T, d_last).
    """
    n = X.shape[0]
    T = X.shape[1]
    n_cells = kinds.shape[0]
    maxd = X.shape[2]
    for c in range(n_cells):
        if d_state_arr[c] > maxd:
            maxd = d_state_arr[c]
        if d_out_arr[c] > maxd:
            maxd = d_out_arr[c]
    buf_a = np.empty((T, maxd), dtype=np.float64)
    buf_b = np.empty((T, maxd), dtype=np.float64)
    h = np.empty(maxd, dtype=np.float64)
    hf = np.empty((T, maxd), dtype=np.float64)
    hb = np.empty(maxd, dtype=np.float64)
    hb2 = np.empty(maxd, dtype=np.float64)
    for s in range(n):
        d = X.shape[2]
        for t in range(T):
            for j in range(d):
                buf_a[t, j] = X[s, t, j]
        for c in range(n_cells):
            din = d_in_arr[c]
            dst = d_state_arr[c]
            dout = d_out_arr[c]
            o_w1 = offsets[c, 0]
            o_w2 = offsets[c, 1]
            o_b = offsets[c, 2]
            if kinds[c] == 0:
                for j in range(dst):
                    h[j] = 0.0
                for t in range(T):
                    for r in range(dst):
                        acc = flat[o_b + r]
                        base1 = o_w1 + r * dst
                        for k in range(dst):
                            acc += flat[base1 + k] * h[k]
                        base2 = o_w2 + r * din
                        for k in range(din):
                            acc += flat[base2 + k] * buf_a[t, k]
                        buf_b[t, r] = acc
                    if acts[c] == 1:
                        for r in range(dst):
                            buf_b[t, r] = _act_scalar(code, p0, p1, buf_b[t, r])
                    for r in range(dst):
                        h[r] = buf_b[t, r]
            else:
                o_w1b = offsets[c, 3]
                o_w2b = offsets[c, 4]
                o_bb = offsets[c, 5]
                o_A = offsets[c, 6]
                o_B = offsets[c, 7]
                for j in range(dst):
                    h[j] = 0.0
                for t in range(T):
                    for r in range(dst):
                        acc = flat[o_b + r]
                        base1 = o_w1 + r * dst
                        for k in range(dst):
                            acc += flat[base1 + k] * h[k]
                        base2 = o_w2 + r * din
                        for k in range(din):
                            acc += flat[base2 + k] * buf_a[t, k]
                        hf[t, r] = acc
                    if acts[c] == 1:
                        for r in range(dst):
                            hf[t, r] = _act_scalar(code, p0, p1, hf[t, r])
                    for r in range(dst):
                        h[r] = hf[t, r]
                for j in range(dst):
                    hb[j] = 0.0
                for t in range(T - 1, -1, -1):
                    for r in range(dst):
                        acc = flat[o_bb + r]
                        base1 = o_w1b + r * dst
                        for k in range(dst):
                            acc += flat[base1 + k] * hb[k]
                        base2 = o_w2b + r * din
                        for k in range(din):
                            acc += flat[base2 + k] * buf_a[t, k]
                        hb2[r] = acc
                    if acts[c] == 1:
                        for r in range(dst):
                            hb2[r] = _act_scalar(code, p0, p1, hb2[r])
                    for r in range(dst):
                        hb[r] = hb2[r]
                    for r in range(dout):
                        acc = 0.0
                        baseA = o_A + r * dst
                        baseB = o_B + r * dst
                        for k in range(dst):
                            acc += flat[baseA + k] * hf[t, k]
                            acc += flat[baseB + k] * hb[k]
                        buf_b[t, r] = acc
            d = dout
            for t in range(T):
                for j in range(d):
                    buf_a[t, j] = buf_b[t, j]
        for t in range(T):
            for j in range(d):
                out[s, t, j] = buf_a[t, j]
    return out
