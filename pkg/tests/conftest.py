"""Shared helpers: naive oracles kept independent of the library paths."""

import math

import numpy as np
import pytest


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def naive_conv1d(x, w, b, stride=1, padding="same"):
    """Sliding-window loop over [C, L] input and [O, C, K] kernels."""
    channels, length = x.shape
    out_c, _, k = w.shape
    if padding == "same":
        out_len = math.ceil(length / stride)
        total = max((out_len - 1) * stride + k - length, 0)
        left = total // 2
        xp = np.pad(x, ((0, 0), (left, total - left)))
    else:
        out_len = (length - k) // stride + 1
        xp = x
    y = np.zeros((out_c, out_len))
    for o in range(out_c):
        for t in range(out_len):
            acc = b[o]
            for c in range(channels):
                for tap in range(k):
                    acc += w[o, c, tap] * xp[c, t * stride + tap]
            y[o, t] = acc
    return y


def naive_maxpool1d(x, pool, stride):
    """Per-window scan over [C, L]; partial tail window kept."""
    channels, length = x.shape
    n_windows = 1 + math.ceil((length - pool) / stride)
    if (n_windows - 1) * stride >= length:
        n_windows -= 1
    y = np.zeros((channels, n_windows))
    idx = np.zeros((channels, n_windows), dtype=np.int64)
    for c in range(channels):
        for t in range(n_windows):
            start = t * stride
            window = x[c, start:min(start + pool, length)]
            best = 0
            for j in range(1, len(window)):
                if window[j] > window[best]:
                    best = j
            y[c, t] = window[best]
            idx[c, t] = start + best
    return y, idx


def naive_softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def naive_attention(values, w_a, q):
    keys = np.tanh(values @ w_a)
    weights = naive_softmax(q @ keys.T)
    return weights @ values, weights


def naive_bilstm(x, params):
    """Step-by-step unrolled re-implementation over [T, D] input."""
    hid = params.hidden_size

    def gates(d, x_t, h_prev):
        z = d.w_x.data @ x_t + d.w_h.data @ h_prev + d.b.data
        sig = lambda v: 1.0 / (1.0 + np.exp(-v))
        return sig(z[:hid]), sig(z[hid:2 * hid]), np.tanh(z[2 * hid:3 * hid]), sig(z[3 * hid:])

    def run(d, seq):
        h = np.zeros(hid)
        c = np.zeros(hid)
        states = []
        for x_t in seq:
            gi, gf, gg, go = gates(d, x_t, h)
            c = gf * c + gi * gg
            h = go * np.tanh(c)
            states.append(h)
        return np.array(states)

    fwd = run(params.fwd, list(x))
    bwd = run(params.bwd, list(x[::-1]))[::-1]
    return np.concatenate([fwd, bwd], axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
