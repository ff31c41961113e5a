"""Pure-numpy versions of the fused kernels (always importable)."""

import numpy as np


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def masked_softmax(x, mask=None):
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(out, g):
    return out * (g - (g * out).sum(axis=-1, keepdims=True))


def lstm_forward(gates, c_prev):
    H = c_prev.shape[1]
    i = sigmoid(gates[:, :H])
    f = sigmoid(gates[:, H:2 * H])
    g = np.tanh(gates[:, 2 * H:3 * H])
    o = sigmoid(gates[:, 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    hc = np.concatenate([o * tc, c], axis=1)
    return hc, np.concatenate([i, f, g, o, tc], axis=1)


def lstm_backward(dhc, c_prev, cache):
    H = c_prev.shape[1]
    i, f, g, o, tc = (cache[:, k * H:(k + 1) * H] for k in range(5))
    dh = dhc[:, :H]
    dc = dhc[:, H:] + dh * o * (1.0 - tc * tc)
    dgates = np.concatenate([
        dc * g * i * (1.0 - i),
        dc * c_prev * f * (1.0 - f),
        dc * i * (1.0 - g * g),
        dh * tc * o * (1.0 - o),
    ], axis=1)
    return dgates, dc * f
