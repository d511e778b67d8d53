"""Numpy implementations of the hot kernels.

This is the fallback backend selected when the compiled extension is not
built. Both backends expose an identical API operating on float64 arrays;
`tests/test_kernels.py` pins them against each other.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def softmax_fwd(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    dot = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - dot)


def layer_norm_fwd(x, gain, bias, eps):
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    y = xhat * gain + bias
    return y, xhat, inv_std[:, 0].copy()


def layer_norm_bwd(dy, xhat, inv_std, gain):
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * gain
    term = dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = term * inv_std[:, None]
    return dx, dgain, dbias


def gelu_fwd(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_bwd(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return dy * (cdf + x * pdf)


def cross_entropy_fwd(logits, labels, mask):
    probs = softmax_fwd(logits)
    n_masked = int(mask.sum())
    rows = np.arange(logits.shape[0])
    picked = probs[rows, labels]
    losses = -np.log(picked)
    loss = float((losses * mask).sum() / n_masked)
    return loss, probs


def cross_entropy_bwd(probs, labels, mask, dloss):
    n_masked = int(mask.sum())
    dlogits = probs.copy()
    rows = np.arange(probs.shape[0])
    dlogits[rows, labels] -= 1.0
    dlogits *= (mask * (dloss / n_masked))[:, None]
    return dlogits


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    """In-place decoupled-weight-decay Adam step on flat float64 views."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / bc1
    vhat = v / bc2
    p -= lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * p)


def lcs_length(a: np.ndarray, b: np.ndarray) -> int:
    """Longest common subsequence length of two int32 id sequences."""
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        return 0
    prev = np.zeros(m + 1, dtype=np.int64)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        eq = (b == a[i]).astype(np.int64)
        np.maximum.accumulate(np.maximum(prev[1:], prev[:-1] + eq), out=cur[1:])
        prev, cur = cur, prev
    return int(prev[m])
