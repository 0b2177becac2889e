"""Pure numpy implementations of the fused numeric kernels.

These are the reference semantics for the compiled backend in ``_fast.pyx``;
both operate on C-contiguous float32/float64 arrays and are selected at
import time by :mod:`modnmt._kernels`.
"""

import numpy as np

NAME = "pure"


def softmax2d(x):
    """Row-wise softmax of a 2-D array (stable, max-subtracted)."""
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    e /= np.sum(e, axis=1, keepdims=True)
    return e


def softmax2d_grad(y, g):
    """Backward of softmax2d given its output y and upstream grad g."""
    dot = np.sum(y * g, axis=1, keepdims=True)
    return y * (g - dot)


def layernorm2d(x, gain, bias, eps):
    """Row-wise layer norm.

    Returns (out, xhat, rstd) where xhat is the normalized activation
    before the affine transform and rstd the per-row reciprocal std,
    both needed by the backward pass.
    """
    mu = np.mean(x, axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def layernorm2d_grad(g, xhat, rstd, gain):
    """Backward of layernorm2d. Returns (dx, dgain, dbias)."""
    dgain = np.sum(g * xhat, axis=0)
    dbias = np.sum(g, axis=0)
    dxhat = g * gain
    m1 = np.mean(dxhat, axis=1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    return dx, dgain, dbias


def cross_entropy2d(logits, targets, valid):
    """Summed negative log-softmax of target ids over valid rows.

    Returns (total_nll, probs); the caller is responsible for dividing
    by the number of valid rows.
    """
    m = np.max(logits, axis=1, keepdims=True)
    e = np.exp(logits - m)
    z = np.sum(e, axis=1, keepdims=True)
    probs = e / z
    rows = np.arange(logits.shape[0])
    logp = (logits - m)[rows, targets] - np.log(z[:, 0])
    return float(-np.sum(logp, where=valid)), probs


def cross_entropy2d_grad(probs, targets, valid, scale):
    """Backward of cross_entropy2d; scale = upstream_grad / n_valid."""
    d = probs * scale
    rows = np.arange(probs.shape[0])
    d[rows, targets] -= scale
    d[~valid] = 0.0
    return d


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """One in-place Adam update on flat arrays.

    bc1/bc2 are the bias corrections 1 - beta^t for the current step.
    """
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
