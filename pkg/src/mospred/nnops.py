"""Minimal dense/conv building blocks with explicit backward passes.

Forward functions return ``(output, cache)``; the matching backward takes the
upstream gradient plus the cache and returns input/parameter gradients.
Computation happens in float64 regardless of parameter dtype; parameter
gradients come back in float64 and are cast by the optimizer on update.
"""

from __future__ import annotations

import numpy as np


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """x: (..., Din), weight: (Din, Dout), bias: (Dout,)."""
    y = x @ np.asarray(weight, dtype=np.float64) + np.asarray(bias, dtype=np.float64)
    return y, (x, weight)


def linear_backward(dy: np.ndarray, cache):
    x, weight = cache
    flat_x = x.reshape(-1, x.shape[-1])
    flat_dy = dy.reshape(-1, dy.shape[-1])
    dw = flat_x.T @ flat_dy
    db = flat_dy.sum(axis=0)
    dx = dy @ np.asarray(weight, dtype=np.float64).T
    return dx, dw, db


def conv1d_same_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """Time convolution with zero 'same' padding.

    x: (B, T, Cin), weight: (K, Cin, Cout) with odd K, bias: (Cout,).
    """
    k = weight.shape[0]
    pad = k // 2
    w64 = np.asarray(weight, dtype=np.float64)
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    t = x.shape[1]
    y = np.asarray(bias, dtype=np.float64) + sum(
        xp[:, j : j + t, :] @ w64[j] for j in range(k)
    )
    return y, (xp, weight, t)


def conv1d_same_backward(dy: np.ndarray, cache):
    xp, weight, t = cache
    k = weight.shape[0]
    pad = k // 2
    w64 = np.asarray(weight, dtype=np.float64)
    dw = np.empty_like(w64)
    dxp = np.zeros_like(xp)
    for j in range(k):
        x_slice = xp[:, j : j + t, :]
        dw[j] = np.tensordot(x_slice, dy, axes=([0, 1], [0, 1]))
        dxp[:, j : j + t, :] += dy @ w64[j].T
    db = dy.sum(axis=(0, 1))
    dx = dxp[:, pad : pad + t, :] if pad else dxp
    return dx, dw, db


def tanh_forward(x: np.ndarray):
    y = np.tanh(x)
    return y, y


def tanh_backward(dy: np.ndarray, cache):
    y = cache
    return dy * (1.0 - y * y)


def relu_forward(x: np.ndarray):
    y = np.maximum(x, 0.0)
    return y, (x > 0.0)


def relu_backward(dy: np.ndarray, cache):
    return dy * cache


ACTIVATIONS = {
    "tanh": (tanh_forward, tanh_backward),
    "relu": (relu_forward, relu_backward),
}


def numeric_gradient(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function; test utility."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        hi = fn(x)
        x[idx] = orig - eps
        lo = fn(x)
        x[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * eps)
        it.iternext()
    return grad
