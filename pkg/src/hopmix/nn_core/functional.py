"""Differentiable operations on :class:`Tensor`.

Broadcasting is limited to three cases: identical shapes, a Python scalar, and
a rank-1 operand matching the trailing dimension (per-row bias).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

from .tensor import ShapeError, Tensor, as_tensor

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class DegenerateInput(ValueError):
    """The Lagrangian normalizer was asked to normalize a constant vector."""


def _operand(x):
    if isinstance(x, Tensor):
        return x
    if np.isscalar(x):
        return float(x)
    return Tensor(x)


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape:
        return
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return
    if a.ndim == 1 and b.ndim >= 1 and b.shape[-1] == a.shape[0]:
        return
    if a.ndim == 0 or b.ndim == 0:
        return
    raise ShapeError(f"cannot combine shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    return g.reshape(-1, shape[-1]).sum(axis=0)


def add(a, b) -> Tensor:
    a, b = _operand(a), _operand(b)
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        return Tensor._from_op(a.data + b, (a,), lambda g: (g,))
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape

    def _add_backward(g):
        return _reduce_to(g, sa), _reduce_to(g, sb)

    return Tensor._from_op(a.data + b.data, (a, b), _add_backward)


def sub(a, b) -> Tensor:
    a, b = _operand(a), _operand(b)
    if not isinstance(b, Tensor):
        return add(a, -b)
    return add(a, mul(b, -1.0))


def mul(a, b) -> Tensor:
    a, b = _operand(a), _operand(b)
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        s = b
        return Tensor._from_op(a.data * s, (a,), lambda g: (g * s,))
    _check_broadcast(a.data, b.data)
    ad, bd = a.data, b.data

    def _mul_backward(g):
        return _reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)

    return Tensor._from_op(ad * bd, (a, b), _mul_backward)


def matmul(a, b) -> Tensor:
    """``a[..., k] @ b[k, n]``; ``b`` must be a matrix."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def _matmul_backward(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return Tensor._from_op(ad @ bd, (a, b), _matmul_backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as (out, in)."""
    x = as_tensor(x)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} vs weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def _linear_backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd
        gw = g2.T @ xd.reshape(-1, xd.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, _linear_backward)


def swap_last(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return Tensor._from_op(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.shape
    return Tensor._from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return Tensor._from_op(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        n = x.size
        shape = x.shape
        return Tensor._from_op(np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))
    ax = axis % x.ndim
    n = x.shape[ax]

    def _mean_backward(g):
        return (np.repeat(np.expand_dims(g, ax), n, axis=ax) / n,)

    return Tensor._from_op(x.data.mean(axis=ax), (x,), _mean_backward)


def gelu_np(x: np.ndarray) -> np.ndarray:
    """Exact GELU ``x * Phi(x)`` with Phi evaluated by ``ndtr`` (no cancellation in the left tail)."""
    return x * ndtr(x)


def gelu_grad_np(x: np.ndarray) -> np.ndarray:
    return ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def gelu(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    cdf = ndtr(xd)

    def _gelu_backward(g):
        return (g * (cdf + xd * _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)),)

    return Tensor._from_op(xd * cdf, (x,), _gelu_backward)


def lagrangian_g_np(v: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Gradient of ``sqrt(sum((v - mean(v))**2))`` along the last axis, regularized by ``eps``."""
    c = v - v.mean(axis=-1, keepdims=True)
    ss = np.sum(c * c, axis=-1, keepdims=True)
    if eps == 0.0 and np.any(ss == 0.0):
        raise DegenerateInput("constant vector has no normalized direction (eps=0)")
    return c / np.sqrt(ss + eps)


def lagrangian_g(v, eps: float = 1e-12) -> Tensor:
    v = as_tensor(v)
    c = v.data - v.data.mean(axis=-1, keepdims=True)
    ss = np.sum(c * c, axis=-1, keepdims=True)
    if eps == 0.0 and np.any(ss == 0.0):
        raise DegenerateInput("constant vector has no normalized direction (eps=0)")
    r = np.sqrt(ss + eps)
    y = c / r

    def _g_backward(g):
        dc = g / r - c * np.sum(c * g, axis=-1, keepdims=True) / r**3
        return (dc - dc.mean(axis=-1, keepdims=True),)

    return Tensor._from_op(y, (v,), _g_backward)


def layernorm_affine(x, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean, unit (population) variance, then scale and shift."""
    x = as_tensor(x)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layernorm: input {x.shape} vs gamma {gamma.shape}, beta {beta.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    c = xd - mu
    var = np.mean(c * c, axis=-1, keepdims=True)
    s = np.sqrt(var + eps)
    xhat = c / s
    out = xhat * gamma.data + beta.data

    def _ln_backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        dgamma = np.sum(g2 * xhat.reshape(g2.shape), axis=0)
        dbeta = g2.sum(axis=0)
        dxhat = g * gamma.data
        dx = (dxhat - dxhat.mean(axis=-1, keepdims=True)
              - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)) / s
        return dx, dgamma, dbeta

    return Tensor._from_op(out, (x, gamma, beta), _ln_backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-feature normalization over every axis but the last.

    In training mode batch statistics are used and the running buffers are
    updated in place; otherwise the running statistics apply.
    """
    xd = x.data
    flat = xd.reshape(-1, xd.shape[-1])
    if not training:
        scale = gamma.data / np.sqrt(running_var + eps)
        out = (xd - running_mean) * scale + beta.data
        xhat = (xd - running_mean) / np.sqrt(running_var + eps)

        def _bn_eval_backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            return g * scale, np.sum(g2 * xhat.reshape(g2.shape), axis=0), g2.sum(axis=0)

        return Tensor._from_op(out, (x, gamma, beta), _bn_eval_backward)

    m = flat.shape[0]
    mu = flat.mean(axis=0)
    c = flat - mu
    var = np.mean(c * c, axis=0)
    s = np.sqrt(var + eps)
    xhat = c / s
    out = (xhat * gamma.data + beta.data).reshape(xd.shape)
    running_mean *= 1.0 - momentum
    running_mean += momentum * mu
    running_var *= 1.0 - momentum
    running_var += momentum * var * (m / max(m - 1, 1))

    def _bn_backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        dgamma = np.sum(g2 * xhat, axis=0)
        dbeta = g2.sum(axis=0)
        dxhat = g2 * gamma.data
        dx = (dxhat - dxhat.mean(axis=0) - xhat * np.mean(dxhat * xhat, axis=0)) / s
        return dx.reshape(xd.shape), dgamma, dbeta

    return Tensor._from_op(out, (x, gamma, beta), _bn_backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,))


def log_softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, labels, smoothing: float = 0.0) -> Tensor:
    """Mean negative log-likelihood with optional label smoothing."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape}, labels {labels.shape}")
    b, k = logits.shape
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"label out of range [0, {k})")
    logp = log_softmax_np(logits.data)
    target = np.full((b, k), smoothing / k)
    target[np.arange(b), labels] += 1.0 - smoothing
    loss = -np.sum(target * logp) / b

    def _ce_backward(g):
        return (float(g) * (np.exp(logp) - target) / b,)

    return Tensor._from_op(np.asarray(loss), (logits,), _ce_backward)
