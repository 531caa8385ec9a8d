"""Forward/backward primitives for the convolutional encoder and MLP heads.

Each ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` consumes the cache. Arrays keep the dtype of their inputs.
"""

from __future__ import annotations

import numpy as np

from . import kernels


def conv3x3_forward(x, w, stride, groups):
    """Grouped 3x3 convolution with zero padding 1 and no bias.

    ``x`` is (N, C, H, W) and ``w`` is (C_out, C / groups, 3, 3).
    """
    n, c, h, wd = x.shape
    c_out = w.shape[0]
    cg, og = c // groups, c_out // groups
    cols = kernels.im2col(x, stride)
    ho, wo = cols.shape[-2:]
    cols = cols.reshape(n, groups, cg * 9, ho * wo)
    wg = w.reshape(groups, og, cg * 9)
    out = np.matmul(wg[None], cols).reshape(n, c_out, ho, wo)
    return out, (cols, (h, wd), stride, groups)


def conv3x3_backward(dout, cache, w, need_dx=True):
    cols, (h, wd), stride, groups = cache
    n, c_out, ho, wo = dout.shape
    og = c_out // groups
    dg = dout.reshape(n, groups, og, ho * wo)
    dw = np.matmul(dg, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape)
    if not need_dx:
        return None, dw
    wg = w.reshape(groups, og, -1)
    dcols = np.matmul(wg.transpose(0, 2, 1)[None], dg)
    c = dcols.shape[1] * dcols.shape[2] // 9
    dx = kernels.col2im(dcols.reshape(n, c, 3, 3, ho, wo), h, wd, stride)
    return dx, dw


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, momentum=0.1, eps=1e-5):
    """Batch normalization over every axis except 1 (channels / features).

    In train mode batch statistics are used and updated running statistics
    are returned alongside; in eval mode the running statistics are used and
    the returned stats are ``None``.
    """
    axes = (0,) + tuple(range(2, x.ndim))
    shape = [1] * x.ndim
    shape[1] = -1
    if train:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        count = x.size // x.shape[1]
        unbiased = var * count / max(count - 1, 1)
        new_stats = ((1 - momentum) * running_mean + momentum * mean,
                     (1 - momentum) * running_var + momentum * unbiased)
    else:
        mean, var, new_stats = running_mean, running_var, None
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = xhat * gamma.reshape(shape) + beta.reshape(shape)
    return out, (xhat, inv_std, gamma, train, axes, shape), new_stats


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, train, axes, shape = cache
    dgamma = np.sum(dout * xhat, axis=axes)
    dbeta = np.sum(dout, axis=axes)
    dxhat = dout * gamma.reshape(shape)
    if not train:
        return dxhat * inv_std.reshape(shape), dgamma, dbeta
    m = dout.size // dout.shape[1]
    s1 = np.sum(dxhat, axis=axes).reshape(shape)
    s2 = np.sum(dxhat * xhat, axis=axes).reshape(shape)
    dx = (inv_std.reshape(shape) / m) * (m * dxhat - s1 - xhat * s2)
    return dx, dgamma, dbeta


def relu_forward(x):
    out = np.maximum(x, 0)
    return out, out > 0


def relu_backward(dout, mask):
    return dout * mask


def linear_forward(x, w, b=None):
    out = x @ w.T
    if b is not None:
        out = out + b
    return out, x


def linear_backward(dout, x, w, has_bias=True):
    dx = dout @ w
    dw = dout.T @ x
    db = dout.sum(axis=0) if has_bias else None
    return dx, dw, db


def global_avg_pool_forward(x):
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(dout, shape):
    n, c, h, w = shape
    return np.broadcast_to(dout[:, :, None, None] / (h * w), shape).copy()


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n
