"""Forward/backward kernels for every layer AttackNet uses.

Each ``*_forward`` returns ``(output, cache)`` and the matching ``*_backward``
consumes that cache once.  Kernels preserve the dtype of their input, which is
how the float64 gradient checks run through the same code as training.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Prng, ShapeError


class ConfigError(ValueError):
    """A layer hyperparameter is out of range."""


# --------------------------------------------------------------------------- conv

# Patch matrices are built a few images at a time so they stay cache-resident.
_CHUNK_COLUMNS = 2048


def _chunks(n: int, h: int, w: int):
    step = max(1, _CHUNK_COLUMNS // (h * w))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def _patches(xp: np.ndarray) -> np.ndarray:
    """Padded [K,C,H+2,W+2] -> [C*9, K*H*W]; rows ordered (c,u,v) like ``w.reshape(F, C*9)``."""
    k, c, hp, wp = xp.shape
    h, w = hp - 2, wp - 2
    cols = np.empty((c, 3, 3, k, h, w), dtype=xp.dtype)
    for u in range(3):
        for v in range(3):
            cols[:, u, v] = xp[:, :, u:u + h, v:v + w].transpose(1, 0, 2, 3)
    return cols.reshape(c * 9, k * h * w)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """3x3 convolution, stride 1, "same" zero padding."""
    if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d expects x[N,C,H,W] and w[F,C,3,3], got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} does not match {w.shape[0]} filters")
    n, _, h, wd = x.shape
    f = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    wm = w.reshape(f, -1)
    y = np.empty((n, f, h, wd), dtype=np.result_type(x, w))
    for s in _chunks(n, h, wd):
        out = wm @ _patches(xp[s])
        out += b[:, None]
        y[s] = out.reshape(f, -1, h, wd).transpose(1, 0, 2, 3)
    return y, (xp, w)


def conv2d_backward(cache, dy: np.ndarray):
    xp, w = cache
    n, _, hp, wp = xp.shape
    h, wd = hp - 2, wp - 2
    f = w.shape[0]
    if dy.shape != (n, f, h, wd):
        raise ShapeError(f"upstream gradient {dy.shape} != output shape {(n, f, h, wd)}")
    wm = w.reshape(f, -1)
    dw = np.zeros_like(wm)
    dxp = np.zeros_like(xp)
    for s in _chunks(n, h, wd):
        dyc = np.ascontiguousarray(dy[s].transpose(1, 0, 2, 3)).reshape(f, -1)
        dw += dyc @ _patches(xp[s]).T
        dcols = (wm.T @ dyc).reshape(-1, 3, 3, s.stop - s.start, h, wd)
        dxs = dxp[s]
        for u in range(3):
            for v in range(3):
                dxs[:, :, u:u + h, v:v + wd] += dcols[:, u, v].transpose(1, 0, 2, 3)
    db = dy.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(dxp[:, :, 1:h + 1, 1:wd + 1]), dw.reshape(w.shape), db


# --------------------------------------------------------------------------- activations

def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha < 1.0:
        raise ConfigError(f"leaky_relu alpha must lie in [0, 1), got {alpha}")


def leaky_relu_forward(x: np.ndarray, alpha: float):
    _check_alpha(alpha)
    positive = x > 0
    return np.maximum(x, x * x.dtype.type(alpha)), positive


def leaky_relu_backward(cache, dy: np.ndarray, alpha: float) -> np.ndarray:
    positive = cache
    if dy.shape != positive.shape:
        raise ShapeError(f"upstream gradient {dy.shape} != {positive.shape}")
    # derivative at exactly 0 is alpha
    return np.where(positive, dy, dy * dy.dtype.type(alpha))


def tanh_forward(x: np.ndarray):
    """tanh, held strictly inside (-1, 1) where floating point would round to +-1."""
    edge = np.nextafter(x.dtype.type(1), x.dtype.type(0))
    y = np.clip(np.tanh(x), -edge, edge)
    return y, y


def tanh_backward(cache, dy: np.ndarray) -> np.ndarray:
    y = cache
    return dy * (1 - y * y)


# --------------------------------------------------------------------------- batch norm

@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )


def batchnorm_forward(x: np.ndarray, s: BatchNormState, mode: str):
    """Per-channel normalization of x[N,C,H,W].

    In train mode the batch statistics are used and the running statistics in
    ``s`` are updated in place; in infer mode only the running statistics are read.
    """
    if x.ndim != 4 or x.shape[1] != s.gamma.shape[0]:
        raise ShapeError(f"batchnorm over {x.shape} with {s.gamma.shape[0]} channels")
    dt = x.dtype.type
    shape = (1, -1, 1, 1)
    if mode == "train":
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count < 2:
            raise ShapeError("batchnorm in train mode needs N*H*W >= 2")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv_std = 1 / np.sqrt(var + dt(s.eps))
        xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
        m = s.momentum
        s.running_mean[...] = (1 - m) * s.running_mean + m * mean
        s.running_var[...] = (1 - m) * s.running_var + m * var
        y = xhat * s.gamma.astype(x.dtype).reshape(shape) + s.beta.astype(x.dtype).reshape(shape)
        return y, ("train", xhat, inv_std, s.gamma.astype(x.dtype))
    if mode == "infer":
        inv_std = 1 / np.sqrt(s.running_var.astype(x.dtype) + dt(s.eps))
        xhat = (x - s.running_mean.astype(x.dtype).reshape(shape)) * inv_std.reshape(shape)
        y = xhat * s.gamma.astype(x.dtype).reshape(shape) + s.beta.astype(x.dtype).reshape(shape)
        return y, ("infer", xhat, inv_std, s.gamma.astype(x.dtype))
    raise ValueError(f"unknown mode {mode!r}")


def batchnorm_backward(cache, dy: np.ndarray):
    """Returns (dx, dgamma, dbeta)."""
    mode, xhat, inv_std, gamma = cache
    if dy.shape != xhat.shape:
        raise ShapeError(f"upstream gradient {dy.shape} != {xhat.shape}")
    shape = (1, -1, 1, 1)
    dbeta = dy.sum(axis=(0, 2, 3))
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dxhat = dy * gamma.reshape(shape)
    if mode == "infer":
        return dxhat * inv_std.reshape(shape), dgamma, dbeta
    count = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
    dx = (inv_std.reshape(shape) / count) * (
        count * dxhat
        - dxhat.sum(axis=(0, 2, 3)).reshape(shape)
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(shape)
    )
    return dx, dgamma, dbeta


# --------------------------------------------------------------------------- dropout / pooling

def dropout_forward(x: np.ndarray, rate: float, mode: str, p: Prng | None = None):
    """Inverted dropout: survivors are scaled by 1/(1-rate) so inference is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode == "infer" or rate == 0.0:
        return x, None
    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    if p is None:
        raise ValueError("train-mode dropout needs a Prng")
    keep = p.uniform(x.shape, 0.0, 1.0) >= rate
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return x * mask, mask


def dropout_backward(cache, dy: np.ndarray) -> np.ndarray:
    if cache is None:
        return dy
    return dy * cache


def maxpool2x2_forward(x: np.ndarray):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial extents, got {h}x{w}")
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    # argmax returns the first maximum in row-major window order
    idx = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def maxpool2x2_backward(cache, dy: np.ndarray) -> np.ndarray:
    idx, (n, c, h, w) = cache
    if dy.shape != idx.shape:
        raise ShapeError(f"upstream gradient {dy.shape} != {idx.shape}")
    dwin = np.zeros(idx.shape + (4,), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    return dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


# --------------------------------------------------------------------------- dense / residual

def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"dense with x{x.shape}, w{w.shape}, b{b.shape}")
    return x @ w + b, (x, w)


def dense_backward(cache, dy: np.ndarray):
    x, w = cache
    if dy.shape != (x.shape[0], w.shape[1]):
        raise ShapeError(f"upstream gradient {dy.shape} != {(x.shape[0], w.shape[1])}")
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def residual_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"residual add needs equal shapes, got {a.shape} and {b.shape}")
    return a + b


def residual_add_backward(dy: np.ndarray):
    return dy, dy


# --------------------------------------------------------------------------- output

def softmax(z: np.ndarray) -> np.ndarray:
    if z.ndim != 2 or z.shape[1] < 2:
        raise ShapeError(f"softmax expects [N, C>=2], got {z.shape}")
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


PROB_FLOOR = 1e-12


def cross_entropy_loss(probs: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy and its gradient w.r.t. the pre-softmax logits."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = probs.shape
    if labels.shape != (n,):
        raise ShapeError(f"{labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1
    return loss, dlogits / probs.dtype.type(n)
