"""Dense numpy tensor substrate with hand-written reverse-mode rules.

Every op is split into ``*_forward`` returning ``(out, cache)`` and a matching
``*_backward`` consuming the upstream gradient and that cache.  There is no
graph tracing: layers (see :mod:`bihalf.nn`) chain these by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float32


class DimensionError(ValueError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator for all sampling in the package (numpy PCG64)."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(eq=False)
class LatentTensor:
    """Real-valued parameter buffer with a lazily allocated gradient."""

    data: np.ndarray
    grad: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise DimensionError(f"grad shape {g.shape} != data shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def is_finite(self) -> bool:
        ok = bool(np.isfinite(self.data).all())
        if self.grad is not None:
            ok = ok and bool(np.isfinite(self.grad).all())
        return ok


# -- affine -----------------------------------------------------------------

def affine_forward(x: np.ndarray, W: np.ndarray, scale: float = 1.0):
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise DimensionError(f"affine: x {x.shape} incompatible with W {W.shape}")
    if not scale > 0:
        raise ValueError("scale must be positive")
    return scale * (x @ W), (x, W, scale)


def affine_backward(dy: np.ndarray, cache):
    x, W, scale = cache
    return scale * (dy @ W.T), scale * (x.T @ dy)


# -- conv2d (im2col) --------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # N, C, Ho, Wo, k, k
    n, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)


def _col2im(cols: np.ndarray, xshape, k: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = xshape
    ho = conv_output_size(h, k, stride, pad)
    wo = conv_output_size(w, k, stride, pad)
    cols = cols.reshape(n, ho, wo, c, k, k)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return out


def conv2d_forward(x: np.ndarray, K: np.ndarray, scale: float = 1.0,
                   stride: int = 1, pad: int = 0):
    """Scaled cross-correlation of ``x`` (N,C,H,W) with ``K`` (F,C,k,k)."""
    if x.ndim != 4 or K.ndim != 4 or x.shape[1] != K.shape[1]:
        raise DimensionError(f"conv2d: x {x.shape} incompatible with K {K.shape}")
    f, c, k, k2 = K.shape
    if k != k2:
        raise DimensionError("only square kernels are supported")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n, _, h, w = x.shape
    if k > h + 2 * pad or k > w + 2 * pad:
        raise DimensionError(f"kernel {k} larger than padded input {h}x{w} (pad={pad})")
    ho, wo = conv_output_size(h, k, stride, pad), conv_output_size(w, k, stride, pad)
    cols = _im2col(x, k, stride, pad)
    Kmat = K.reshape(f, -1)
    y = scale * (cols @ Kmat.T)
    y = y.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y), (x.shape, cols, K, scale, stride, pad)


def conv2d_backward(dy: np.ndarray, cache, need_input_grad: bool = True):
    xshape, cols, K, scale, stride, pad = cache
    f, c, k, _ = K.shape
    dy_mat = dy.transpose(0, 2, 3, 1).reshape(-1, f)
    dK = scale * (dy_mat.T @ cols).reshape(K.shape)
    if not need_input_grad:
        return None, dK
    dcols = scale * (dy_mat @ K.reshape(f, -1))
    return _col2im(dcols, xshape, k, stride, pad), dK


# -- batch norm -------------------------------------------------------------

def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      eps: float = 1e-5, running=None, momentum: float = 0.1,
                      training: bool = True):
    """Per-channel normalisation over every axis but 1.

    ``running`` is an optional ``(mean, var)`` pair updated in place during
    training and used for inference.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    if training:
        m = x.size // x.shape[1]
        if x.shape[0] < 2 and m < 2:
            raise DimensionError("batchnorm needs at least 2 values per channel in training")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if running is not None:
            rm, rv = running
            rm *= 1 - momentum
            rm += momentum * mean
            rv *= 1 - momentum
            rv += momentum * var * m / max(m - 1, 1)
    else:
        mean, var = running
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(bshape)) * inv.reshape(bshape)
    y = gamma.reshape(bshape) * xhat + beta.reshape(bshape)
    return y.astype(x.dtype, copy=False), (xhat, inv, gamma, axes, bshape)


def batchnorm_backward(dy: np.ndarray, cache):
    xhat, inv, gamma, axes, bshape = cache
    m = dy.size // dy.shape[1]
    dbeta = dy.sum(axis=axes)
    dgamma = (dy * xhat).sum(axis=axes)
    dxhat = dy * gamma.reshape(bshape)
    dx = (inv.reshape(bshape) / m) * (
        m * dxhat - dxhat.sum(axis=axes).reshape(bshape)
        - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape))
    return dx, dgamma, dbeta


# -- pointwise --------------------------------------------------------------

def relu_forward(x: np.ndarray):
    return np.maximum(x, 0), x > 0


def relu_backward(dy: np.ndarray, cache):
    return dy * cache


def sign(x: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) = +1, shared by every binarizer."""
    return np.where(x >= 0, 1, -1).astype(x.dtype if np.issubdtype(x.dtype, np.floating) else DTYPE)


def sign_forward(x: np.ndarray):
    """Binary activation; backward uses the hard-tanh gate ``|x| <= 1``."""
    return sign(x), np.abs(x) <= 1


def hardtanh_backward_gate(dy: np.ndarray, cache):
    return dy * cache


def maxpool_forward(x: np.ndarray, k: int = 2):
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    xc = x[:, :, :ho * k, :wo * k].reshape(n, c, ho, k, wo, k)
    y = xc.max(axis=(3, 5))
    mask = xc == y[:, :, :, None, :, None]
    # route the gradient to a single arg-max per window
    flat = mask.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    first = flat.argmax(axis=-1)
    return y, (x.shape, first, k)


def maxpool_backward(dy: np.ndarray, cache):
    xshape, first, k = cache
    n, c, h, w = xshape
    ho, wo = dy.shape[2:]
    onehot = np.zeros((n, c, ho, wo, k * k), dtype=dy.dtype)
    np.put_along_axis(onehot, first[..., None], dy[..., None], axis=-1)
    blk = onehot.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(xshape, dtype=dy.dtype)
    dx[:, :, :ho * k, :wo * k] = blk.reshape(n, c, ho * k, wo * k)
    return dx


# -- loss -------------------------------------------------------------------

def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    labels = np.asarray(labels)
    n, kcls = logits.shape
    if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= kcls:
        raise ValueError(f"labels must be {n} indices in [0, {kcls})")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    return float(loss), grad / n


# -- gradient verification --------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    near_boundary: bool = False


def finite_diff_check(fn: Callable[[Sequence[np.ndarray]], float],
                      grad_fn: Callable[[Sequence[np.ndarray]], Sequence[np.ndarray]],
                      point: Sequence[np.ndarray], h: float = 1e-5, tol: float = 1e-5,
                      boundary: Optional[Callable[[Sequence[np.ndarray], float], bool]] = None
                      ) -> GradCheckReport:
    """Compare ``grad_fn`` with central differences of scalar ``fn``.

    Computation is in float64.  Relative error is measured against the larger
    of the two gradient norms so an all-zero gradient compares cleanly.
    ``boundary(point, h)`` may flag kinks (e.g. a quantizer rank change) that
    fall inside the stencil.
    """
    point = [np.array(p, dtype=np.float64) for p in point]
    analytic = [np.asarray(g, dtype=np.float64) for g in grad_fn(point)]
    worst = 0.0
    for p, ga in zip(point, analytic):
        num = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            fp = fn(point)
            p[idx] = orig - h
            fm = fn(point)
            p[idx] = orig
            num[idx] = (fp - fm) / (2 * h)
        denom = max(np.linalg.norm(ga), np.linalg.norm(num))
        if denom > 0:
            worst = max(worst, float(np.linalg.norm(ga - num) / denom))
    flagged = bool(boundary(point, h)) if boundary is not None else False
    return GradCheckReport(worst, worst <= tol, flagged)
