"""Binary linear and convolution layers over latent real-valued weights."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import tensor as T
from .nn import Module, StateError
from .pruning import PruneMask
from .quantize import irnet_binarize_rows, ot_binarize_rows
from .tensor import DTYPE, LatentTensor

# "bihalf" is the OT binarizer; its prior defaults to p_pos = 1/2.
BINARIZERS = ("bihalf", "ot", "sign", "irnet", "bop", "real")


class BinaryLayer(Module):
    """Shared machinery for :class:`BinaryLinear` and :class:`BinaryConv2d`.

    The forward pass regenerates the code ``B`` from the latent weights on
    every call and multiplies it by a fixed ``alpha = sqrt(2 / fan_in)``.  The
    backward pass is the identity straight-through estimator: the gradient
    the loss assigns to ``B`` is written into ``W.grad`` (zero where pruned).

    ``binarizer="bop"`` keeps the +-1 code itself in ``W`` and is updated by
    the flip rule in :mod:`bihalf.train` rather than by SGD.  ``"real"`` skips
    binarization entirely (used for exempt first/last layers).
    """

    def __init__(self, wshape, binarizer: str = "bihalf", p_pos: float = 0.5,
                 per_filter: bool = True, alpha: Optional[float] = None):
        if binarizer not in BINARIZERS:
            raise ValueError(f"unknown binarizer {binarizer!r}; choose from {BINARIZERS}")
        if not 0.0 <= p_pos <= 1.0:
            raise ValueError("p_pos must lie in [0, 1]")
        if binarizer == "bihalf" and p_pos != 0.5:
            raise ValueError("bihalf fixes p_pos = 0.5; use binarizer 'ot' for other priors")
        self.binarizer = binarizer
        self.p_pos = p_pos
        self.per_filter = per_filter
        self.fan_in = int(np.prod(wshape[1:]))
        if alpha is None:
            alpha = 1.0 if binarizer == "real" else math.sqrt(2.0 / self.fan_in)
        self.alpha = float(alpha)
        self.W = LatentTensor(np.zeros(wshape, dtype=DTYPE))
        self.mask: Optional[PruneMask] = None
        self.B: Optional[np.ndarray] = None
        self._cache = None
        # the network's input layer can skip computing dL/dx
        self.need_input_grad = True

    # -- initialisation -----------------------------------------------------

    def kaiming_init(self, rng: np.random.Generator) -> None:
        std = math.sqrt(2.0 / self.fan_in)
        self.W.data[...] = (rng.standard_normal(self.W.shape) * std).astype(DTYPE)
        if self.binarizer == "bop":
            self.W.data[...] = np.where(self.W.data >= 0, 1, -1)

    def attach_mask(self, rho: float, learned: bool = False) -> PruneMask:
        self.mask = PruneMask.from_weights(self.W.data, rho, learned)
        return self.mask

    # -- code ---------------------------------------------------------------

    @property
    def n_filters(self) -> int:
        return self.W.shape[0]

    def _rows(self, a: np.ndarray) -> np.ndarray:
        return a.reshape(self.n_filters if self.per_filter else 1, -1)

    def mask_array(self) -> Optional[np.ndarray]:
        return None if self.mask is None else self.mask.M.reshape(self.W.shape)

    def code(self, use_mask: bool = True) -> np.ndarray:
        """Binary code with the shape of ``W``, values in {-1, 0, +1}."""
        W = self.W.data
        M = self.mask_array() if use_mask else None
        kind = self.binarizer
        if kind in ("bihalf", "ot"):
            Mr = None if M is None else self._rows(M)
            return ot_binarize_rows(self._rows(W), self.p_pos, Mr).reshape(W.shape)
        if kind == "irnet":
            B = irnet_binarize_rows(self._rows(W)).reshape(W.shape)
        elif kind in ("sign", "bop"):
            B = T.sign(W)
        else:
            B = W.copy()
        return B if M is None else B * M

    def code_rows(self) -> np.ndarray:
        """The last forward's code as ``(filters, fan_in)``."""
        B = self.B if self.B is not None else self.code()
        return B.reshape(self.n_filters, -1)

    # -- passes ---------------------------------------------------------------

    def _op_forward(self, x, B):
        raise NotImplementedError

    def _op_backward(self, dy, cache):
        raise NotImplementedError

    def forward(self, x):
        if self.mask is not None and self.training:
            self.mask.refresh()
        self.B = self.code()
        y, self._cache = self._op_forward(x, self.B)
        return y

    def backward(self, dy):
        if self._cache is None:
            raise StateError("backward called before forward")
        dx, dB = self._op_backward(dy, self._cache)
        self.grad_B = dB
        M = self.mask_array()
        self.W.accumulate(dB if M is None else dB * M)
        if self.mask is not None and self.mask.learned:
            full = self.code(use_mask=False).reshape(self.mask.M.shape)
            self.mask.score_backward(dB.reshape(self.mask.M.shape), full)
        return dx

    def parameters(self):
        yield "W", self.W
        if self.mask is not None and self.mask.learned:
            yield "scores", self.mask.scores


class BinaryLinear(BinaryLayer):
    """``y = alpha * x @ B.T`` with ``W`` stored as ``(out, in)``."""

    def __init__(self, in_features: int, out_features: int, **kw):
        super().__init__((out_features, in_features), **kw)

    def _op_forward(self, x, B):
        return T.affine_forward(x, B.T, self.alpha)

    def _op_backward(self, dy, cache):
        dx, dBt = T.affine_backward(dy, cache)
        return dx, dBt.T


class BinaryConv2d(BinaryLayer):
    def __init__(self, in_ch: int, out_ch: int, k: int = 3, stride: int = 1, pad: int = 1, **kw):
        super().__init__((out_ch, in_ch, k, k), **kw)
        self.stride, self.pad = stride, pad

    def _op_forward(self, x, B):
        return T.conv2d_forward(x, B, self.alpha, self.stride, self.pad)

    def _op_backward(self, dy, cache):
        return T.conv2d_backward(dy, cache, self.need_input_grad)


def binary_layers(model) -> list:
    layers = getattr(model, "layers", [model])
    return [m for m in layers if isinstance(m, BinaryLayer)]
