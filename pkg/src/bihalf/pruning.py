"""Fixed-ratio prune masks, supermask-style score selection and code counts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .quantize import round_half_up
from .tensor import LatentTensor


def keep_count(D: int, rho: float) -> int:
    """Weights left after pruning a fraction ``rho`` of ``D``."""
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"prune ratio must lie in [0, 1), got {rho}")
    return D - round_half_up(rho * D)


def topk_mask_rows(scores: np.ndarray, rho: float) -> np.ndarray:
    """Boolean mask keeping the largest ``keep_count`` scores of every row.

    Equal scores are kept in ascending index order.
    """
    scores = np.asarray(scores)
    n, D = scores.shape
    keep = keep_count(D, rho)
    if keep == 0:
        raise ValueError(f"rho={rho} prunes every one of {D} weights")
    order = np.argsort(-scores, axis=1, kind="stable")[:, :keep]
    M = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(M, order, True, axis=1)
    return M


def topk_mask(scores, rho: float) -> np.ndarray:
    """0/1 mask over a single score vector; see :func:`topk_mask_rows`."""
    scores = np.asarray(scores, dtype=np.float64)
    return topk_mask_rows(scores[None, :], rho)[0].astype(np.int8)


@dataclass(eq=False)
class PruneMask:
    """Per-filter mask with a fixed keep count.

    In ``frozen`` mode the mask is computed once from the initial scores.  In
    ``learned`` mode the scores are trainable and the mask is re-selected on
    every forward pass.
    """

    scores: LatentTensor
    rho: float
    learned: bool = False
    M: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.scores.data.ndim != 2:
            raise ValueError("scores must be (filters, D)")
        self.M = topk_mask_rows(self.scores.data, self.rho)

    @classmethod
    def from_weights(cls, W: np.ndarray, rho: float, learned: bool = False) -> "PruneMask":
        """Scores start at ``|W|`` so the initial mask drops small weights."""
        W2 = W.reshape(W.shape[0], -1)
        return cls(LatentTensor(np.abs(W2).astype(W.dtype)), rho, learned)

    @property
    def keep(self) -> int:
        return keep_count(self.M.shape[1], self.rho)

    def refresh(self) -> np.ndarray:
        if self.learned:
            self.M = topk_mask_rows(self.scores.data, self.rho)
        return self.M

    def score_backward(self, grad_masked_code: np.ndarray, code: np.ndarray) -> Optional[np.ndarray]:
        """Straight-through score gradient.

        ``grad_masked_code`` is dL/d(M*B); ``code`` is the +-1 code each
        position would carry if unpruned.  Pruned positions still receive a
        gradient so they can re-enter the mask.  Frozen masks return None.
        """
        if not self.learned:
            return None
        g = grad_masked_code * code
        self.scores.accumulate(g.astype(self.scores.data.dtype, copy=False))
        return g


def score_backward(upstream: np.ndarray, code: np.ndarray, learned: bool = True):
    """Functional form of :meth:`PruneMask.score_backward`."""
    if not learned:
        return None
    return np.asarray(upstream) * np.asarray(code)


def masked_ratio_report(B) -> Tuple[int, int, int]:
    """Counts of (+1, -1, 0) in a masked code."""
    B = np.asarray(B)
    return int((B > 0).sum()), int((B < 0).sum()), int((B == 0).sum())
