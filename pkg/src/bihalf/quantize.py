"""Binarizers: the sorting solution of 1-D optimal transport and baselines.

Aligning the uniform empirical distribution of a filter's latent weights with
a two-point Bernoulli target at {-1, +1} has a closed form: sort, send the top
``k`` weights to +1 and the rest to -1.  :func:`ot_binarize` implements it, and
:func:`wasserstein_oracle` certifies it by exhaustive search.

Conventions shared by every binarizer in this module:

* ``sign(0) = +1``.
* ties in a sort are broken by ascending original index, so among equal
  latent weights the lower index is the one that receives +1.
* ``k(p, D) = floor(p * D + 1/2)`` clamped to ``[0, D]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import List, Optional, Tuple

import numpy as np

ORACLE_MAX_D = 16


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class BernoulliPrior:
    p_pos: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.p_pos <= 1.0:
            raise ValueError(f"p_pos must lie in [0, 1], got {self.p_pos}")

    @property
    def p_neg(self) -> float:
        return 1.0 - self.p_pos


BI_HALF = BernoulliPrior(0.5)


def _as_prior(prior) -> BernoulliPrior:
    return prior if isinstance(prior, BernoulliPrior) else BernoulliPrior(float(prior))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def positive_count(p_pos: float, D: int) -> int:
    """Number of +1 symbols a filter of ``D`` unmasked weights receives."""
    if D < 0:
        raise ValueError("D must be non-negative")
    return min(max(round_half_up(p_pos * D), 0), D)


def ot_binarize_rows(W: np.ndarray, p_pos: float, mask: Optional[np.ndarray] = None
                     ) -> np.ndarray:
    """Row-wise :func:`ot_binarize` for a 2-D ``(filters, D)`` array.

    Returns a float array of the same dtype as ``W`` over {-1, 0, +1}.
    """
    W = np.asarray(W)
    if W.ndim != 2:
        raise ValueError("expected a 2-D (filters, D) array")
    dtype = W.dtype if np.issubdtype(W.dtype, np.floating) else np.float64
    n, D = W.shape
    if D < 1:
        raise ValueError("empty filters")
    if mask is None:
        keep = np.full(n, D)
        key = -W
    else:
        mask = np.asarray(mask).astype(bool)
        if mask.shape != W.shape:
            raise ValueError(f"mask shape {mask.shape} != weight shape {W.shape}")
        keep = mask.sum(axis=1)
        if (keep == 0).any():
            raise ValueError("a filter has every weight pruned")
        # pruned entries sort after every finite weight
        key = np.where(mask, -W, np.inf)
    order = np.argsort(key, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(D)[None, :].repeat(n, 0), axis=1)
    k = np.array([positive_count(p_pos, int(m)) for m in keep])
    B = np.where(ranks < k[:, None], 1, -1).astype(dtype)
    if mask is not None:
        B[~mask] = 0
    return B


def ot_binarize(W, prior=BI_HALF, mask=None) -> np.ndarray:
    """Exact-ratio binary code for one filter of latent weights.

    Among the unmasked positions, the ``k(p_pos, |M|)`` largest weights become
    +1 and the remaining ones -1; masked positions become 0.
    """
    W = np.asarray(W, dtype=np.float64 if np.asarray(W).dtype.kind in "iub" else None)
    if W.ndim != 1 or W.size == 0:
        raise ValueError("ot_binarize expects a non-empty 1-D vector")
    m = None if mask is None else np.asarray(mask)[None, :]
    return ot_binarize_rows(W[None, :], _as_prior(prior).p_pos, m)[0]


def _exact_cost(W, B) -> Fraction:
    return sum((abs(Fraction(w) - int(b)) for w, b in zip(W, B)), Fraction(0)) / len(W)


def transport_cost(W, B) -> float:
    """1-Wasserstein cost of sending mass 1/D at each ``W[i]`` to ``B[i]``.

    Summed in exact rational arithmetic, so codes with equal true cost map to
    the identical float.
    """
    W = np.asarray(W, dtype=np.float64)
    return float(_exact_cost(W.tolist(), np.asarray(B).tolist()))


def wasserstein_oracle(W, prior=BI_HALF) -> Tuple[float, List[np.ndarray]]:
    """Exhaustive minimum of :func:`transport_cost` over all codes with exactly
    ``k`` positives.  Returns the minimum and every code attaining it."""
    W = np.asarray(W, dtype=np.float64)
    D = W.size
    if D > ORACLE_MAX_D:
        raise CapacityError(f"oracle is exhaustive; D={D} exceeds {ORACLE_MAX_D}")
    k = positive_count(_as_prior(prior).p_pos, D)
    to_pos = [abs(Fraction(w) - 1) for w in W.tolist()]
    to_neg = [abs(Fraction(w) + 1) for w in W.tolist()]
    base = sum(to_neg, Fraction(0))
    best = None
    winners: List[np.ndarray] = []
    for pos in combinations(range(D), k):
        c = base + sum((to_pos[i] - to_neg[i] for i in pos), Fraction(0))
        B = -np.ones(D)
        B[list(pos)] = 1.0
        if best is None or c < best:
            best, winners = c, [B]
        elif c == best:
            winners.append(B)
    return float(best / D), winners


def sign_binarize(W) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    return np.where(W >= 0, 1.0, -1.0)


def irnet_binarize(W) -> np.ndarray:
    """Sign of the mean-centred, std-normalised filter.

    A constant filter centres to exactly zero and binarizes to all +1.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.size < 2:
        raise ValueError("irnet_binarize needs at least two weights")
    return irnet_binarize_rows(W[None, :])[0]


def irnet_binarize_rows(W: np.ndarray) -> np.ndarray:
    W = np.asarray(W)
    centred = W - W.mean(axis=1, keepdims=True)
    std = centred.std(axis=1, keepdims=True)
    z = centred / np.where(std > 0, std, 1)
    return np.where(z >= 0, 1, -1).astype(W.dtype if W.dtype.kind == "f" else np.float64)


def binary_entropy(p) -> np.ndarray:
    """H(p) in bits with 0 log 0 = 0; works elementwise."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(p * np.log2(p) + (1 - p) * np.log2(1 - p))
    return np.where((p <= 0) | (p >= 1), 0.0, h)


def weight_entropy(B) -> float:
    """Entropy of the +1/-1 split over the nonzero entries of a code."""
    B = np.asarray(B)
    nz = B[B != 0]
    if nz.size == 0:
        raise ValueError("every entry is pruned")
    return float(binary_entropy(np.mean(nz > 0)))


def weight_entropy_rows(B: np.ndarray) -> np.ndarray:
    """Per-filter :func:`weight_entropy` for a ``(filters, D)`` code."""
    pos = (B > 0).sum(axis=1)
    nz = (B != 0).sum(axis=1)
    if (nz == 0).any():
        raise ValueError("a filter has every entry pruned")
    return binary_entropy(pos / nz)


def activation_entropy(A) -> np.ndarray:
    """Per-channel entropy of sign-binarized activations.

    ``A`` has channels on axis 1; the +1 frequency is pooled over batch and
    any spatial axes.
    """
    A = np.asarray(A)
    if A.ndim == 1:
        A = A[:, None]
    axes = (0,) + tuple(range(2, A.ndim))
    return binary_entropy(np.mean(A > 0, axis=axes))
