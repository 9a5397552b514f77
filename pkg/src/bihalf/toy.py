"""Exhaustive study of a 12-parameter binary network on 2-D inputs.

The network is ``sigmoid(w2 . sigmoid(w1^T x + b1))`` with ``w1`` of shape
(2, 3), ``b1`` and ``w2`` of length 3, all in {-1, +1}.  Each assignment is
packed into a 12-bit integer; bit ``i`` set means parameter ``i`` is -1, so
the popcount is the number of negative weights.  Parameter order: ``w1``
row-major (bits 0-5), ``b1`` (6-8), ``w2`` (9-11).

Two parameterisations are the same solution when their labelings of a fixed
input grid agree.  Under the default ``"boundary"`` criterion a labeling and
its class-swapped complement count as one decision boundary, and constant
labelings (no boundary in view) are not counted.  ``"labeling"`` compares raw
labelings instead.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

N_PARAMS = 12
N_COMBINATIONS = 1 << N_PARAMS
CRITERIA = ("boundary", "labeling")
DEFAULT_RESOLUTION = 64
DEFAULT_BOUND = 2.0


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass(frozen=True)
class ToyNet:
    w1: np.ndarray  # (2, 3)
    b1: np.ndarray  # (3,)
    w2: np.ndarray  # (3,)

    @classmethod
    def from_bits(cls, bits: int) -> "ToyNet":
        v = unpack(np.array([bits]))[0]
        return cls(v[:6].reshape(2, 3), v[6:9], v[9:12])

    def to_bits(self) -> int:
        v = np.concatenate([self.w1.ravel(), self.b1, self.w2])
        return int(((v < 0) << np.arange(N_PARAMS)).sum())

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(_sigmoid(X @ self.w1 + self.b1) @ self.w2)

    def decide(self, X: np.ndarray) -> np.ndarray:
        return self(X) >= 0.5


def unpack(bits: np.ndarray) -> np.ndarray:
    """(n,) integers -> (n, 12) array of +-1 parameters."""
    return np.where((np.asarray(bits)[:, None] >> np.arange(N_PARAMS)) & 1, -1.0, 1.0)


def popcount(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits)
    return ((bits[:, None] >> np.arange(N_PARAMS)) & 1).sum(axis=1)


def make_grid(resolution: int = DEFAULT_RESOLUTION, bound: float = DEFAULT_BOUND) -> np.ndarray:
    """``resolution**2`` points on ``[-bound, bound]^2`` including the edges,
    x varying fastest."""
    g = np.linspace(-bound, bound, resolution)
    x1, x2 = np.meshgrid(g, g, indexing="xy")
    return np.stack([x1.ravel(), x2.ravel()], axis=1)


def fingerprints(grid: np.ndarray, bits: Optional[np.ndarray] = None,
                 chunk: int = 256) -> np.ndarray:
    """Boolean labelings, shape ``(len(bits), len(grid))``."""
    bits = np.arange(N_COMBINATIONS) if bits is None else np.asarray(bits)
    theta = unpack(bits)
    out = np.empty((len(bits), len(grid)), dtype=bool)
    for s in range(0, len(bits), chunk):
        t = theta[s:s + chunk]
        w1 = t[:, :6].reshape(-1, 2, 3)
        h = _sigmoid(np.einsum("pd,tdh->tph", grid, w1) + t[:, None, 6:9])
        out[s:s + chunk] = _sigmoid(np.einsum("tph,th->tp", h, t[:, 9:12])) >= 0.5
    return out


def solution_keys(fps: np.ndarray, criterion: str = "boundary") -> List[Optional[bytes]]:
    """Hashable identity of each labeling; None for labelings not counted."""
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}")
    keys: List[Optional[bytes]] = []
    for f in fps:
        if criterion == "labeling":
            keys.append(np.packbits(f).tobytes())
            continue
        if f.all() or not f.any():
            keys.append(None)
            continue
        a, b = np.packbits(f).tobytes(), np.packbits(~f).tobytes()
        keys.append(min(a, b))
    return keys


@dataclass
class EnumerationResult:
    n_neg: Optional[int]
    combinations: int
    unique: int


class SolutionSpace:
    """All 4096 labelings on one grid, queried by number of negative weights."""

    def __init__(self, resolution: int = DEFAULT_RESOLUTION, bound: float = DEFAULT_BOUND,
                 criterion: str = "boundary"):
        self.resolution, self.bound, self.criterion = resolution, bound, criterion
        self.bits = np.arange(N_COMBINATIONS)
        self.n_neg = popcount(self.bits)
        self.fps = fingerprints(make_grid(resolution, bound), self.bits)
        self.keys = solution_keys(self.fps, criterion)

    def _unique(self, idx) -> int:
        return len({self.keys[i] for i in idx if self.keys[i] is not None})

    def all(self) -> EnumerationResult:
        return EnumerationResult(None, N_COMBINATIONS, self._unique(range(N_COMBINATIONS)))

    def ratio(self, n_neg: int) -> EnumerationResult:
        if not 0 <= n_neg <= N_PARAMS:
            raise ValueError("n_neg must lie in 0..12")
        idx = np.flatnonzero(self.n_neg == n_neg)
        return EnumerationResult(n_neg, len(idx), self._unique(idx))

    def table(self) -> List[EnumerationResult]:
        return [self.ratio(k) for k in range(N_PARAMS + 1)]


def enumerate_all(resolution: int = DEFAULT_RESOLUTION, bound: float = DEFAULT_BOUND,
                  criterion: str = "boundary") -> EnumerationResult:
    return SolutionSpace(resolution, bound, criterion).all()


def enumerate_ratio(n_neg: int, resolution: int = DEFAULT_RESOLUTION,
                    bound: float = DEFAULT_BOUND, criterion: str = "boundary") -> EnumerationResult:
    return SolutionSpace(resolution, bound, criterion).ratio(n_neg)


def binomial_counts() -> List[int]:
    return [comb(N_PARAMS, k) for k in range(N_PARAMS + 1)]


TOY_COLUMNS = ("resolution", "bound", "criterion", "n_neg", "combinations",
               "unique_solutions", "unique_fraction_of_all")


def space_rows(space: SolutionSpace) -> List[Dict]:
    """One CSV row per number of negative weights."""
    total = space.all().unique
    return [{"resolution": space.resolution, "bound": space.bound, "criterion": space.criterion,
             "n_neg": r.n_neg, "combinations": r.combinations, "unique_solutions": r.unique,
             "unique_fraction_of_all": round(r.unique / total, 6) if total else 0.0}
            for r in space.table()]


def solution_space_rows(resolutions: Sequence[int] = (DEFAULT_RESOLUTION,),
                        bound: float = DEFAULT_BOUND, criterion: str = "boundary") -> List[Dict]:
    rows = []
    for res in resolutions:
        rows += space_rows(SolutionSpace(res, bound, criterion))
    return rows


def emit_solution_space_csv(rows: Sequence[Dict], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TOY_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


def write_pgm(fingerprint: np.ndarray, resolution: int, path) -> Path:
    """Binary PGM (P5) of one labeling; row 0 is the top (largest x2)."""
    img = np.asarray(fingerprint, dtype=bool).reshape(resolution, resolution)[::-1]
    path = Path(path)
    path.write_bytes(f"P5\n{resolution} {resolution}\n255\n".encode() + (img * 255).astype(np.uint8).tobytes())
    return path
