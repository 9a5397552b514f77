"""Fast invariant suite behind ``bihalf selftest``.

Each check returns ``(passed, detail)``; the suite needs only numpy.
"""

from __future__ import annotations

import math
from typing import Callable, List, Tuple

import numpy as np

from . import tensor as T
from .quantize import (ot_binarize, ot_binarize_rows, positive_count, transport_cost,
                       wasserstein_oracle, weight_entropy)
from .tensor import make_rng
from .toy import binomial_counts
from .train import flip_account

Check = Callable[[], Tuple[bool, str]]


def check_oracle(trials: int = 200) -> Tuple[bool, str]:
    rng = make_rng(0)
    bad = 0
    for _ in range(trials):
        D = int(rng.integers(2, 13))
        W = rng.standard_normal(D) * rng.choice([0.3, 1.0, 3.0])
        p = float(rng.choice([0.25, 0.5, 0.75]))
        best, _ = wasserstein_oracle(W, p)
        bad += transport_cost(W, ot_binarize(W, p)) != best
    return bad == 0, f"{trials - bad}/{trials} closed-form codes attain the exhaustive minimum"


def check_exact_ratio(trials: int = 500) -> Tuple[bool, str]:
    rng = make_rng(1)
    bad = 0
    for _ in range(trials):
        D = int(rng.integers(1, 80))
        p = float(rng.random())
        M = rng.random(D) < 0.7
        M[0] = True
        B = ot_binarize(rng.standard_normal(D), p, M)
        bad += (B > 0).sum() != positive_count(p, int(M.sum()))
    return bad == 0, f"{bad} ratio violations in {trials} draws"


def check_flip_pairing(trials: int = 500) -> Tuple[bool, str]:
    rng = make_rng(2)
    bad = 0
    for _ in range(trials):
        W = rng.standard_normal((4, 2 * int(rng.integers(1, 30))))
        a = ot_binarize_rows(W, 0.5)
        b = ot_binarize_rows(W + rng.standard_normal(W.shape), 0.5)
        up, down = flip_account(a, b)
        bad += up != down
    return bad == 0, f"{bad} unbalanced steps in {trials}"


def check_entropy() -> Tuple[bool, str]:
    rng = make_rng(3)
    ok = all(weight_entropy(ot_binarize(rng.standard_normal(2 * n), 0.5)) == 1.0 for n in range(1, 60))
    return ok, "bi-half codes carry exactly one bit per weight"


def check_gradients() -> Tuple[bool, str]:
    rng = make_rng(4)
    x, K = rng.standard_normal((2, 2, 5, 5)), rng.standard_normal((3, 2, 3, 3))
    R = rng.standard_normal((2, 3, 3, 3))
    rep = T.finite_diff_check(lambda p: float((T.conv2d_forward(p[0], p[1], 0.7)[0] * R).sum()),
                              lambda p: T.conv2d_backward(R, T.conv2d_forward(p[0], p[1], 0.7)[1]),
                              [x, K], tol=1e-5)
    return rep.passed, f"conv2d max relative error {rep.max_rel_error:.2e}"


def check_binomials() -> Tuple[bool, str]:
    c = binomial_counts()
    return sum(c) == 4096 and c[6] == 924 == math.comb(12, 6), "toy combination counts"


CHECKS: List[Tuple[str, Check]] = [
    ("oracle", check_oracle),
    ("exact-ratio", check_exact_ratio),
    ("flip-pairing", check_flip_pairing),
    ("entropy", check_entropy),
    ("gradients", check_gradients),
    ("binomials", check_binomials),
]


def run(echo=print) -> bool:
    ok = True
    for name, fn in CHECKS:
        passed, detail = fn()
        ok &= passed
        echo(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return ok
