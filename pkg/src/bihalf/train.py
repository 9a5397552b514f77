"""Training loop, optimiser, schedules and bit-flip / entropy diagnostics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import LabeledDataset, iterate_batches
from .layers import BINARIZERS, BinaryLayer, binary_layers
from .nn import BatchNorm, SignActivation
from .quantize import activation_entropy, positive_count, weight_entropy_rows
from .tensor import softmax_xent

CSV_COLUMNS = ("iteration", "epoch", "split", "loss", "accuracy", "flips_up",
               "flips_down", "weight_entropy", "lr")
SCHEDULES = ("cosine", "constant", "step")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: str = "cosine"
    milestones: Tuple[int, ...] = ()
    step_factor: float = 0.1
    binarizer: str = "bihalf"
    p_pos: float = 0.5
    per_filter: bool = True
    rho: float = 0.0
    learned_mask: bool = False
    activation: str = "real"
    seed: int = 0
    diagnostics: bool = True
    augment: bool = False
    # Bop baseline constants are placeholders from outside this work, not tuned here
    bop_decay: float = 0.99
    bop_tau: float = 1e-6

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        self.validate()

    def validate(self) -> None:
        if self.lr0 < 0:
            raise ValueError("lr0 must be non-negative")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError("milestones must be strictly increasing")
        if self.binarizer not in BINARIZERS:
            raise ValueError(f"binarizer must be one of {BINARIZERS}")
        if not 0.0 <= self.p_pos <= 1.0:
            raise ValueError("p_pos must lie in [0, 1]")
        if self.binarizer == "bihalf" and self.p_pos != 0.5:
            raise ValueError("bihalf fixes p_pos = 0.5; use binarizer 'ot' for other priors")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 2:
            raise ValueError("epochs >= 0 and batch_size >= 2 required")

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]


# -- optimiser and schedules --------------------------------------------------

def sgd_step(W: np.ndarray, grad: np.ndarray, state: Dict, lr: float,
             momentum: float = 0.9, weight_decay: float = 0.0) -> np.ndarray:
    """In-place SGD with coupled L2: ``v = m*v + g + wd*W; W -= lr*v``.

    ``state`` holds the velocity under key ``"v"``; the first step sets
    ``v = g + wd*W``.
    """
    if grad.shape != W.shape:
        raise ValueError("grad and weight shapes differ")
    d = grad + weight_decay * W if weight_decay else grad
    v = state.get("v")
    if v is None or momentum == 0:
        v = np.array(d, copy=True)
    else:
        v *= momentum
        v += d
    state["v"] = v
    W -= (lr * v).astype(W.dtype, copy=False)
    return W


def cosine_lr(t: float, T: float, lr0: float) -> float:
    if T <= 0:
        return lr0
    return lr0 * (1 + math.cos(math.pi * min(max(t / T, 0.0), 1.0))) / 2


def step_lr(epoch: float, lr0: float, milestones: Sequence[int], factor: float = 0.1) -> float:
    return lr0 * factor ** sum(epoch >= m for m in milestones)


def learning_rate(cfg: TrainConfig, it: int, total: int, steps_per_epoch: int) -> float:
    if cfg.schedule == "constant":
        return cfg.lr0
    if cfg.schedule == "cosine":
        return cosine_lr(it, total, cfg.lr0)
    return step_lr(it / max(steps_per_epoch, 1), cfg.lr0, cfg.milestones, cfg.step_factor)


# -- flips ------------------------------------------------------------------

def flip_account(B_prev, B_next) -> Tuple[int, int]:
    """(up, down) = (#(-1 -> +1), #(+1 -> -1)).

    Positions that are zero (pruned) in either snapshot never count; use
    :func:`mask_changes` for those.
    """
    up, down = flip_account_rows(np.atleast_2d(B_prev), np.atleast_2d(B_next))
    return int(up.sum()), int(down.sum())


def flip_account_rows(B_prev: np.ndarray, B_next: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if B_prev.shape != B_next.shape:
        raise ValueError("codes differ in shape")
    up = ((B_prev < 0) & (B_next > 0)).sum(axis=1)
    down = ((B_prev > 0) & (B_next < 0)).sum(axis=1)
    return up, down


def mask_changes(B_prev, B_next) -> int:
    """Positions entering or leaving the mask between two snapshots."""
    return int(((np.asarray(B_prev) == 0) != (np.asarray(B_next) == 0)).sum())


def bop_flip_rule(B: np.ndarray, g_ema: np.ndarray, tau: float) -> np.ndarray:
    """Flip ``b`` wherever ``|g| > tau`` and ``sign(g) == sign(b)``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    flip = (np.abs(g_ema) > tau) & (np.sign(g_ema) == np.sign(B)) & (B != 0)
    return np.where(flip, -B, B)


@dataclass
class FlipLedger:
    """Per-layer, per-filter flip counts for every optimiser step."""

    up: Dict[int, List[np.ndarray]] = field(default_factory=dict)
    down: Dict[int, List[np.ndarray]] = field(default_factory=dict)

    def record(self, layer: int, up: np.ndarray, down: np.ndarray) -> None:
        self.up.setdefault(layer, []).append(up)
        self.down.setdefault(layer, []).append(down)

    def totals(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-iteration up and down counts summed over all filters."""
        n = max((len(v) for v in self.up.values()), default=0)
        up = np.zeros(n, dtype=np.int64)
        down = np.zeros(n, dtype=np.int64)
        for k in self.up:
            up += np.array([u.sum() for u in self.up[k]], dtype=np.int64)
            down += np.array([d.sum() for d in self.down[k]], dtype=np.int64)
        return up, down

    def filter_series(self, layer: int, filt: int) -> Tuple[np.ndarray, np.ndarray]:
        return (np.array([u[filt] for u in self.up[layer]]),
                np.array([d[filt] for d in self.down[layer]]))

    def cumulative_difference(self, layer: int, filt: int) -> np.ndarray:
        up, down = self.filter_series(layer, filt)
        return np.cumsum(down - up)

    def unbalanced_filter_steps(self) -> int:
        return int(sum(((u != d).sum()) for k in self.up for u, d in zip(self.up[k], self.down[k])))


# -- metrics ------------------------------------------------------------------

@dataclass
class MetricsLog:
    rows: List[dict] = field(default_factory=list)
    series: Dict[str, List[float]] = field(default_factory=dict)
    ledger: FlipLedger = field(default_factory=FlipLedger)
    violations: Dict[str, int] = field(default_factory=lambda: {"ratio": 0, "flip_balance": 0})

    def add(self, name: str, value: float) -> None:
        self.series.setdefault(name, []).append(float(value))

    def epoch_rows(self, split: str) -> List[dict]:
        return [r for r in self.rows if r["split"] == split]

    def final(self, split: str = "test") -> dict:
        rows = self.epoch_rows(split)
        return rows[-1] if rows else {}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(["" if r.get(c) is None else _fmt(r[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def summary(self) -> dict:
        out = {"violations": dict(self.violations)}
        for split in ("train", "test"):
            r = self.final(split)
            if r:
                out[f"final_{split}_loss"] = r["loss"]
                out[f"final_{split}_accuracy"] = r["accuracy"]
        return out


def _fmt(v):
    if isinstance(v, float):
        return repr(round(v, 10))
    return v


def hyper_diagnostics(log: MetricsLog) -> Dict[str, np.ndarray]:
    """Per-iteration latent |W| mean, gradient magnitude and flips."""
    up, down = log.ledger.totals()
    return {"latent_abs_mean": np.array(log.series.get("latent_abs_mean", [])),
            "grad_abs_mean": np.array(log.series.get("grad_abs_mean", [])),
            "flips_per_iter": up + down}


# -- loop -------------------------------------------------------------------

def evaluate(model, ds: LabeledDataset, batch_size: int = 256) -> Tuple[float, float]:
    model.eval()
    total_loss, correct = 0.0, 0
    for x, y in iterate_batches(ds, batch_size, None):
        logits = model.forward(x)
        loss, _ = softmax_xent(logits, y)
        total_loss += loss * len(y)
        correct += int((logits.argmax(axis=1) == y).sum())
    model.train()
    n = len(ds) - (1 if len(ds) % batch_size == 1 else 0)
    return total_loss / max(n, 1), correct / max(n, 1)


def _divergence_report(loss: float, it: int) -> str:
    return (f"loss became {loss} at iteration {it}. Without the per-layer scale "
            "sqrt(2/D) the forward variance grows by D/2 per binary layer, which "
            "overflows quickly; check the layer scale and learning rate.")


def _snapshot(layers: List[BinaryLayer]) -> List[np.ndarray]:
    return [l.code().reshape(l.n_filters, -1) for l in layers]


def _check_ratio(layer: BinaryLayer, rows: np.ndarray) -> int:
    if layer.binarizer not in ("bihalf", "ot"):
        return 0
    keep = (rows != 0).sum(axis=1) if layer.per_filter else None
    if layer.per_filter:
        want = np.array([positive_count(layer.p_pos, int(m)) for m in keep])
        return int(((rows > 0).sum(axis=1) != want).sum())
    return int((rows > 0).sum() != positive_count(layer.p_pos, int((rows != 0).sum())))


def train_epochs(model, train: LabeledDataset, test: Optional[LabeledDataset],
                 cfg: TrainConfig) -> MetricsLog:
    """Train ``model`` in place and return its metrics.

    Per-iteration rows carry batch loss/accuracy, summed flips and the mean
    per-filter weight entropy; per-epoch rows (``split`` train/test) carry the
    epoch averages.  Diagnostics additionally fill ``log.series`` and
    ``log.ledger`` and count any exact-ratio or flip-balance violation.
    """
    log = MetricsLog()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed).spawn(2)[1]))
    layers = binary_layers(model)
    bop = [l for l in layers if l.binarizer == "bop"]
    params = list(model.parameters())
    states: Dict[int, dict] = {id(p): {} for _, p in params}
    latent_ids = {id(l.W) for l in layers}
    bop_ids = {id(l.W) for l in bop}
    ema = {id(l.W): np.zeros_like(l.W.data) for l in bop}
    steps_per_epoch = max(1, sum(1 for _ in range(0, len(train), cfg.batch_size))
                          - (1 if len(train) % cfg.batch_size == 1 else 0))
    total = steps_per_epoch * cfg.epochs
    prev = _snapshot(layers) if cfg.diagnostics else None
    it = 0
    model.train()
    for epoch in range(cfg.epochs):
        ep_loss, ep_correct, ep_n = 0.0, 0, 0
        for x, y in iterate_batches(train, cfg.batch_size, rng, cfg.augment):
            lr = learning_rate(cfg, it, total, steps_per_epoch)
            model.zero_grad()
            logits = model.forward(x)
            loss, dlogits = softmax_xent(logits, y)
            if not math.isfinite(loss):
                raise TrainingDiverged(_divergence_report(loss, it))
            model.backward(dlogits.astype(logits.dtype))
            for name, p in params:
                if p.grad is None:
                    continue
                if id(p) in bop_ids:
                    m = ema[id(p)]
                    m *= cfg.bop_decay
                    m += (1 - cfg.bop_decay) * p.grad
                    p.data[...] = bop_flip_rule(p.data, m, cfg.bop_tau)
                    continue
                wd = cfg.weight_decay if id(p) in latent_ids else 0.0
                sgd_step(p.data, p.grad, states[id(p)], lr, cfg.momentum, wd)
            hits = int((logits.argmax(axis=1) == y).sum())
            acc = hits / len(y)
            ep_loss += loss * len(y)
            ep_correct += hits
            ep_n += len(y)
            row = {"iteration": it, "epoch": epoch, "split": "iter", "loss": loss,
                   "accuracy": acc, "lr": lr}
            if cfg.diagnostics:
                prev = _diagnose(model, layers, prev, log, row)
            log.rows.append(row)
            it += 1
        if ep_n:
            log.rows.append({"iteration": it, "epoch": epoch, "split": "train",
                             "loss": ep_loss / ep_n, "accuracy": ep_correct / ep_n, "lr": lr})
        if test is not None and len(test) >= 2:
            tl, ta = evaluate(model, test)
            log.rows.append({"iteration": it, "epoch": epoch, "split": "test",
                             "loss": tl, "accuracy": ta, "lr": lr if ep_n else cfg.lr0})
    return log


def _diagnose(model, layers, prev, log: MetricsLog, row: dict) -> List[np.ndarray]:
    snap = _snapshot(layers)
    ups = downs = 0
    ent = []
    for i, (layer, a, b) in enumerate(zip(layers, prev, snap)):
        up, down = flip_account_rows(a, b)
        log.ledger.record(i, up, down)
        ups += int(up.sum())
        downs += int(down.sum())
        log.violations["ratio"] += _check_ratio(layer, b)
        if layer.binarizer in ("bihalf", "ot") and mask_changes(a, b) == 0:
            log.violations["flip_balance"] += int((up != down).sum())
        if layer.binarizer != "real":
            ent.append(weight_entropy_rows(b))
    ent = np.concatenate(ent) if ent else np.array([np.nan])
    row.update(flips_up=ups, flips_down=downs, weight_entropy=float(ent.mean()))
    log.add("weight_entropy_min", ent.min())
    log.add("weight_entropy_max", ent.max())
    W = [np.abs(l.W.data).mean() for l in layers]
    G = [np.abs(l.W.grad).mean() for l in layers if l.W.grad is not None]
    log.add("latent_abs_mean", float(np.mean(W)))
    log.add("grad_abs_mean", float(np.mean(G)) if G else 0.0)
    acts = [m.last_output for m in getattr(model, "layers", [])
            if isinstance(m, (SignActivation, BatchNorm)) and getattr(m, "last_output", None) is not None]
    if acts:
        log.add("activation_entropy", float(np.mean([activation_entropy(a).mean() for a in acts])))
    return snap


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["milestones"] = list(cfg.milestones)
    return d


def dumps_summary(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True, default=float)
