"""Mini-batch Adam training with validation-based early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from vicnn.checkpoint import Checkpoint
from vicnn.data import Dataset, stack
from vicnn.engine import AdamState, adam_step, backward, forward, init_params, mse_loss
from vicnn.errors import DataError, NumericError, ValidationError
from vicnn.zoo import ModelSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 100
    batch_size: int = 32
    patience: int = 2
    eval_every: int = 1
    lr: float = 1e-3
    seed: int = 0
    task: str = "denoise"

    def __post_init__(self):
        if self.max_epochs < 1 or self.batch_size < 1 or self.patience < 1 or self.eval_every < 1:
            raise ValidationError(f"invalid training config {self}")

    def to_dict(self) -> dict:
        return asdict(self)


class EarlyStopping:
    """Stop after ``patience`` consecutive evaluations without a strictly lower loss."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad = 0

    def update(self, epoch: int, loss: float) -> tuple[bool, bool]:
        """Record one evaluation; returns ``(improved, stop)``."""
        if loss < self.best:
            self.best, self.best_epoch, self.bad = loss, epoch, 0
            return True, False
        self.bad += 1
        return False, self.bad >= self.patience


def evaluate_loss(params, spec: ModelSpec, data, batch_size: int = 32) -> float:
    """Mean squared error over a set of sample pairs (or an ``(x, y)`` tuple)."""
    x, y = data if isinstance(data, tuple) else stack(data)
    if len(x) == 0:
        raise DataError("cannot evaluate on an empty set")
    total = 0.0
    for s in range(0, len(x), batch_size):
        out, _ = forward(spec, params, x[s:s + batch_size])
        diff = out.astype(np.float64) - y[s:s + batch_size]
        total += float(np.sum(diff * diff))
    return total / x.size


def _seeds(seed: int):
    init, shuffle = np.random.SeedSequence(seed).spawn(2)
    return int(init.generate_state(1)[0]), np.random.default_rng(shuffle)


def train(spec: ModelSpec, data: Dataset | tuple, cfg: TrainConfig = TrainConfig(),
          manifest_digest: str | None = None, init=None, on_epoch=None) -> Checkpoint:
    """Train ``spec`` and return a checkpoint holding the best-validation parameters.

    ``data`` is a :class:`Dataset` or a ``(train_pairs, val_pairs)`` tuple.
    ``init`` optionally supplies starting parameters.
    """
    spec.validate()
    if isinstance(data, Dataset):
        train_pairs, val_pairs = data.train, data.val
        digest = data.digest if manifest_digest is None else manifest_digest
    else:
        train_pairs, val_pairs = data
        digest = manifest_digest or ""
    if not train_pairs or not val_pairs:
        raise DataError("training needs non-empty train and validation sets")
    x, y = stack(train_pairs)
    val = stack(val_pairs)
    init_seed, rng = _seeds(cfg.seed)
    params = [p.copy() for p in init] if init is not None else init_params(spec, init_seed)
    adam = AdamState.for_params(params, lr=cfg.lr)
    stopper = EarlyStopping(cfg.patience)
    best = [p.copy() for p in params]
    history = []

    def checkpoint(ps, status="ok"):
        return Checkpoint(spec, [p.copy() for p in ps], adam, history, cfg.to_dict(), digest,
                          stopper.best_epoch, status)

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(x))
        sq_sum = 0.0
        for s in range(0, len(x), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            out, tape = forward(spec, params, x[idx])
            loss, grad = mse_loss(out, y[idx])
            sq_sum += loss * grad.size
            grads = backward(spec, params, tape, grad)
            adam_step(params, grads, adam)
        train_loss = sq_sum / x.size
        if epoch % cfg.eval_every:
            continue
        val_loss = evaluate_loss(params, spec, val, cfg.batch_size)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        log.info("%s epoch %d train %.6f val %.6f", spec.name, epoch, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(history[-1])
        if not (math.isfinite(val_loss) and math.isfinite(train_loss)):
            raise NumericError(f"{spec.name}: loss diverged at epoch {epoch}", checkpoint(params, "diverged"))
        improved, stop = stopper.update(epoch, val_loss)
        if improved:
            best = [p.copy() for p in params]
        if stop:
            break
    return checkpoint(best)
