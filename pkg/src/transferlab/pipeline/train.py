"""The optimisation loop shared by pre-training, frozen fine-tuning and baselines."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from transferlab.autodiff import (
    AdamState,
    adam_step,
    backward,
    cross_entropy_label_smoothed,
    inverse_sqrt_lr,
    reshape,
)
from transferlab.batching import Example, collate
from transferlab.errors import InvalidArgument, NonFiniteError, TrainingDiverged
from transferlab.metrics import teacher_forced_stats
from transferlab.model import PartitionedModel
from transferlab.vocab import PAD

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainBudget:
    max_steps: int
    patience: int = 5  # evaluations without improvement before stopping; 0 disables
    eval_every: int = 250
    batch_size: int = 64
    lr: float = 3e-4
    warmup_steps: int = 400
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9

    def __post_init__(self):
        if self.max_steps < 0 or self.batch_size < 1 or self.eval_every < 1 or self.patience < 0:
            raise InvalidArgument(f"invalid training budget {self}")


@dataclass
class TrainResult:
    steps: int
    stopped_early: bool
    best_val_nll: float | None
    history: list[dict] = field(default_factory=list)
    seconds: float = 0.0  # wall clock, excluded from anything that must be reproducible


def _order_stream(n: int, seed: int):
    epoch = 0
    while True:
        yield from np.random.default_rng([seed, epoch]).permutation(n)
        epoch += 1


def train(model: PartitionedModel, train_examples: Sequence[Example], val_examples: Sequence[Example],
          budget: TrainBudget, seed: int = 0) -> TrainResult:
    """Optimise every tensor of ``model`` whose ``requires_grad`` is set.

    Dropout masks for step t come from a generator seeded with (seed, t) and
    batch order from (seed, epoch), so a run replays bit-for-bit.  With
    validation data, the best trainable weights seen at an evaluation are
    restored at the end.
    """
    if not train_examples:
        raise InvalidArgument("no training examples")
    params = model.parameters()
    trainable = {k: t for k, t in params.items() if t.requires_grad}
    name_of = {id(t): k for k, t in trainable.items()}
    state = AdamState(lr=budget.lr, beta1=budget.beta1, beta2=budget.beta2, eps=budget.eps)
    smoothing = model.config.label_smoothing
    vocab = model.tgt_vocab_size

    started = time.perf_counter()
    order = _order_stream(len(train_examples), seed)
    best_nll = math.inf
    best_weights: dict[str, np.ndarray] | None = None
    bad_evals = 0
    history: list[dict] = []
    stopped_early = False
    step = 0
    running = []

    def evaluate(at_step: int) -> bool:
        nonlocal best_nll, best_weights, bad_evals
        if not val_examples:
            return False
        stats = teacher_forced_stats(model, val_examples, budget.batch_size)
        nll = stats.nll_sum / max(stats.tokens, 1)
        acc = 100.0 * stats.correct / max(stats.tokens, 1)
        train_loss = float(np.mean(running)) if running else float("nan")
        running.clear()
        history.append(dict(step=at_step, train_loss=train_loss, val_nll=nll, val_acc=acc))
        log.info("step %d train_loss %.4f val_nll %.4f val_acc %.2f", at_step, train_loss, nll, acc)
        if nll < best_nll:
            best_nll = nll
            best_weights = {k: t.data.copy() for k, t in trainable.items()}
            bad_evals = 0
            return False
        bad_evals += 1
        return budget.patience > 0 and bad_evals >= budget.patience

    while step < budget.max_steps and trainable:
        idx = [next(order) for _ in range(min(budget.batch_size, len(train_examples)))]
        src, tgt_in, gold = collate([train_examples[i] for i in idx])
        step += 1
        rng = np.random.default_rng([seed, step])
        try:
            logits = model.forward(src, tgt_in, training=True, rng=rng)
            loss = cross_entropy_label_smoothed(reshape(logits, (-1, vocab)), gold.reshape(-1), smoothing, PAD)
            grads = backward(loss)
        except NonFiniteError as exc:
            raise TrainingDiverged(step, str(exc)) from exc
        running.append(loss.item())
        named = {name_of[id(t)]: g for t, g in grads.items() if id(t) in name_of}
        lr = inverse_sqrt_lr(step, budget.lr, budget.warmup_steps)
        adam_step(trainable, named, state, lr=lr)
        if step % budget.eval_every == 0 and evaluate(step):
            stopped_early = True
            break

    if val_examples and (not history or history[-1]["step"] != step) and trainable and step > 0:
        evaluate(step)
    if best_weights is not None:
        for k, data in best_weights.items():
            trainable[k].data[...] = data
    return TrainResult(step, stopped_early, None if best_weights is None else best_nll, history,
                       time.perf_counter() - started)
