"""Losses and the training loop for labeled plus must-link supervision.

A training step mixes labeled items (a sample with its one-hot label; a
singleton is a pair whose two slots coincide) and constraint items (two
samples that must share a class). The step objective is

    L = L_l + L_c

where L_l is the mean cross-entropy over the step's labeled sample slots
and L_c is the weighted mean must-link penalty over the step's constraint
pairs; the penalty for a pair is one minus the inner product of the two
predicted distributions, which is exactly the probability the two samples
get different classes when drawn independently. Mode rules: supervised
uses labels only, semi uses both (an empty constraint set degrades to
supervised), unsupervised uses constraints only with unit weight, and
fine_tune is semi starting from given parameters.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import NUM_CLASSES
from . import evaluation, net
from .net import ArchConfig, ClassifierParams
from .samples import Sample
from .tracking import Constraint

MODES = ("supervised", "semi", "unsupervised", "fine_tune")

_P_FLOOR = 1e-12  # probability clamp used only inside gradient formulas


class TrainingModeError(ValueError):
    """The provided label/constraint sets do not fit the requested mode."""


@dataclass
class TrainConfig:
    mode: str = "semi"
    constraint_weight: float = 1.0  # scales every constraint item's penalty
    labeled_per_step: int = 8       # labeled items drawn per step
    constraints_per_step: int = 40  # constraint items drawn per step
    learning_rate: float = 0.1
    momentum: float = 0.9
    max_steps: int = 1000
    loss_stop: float = 1e-4         # stop when the epoch-mean total loss dips below
    seed: int = 0
    checkpoint_every: int = 0       # 0 disables periodic checkpoints
    checkpoint_dir: str | None = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got '{self.mode}'")
        if not 0.0 <= self.constraint_weight <= 1.0:
            raise ValueError("constraint_weight must be in [0, 1]")
        if self.labeled_per_step < 0 or self.constraints_per_step < 0:
            raise ValueError("per-step item counts must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.loss_stop < 0:
            raise ValueError("loss_stop must be >= 0")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")


@dataclass
class BatchItem:
    """One step item: either a labeled pair or a must-link pair.

    Labeled singletons set sample_j == sample_i with the same label.
    """

    is_constraint: bool
    sample_i: int
    sample_j: int
    label_i: int | None = None
    label_j: int | None = None

    def __post_init__(self) -> None:
        if self.is_constraint:
            if self.label_i is not None or self.label_j is not None:
                raise ValueError("constraint items carry no labels")
        else:
            if self.label_i is None or self.label_j is None:
                raise ValueError("labeled items need labels on both slots")


@dataclass
class LossReport:
    step: int
    labeled_loss: float      # L_l
    constraint_loss: float   # L_c
    total_loss: float        # L = L_l + L_c
    mode: str


# --------------------------------------------------------------------------
# loss functions
# --------------------------------------------------------------------------

def one_hot(label: int, num_classes: int = NUM_CLASSES) -> np.ndarray:
    if not 1 <= label <= num_classes:
        raise ValueError(f"label must be in 1..{num_classes}, got {label}")
    v = np.zeros(num_classes)
    v[label - 1] = 1.0
    return v


def supervised_loss(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean cross-entropy: -(1/M) sum_i sum_k 1[y_ik] ln p_ik."""
    probs = np.asarray(probs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if probs.ndim == 1:
        probs = probs[None, :]
        targets = targets[None, :]
    if probs.shape != targets.shape:
        raise ValueError("probs and targets must have matching shapes")
    if len(probs) == 0:
        raise ValueError("supervised_loss needs at least one sample")
    with np.errstate(divide="ignore"):
        logs = np.log(probs)
    # Only target entries are read, so zeros elsewhere stay harmless.
    picked = np.where(targets > 0.0, logs, 0.0).sum(axis=1)
    return float(-picked.mean())


def constraint_penalty(probs_i: np.ndarray, probs_j: np.ndarray) -> float:
    """Probability the two samples are classified differently: 1 - p_i . p_j."""
    p = np.asarray(probs_i, dtype=float)
    q = np.asarray(probs_j, dtype=float)
    if p.shape != q.shape:
        raise ValueError("probability vectors must have matching shapes")
    return float(1.0 - np.dot(p, q))


def constraint_loss(pairs: Sequence[tuple[np.ndarray, np.ndarray]],
                    constraint_weight: float) -> float:
    """Weighted mean must-link penalty: (w/N) sum_n (1 - p_i . p_j)."""
    if len(pairs) == 0:
        raise ValueError("constraint_loss needs at least one pair")
    total = sum(constraint_penalty(p, q) for p, q in pairs)
    return float(constraint_weight * total / len(pairs))


def pair_item_loss(item: BatchItem, probs_i: np.ndarray, probs_j: np.ndarray,
                   constraint_weight: float = 1.0,
                   num_classes: int = NUM_CLASSES) -> float:
    """Per-item loss: half the pair's cross-entropies, or the weighted
    half-penalty for a constraint item."""
    if item.is_constraint:
        return float(constraint_weight * 0.5 * constraint_penalty(probs_i, probs_j))
    ce_i = -math.log(float(probs_i[item.label_i - 1]))
    ce_j = -math.log(float(probs_j[item.label_j - 1]))
    return 0.5 * (ce_i + ce_j)


# --------------------------------------------------------------------------
# sample bank: id -> pooled network input, cached
# --------------------------------------------------------------------------

class SampleBank:
    """Holds raw sample canvases and caches their pooled float inputs."""

    def __init__(self, samples: Iterable[Sample], arch: ArchConfig | None = None):
        self.arch = arch or ArchConfig()
        self._raw: dict[int, np.ndarray] = {}
        self._pooled: dict[int, np.ndarray] = {}
        for s in samples:
            self._raw[s.sample_id] = s.channels

    def __contains__(self, sample_id: int) -> bool:
        return sample_id in self._raw

    def __len__(self) -> int:
        return len(self._raw)

    def ids(self) -> list[int]:
        return sorted(self._raw)

    def pooled(self, sample_id: int) -> np.ndarray:
        out = self._pooled.get(sample_id)
        if out is None:
            out = net.preprocess(self._raw[sample_id], self.arch)
            self._pooled[sample_id] = out
        return out


# --------------------------------------------------------------------------
# batching
# --------------------------------------------------------------------------

class _EpochSampler:
    """Draws fixed-size chunks without replacement, reshuffling per epoch.

    When fewer items than a chunk remain the draw tops up from the next
    epoch's shuffle, so every chunk has full size and every item appears
    exactly once per epoch.
    """

    def __init__(self, items: Sequence, rng: np.random.Generator):
        if not items:
            raise ValueError("sampler needs a nonempty item list")
        self._items = list(items)
        self._rng = rng
        self._queue: list = []
        self.epochs_started = 0

    def _refill(self) -> None:
        order = self._rng.permutation(len(self._items))
        self._queue.extend(self._items[i] for i in order)
        self.epochs_started += 1

    def draw(self, count: int) -> list:
        while len(self._queue) < count:
            self._refill()
        out = self._queue[:count]
        del self._queue[:count]
        return out


def _step_quota(mode: str, config: TrainConfig, have_labeled: bool,
                have_constraints: bool) -> tuple[int, int]:
    """Items per step (labeled, constraint) after degenerate-case rules."""
    if mode == "supervised":
        if not have_labeled:
            raise TrainingModeError("supervised mode needs labeled samples")
        return config.labeled_per_step, 0
    if mode == "unsupervised":
        if not have_constraints:
            raise TrainingModeError("unsupervised mode needs constraints")
        return 0, config.constraints_per_step
    # semi / fine_tune
    if not have_labeled:
        raise TrainingModeError(
            f"{mode} mode needs labeled samples; use unsupervised mode instead")
    n = config.constraints_per_step if have_constraints else 0
    return config.labeled_per_step, n


def make_batches(labeled: Sequence[tuple[int, int]],
                 constraints: Sequence[Constraint],
                 config: TrainConfig) -> Iterator[list[BatchItem]]:
    """Endless stream of per-step item lists.

    labeled: (sample_id, label) pairs; each becomes a singleton item.
    Labeled and constraint draws use independent seeded streams so the
    same seed gives the same labeled batches regardless of the constraint
    set's size or content.
    """
    config.validate()
    m, n = _step_quota(config.mode, config, len(labeled) > 0, len(constraints) > 0)
    root = np.random.SeedSequence(config.seed)
    labeled_ss, constraint_ss, order_ss, _init_ss = root.spawn(4)
    labeled_rng = np.random.default_rng(labeled_ss)
    constraint_rng = np.random.default_rng(constraint_ss)
    order_rng = np.random.default_rng(order_ss)

    labeled_sampler = _EpochSampler(list(labeled), labeled_rng) if m > 0 else None
    constraint_sampler = (_EpochSampler(list(constraints), constraint_rng)
                          if n > 0 else None)

    def stream() -> Iterator[list[BatchItem]]:
        while True:
            items: list[BatchItem] = []
            if labeled_sampler is not None:
                for sample_id, label in labeled_sampler.draw(m):
                    items.append(BatchItem(False, sample_id, sample_id, label, label))
            if constraint_sampler is not None:
                for c in constraint_sampler.draw(n):
                    items.append(BatchItem(True, c.sample_i, c.sample_j))
            order = order_rng.permutation(len(items))
            yield [items[i] for i in order]

    return stream()


def _primary_epoch_steps(mode: str, config: TrainConfig, labeled_count: int,
                         constraint_count: int) -> int:
    """Steps that constitute one epoch of the mode's primary item set."""
    if mode == "unsupervised":
        return max(1, math.ceil(constraint_count / max(config.constraints_per_step, 1)))
    return max(1, math.ceil(labeled_count / max(config.labeled_per_step, 1)))


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------

def _derived_init_seed(seed: int) -> int:
    root = np.random.SeedSequence(seed)
    _, _, _, init_ss = root.spawn(4)
    return int(init_ss.generate_state(1, dtype=np.uint64)[0])


def _step_loss_and_grad(params: ClassifierParams, bank: SampleBank,
                        items: list[BatchItem], mode: str,
                        constraint_weight: float) -> tuple[float, float, np.ndarray]:
    """Returns (L_l, L_c, gradient of L_l + L_c w.r.t. the parameter vector)."""
    labeled_items = [it for it in items if not it.is_constraint]
    constraint_items = [it for it in items if it.is_constraint]
    weight = 1.0 if mode == "unsupervised" else constraint_weight

    slots: list[int] = []  # sample id per forward slot
    for it in labeled_items:
        slots.append(it.sample_i)  # singleton: one forward reused for both halves
    for it in constraint_items:
        slots.append(it.sample_i)
        slots.append(it.sample_j)

    x = np.stack([bank.pooled(sid) for sid in slots])
    probs, cache = net.forward_batch(params, x, want_cache=True)
    dprobs = np.zeros_like(probs)

    m = len(labeled_items)
    n = len(constraint_items)
    labeled_loss = 0.0
    if m:
        idx = np.arange(m)
        targets = np.stack([one_hot(it.label_i, params.arch.num_classes)
                            for it in labeled_items])
        labeled_loss = supervised_loss(probs[idx], targets)
        picked = np.maximum(probs[idx], _P_FLOOR)
        dprobs[idx] -= targets / picked / m

    constr_loss = 0.0
    if n:
        base = m
        pi = probs[base:base + 2 * n:2]
        pj = probs[base + 1:base + 2 * n:2]
        inner = (pi * pj).sum(axis=1)
        constr_loss = float(weight * (1.0 - inner).mean())
        dprobs[base:base + 2 * n:2] -= weight * pj / n
        dprobs[base + 1:base + 2 * n:2] -= weight * pi / n

    grad = net.backward_batch(params, cache, dprobs)
    return labeled_loss, constr_loss, grad


def train(bank: SampleBank,
          labeled: Sequence[tuple[int, int]],
          constraints: Sequence[Constraint],
          config: TrainConfig,
          initial_params: ClassifierParams | None = None,
          validation: Sequence[tuple[int, int]] | None = None,
          arch: ArchConfig | None = None) -> tuple[ClassifierParams, list[LossReport]]:
    """Run SGD with momentum until max_steps or the loss floor.

    validation: optional (sample_id, label) set; when present together
    with periodic checkpoints, the returned parameters are the checkpoint
    with the best validation macro F-measure instead of the final state.
    """
    config.validate()
    mode = config.mode
    if mode in ("unsupervised", "fine_tune") and initial_params is None:
        raise TrainingModeError(f"{mode} mode needs initial parameters")
    for sid, _ in labeled:
        if sid not in bank:
            raise ValueError(f"labeled sample {sid} not in the sample bank")
    for c in constraints:
        if c.sample_i not in bank or c.sample_j not in bank:
            raise ValueError(f"constraint ({c.sample_i}, {c.sample_j}) references "
                             f"a sample not in the bank")

    if initial_params is not None:
        params = initial_params.copy()
    else:
        params = net.init(_derived_init_seed(config.seed), arch or bank.arch)

    batches = make_batches(labeled, constraints, config)  # validates the mode
    epoch_steps = _primary_epoch_steps(mode, config, len(labeled), len(constraints))

    theta = params.to_vector()
    velocity = np.zeros_like(theta)
    history: list[LossReport] = []
    epoch_losses: list[float] = []
    best_params = None
    best_score = -1.0

    def checkpoint(step: int, current: ClassifierParams) -> None:
        nonlocal best_params, best_score
        if config.checkpoint_dir:
            os.makedirs(config.checkpoint_dir, exist_ok=True)
            net.save(os.path.join(config.checkpoint_dir, f"step_{step:06d}.params"),
                     current)
        if validation:
            score = _validation_score(current, bank, validation)
            if score > best_score:
                best_score = score
                best_params = current.copy()

    for step in range(1, config.max_steps + 1):
        items = next(batches)
        params = ClassifierParams.from_vector(params.arch, theta)
        l_l, l_c, grad = _step_loss_and_grad(params, bank, items, mode,
                                             config.constraint_weight)
        total = l_l + l_c
        velocity = config.momentum * velocity - config.learning_rate * grad
        theta = theta + velocity
        history.append(LossReport(step, l_l, l_c, total, mode))

        if config.checkpoint_every and step % config.checkpoint_every == 0:
            checkpoint(step, ClassifierParams.from_vector(params.arch, theta))

        epoch_losses.append(total)
        if len(epoch_losses) >= epoch_steps:
            if float(np.mean(epoch_losses)) < config.loss_stop:
                break
            epoch_losses = []

    final = ClassifierParams.from_vector(params.arch, theta)
    if validation:
        checkpoint(len(history), final)
        if best_params is not None:
            return best_params, history
    return final, history


def _validation_score(params: ClassifierParams, bank: SampleBank,
                      validation: Sequence[tuple[int, int]]) -> float:
    x = np.stack([bank.pooled(sid) for sid, _ in validation])
    probs = net.forward_batch(params, x)
    predicted = probs.argmax(axis=1) + 1
    truths = [label for _, label in validation]
    report = evaluation.evaluate(list(predicted), truths,
                                 num_classes=params.arch.num_classes)
    return report.macro_f


def predict_batch(params: ClassifierParams, bank: SampleBank,
                  sample_ids: Sequence[int]) -> np.ndarray:
    """(N, K) probabilities for a list of bank sample ids."""
    if not sample_ids:
        return np.zeros((0, params.arch.num_classes))
    x = np.stack([bank.pooled(sid) for sid in sample_ids])
    return net.forward_batch(params, x)


# --------------------------------------------------------------------------
# loss history CSV
# --------------------------------------------------------------------------

def write_loss_history(path: str, history: Sequence[LossReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "labeled_loss", "constraint_loss",
                         "total_loss", "mode"])
        for r in history:
            writer.writerow([r.step, repr(r.labeled_loss), repr(r.constraint_loss),
                             repr(r.total_loss), r.mode])


def read_loss_history(path: str) -> list[LossReport]:
    out = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(LossReport(int(row["step"]), float(row["labeled_loss"]),
                                  float(row["constraint_loss"]),
                                  float(row["total_loss"]), row["mode"]))
    return out
