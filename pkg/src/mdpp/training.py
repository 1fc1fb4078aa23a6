"""Supervised training: Adam updates, split plans, and the epoch loop.

Collections of annotated sequences are combined round-robin style: every
ordered (validation, test) pair of collections yields one plan whose training
set is all remaining collections. Training shuffles per epoch, averages the
per-sequence loss and gradient over each mini-batch, and keeps the weights
from the epoch with the lowest validation loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import io
from .data_model import MultiViewSequence, Summary
from .encoder import ModelParams, evaluate_loss, from_vector, loss_and_grad, to_vector
from .errors import ConfigError, NumericError, ValidationError


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 10
    iterations: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lam: float = 1.0
    bce_full_form: bool = True
    bce_normalize_steps: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be at least 1, got {self.iterations}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.lam < 0:
            raise ConfigError(f"lam must be non-negative, got {self.lam}")


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(first_moment=np.zeros(size), second_moment=np.zeros(size))


def adam_step(
    state: AdamState, vec: np.ndarray, grad: np.ndarray, config: TrainConfig
) -> np.ndarray:
    """One in-place Adam update on the flat parameter vector; returns it."""
    if not np.isfinite(grad).all():
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise NumericError(
            f"non-finite gradient at flat index {bad} on Adam step {state.step + 1}"
        )
    state.step += 1
    state.first_moment = config.beta1 * state.first_moment + (1 - config.beta1) * grad
    state.second_moment = config.beta2 * state.second_moment + (1 - config.beta2) * grad**2
    m_hat = state.first_moment / (1 - config.beta1**state.step)
    v_hat = state.second_moment / (1 - config.beta2**state.step)
    vec -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return vec


@dataclass(frozen=True)
class TrainingExample:
    """One sequence with its supervision targets."""

    sequence: MultiViewSequence
    target_views: np.ndarray
    target_steps: tuple[int, ...]

    def __post_init__(self):
        y = np.asarray(self.target_views, dtype=np.uint8)
        if y.shape != (self.sequence.num_views, self.sequence.num_steps):
            raise ValidationError(
                f"target_views shape {y.shape} does not match sequence "
                f"({self.sequence.num_views}, {self.sequence.num_steps})"
            )
        y.flags.writeable = False
        object.__setattr__(self, "target_views", y)
        derived = tuple(int(t) for t in np.flatnonzero(y.any(axis=0)))
        if tuple(self.target_steps) != derived:
            raise ValidationError(
                f"target_steps {self.target_steps} inconsistent with target_views {derived}"
            )
        object.__setattr__(self, "target_steps", derived)


def targets_from_summary(sequence: MultiViewSequence, summary: Summary) -> TrainingExample:
    """Turn a reference summary's (view, step) pairs into training targets."""
    mask = summary.frame_mask(sequence.num_views, sequence.num_steps)
    steps = tuple(int(t) for t in np.flatnonzero(mask.any(axis=0)))
    return TrainingExample(sequence=sequence, target_views=mask, target_steps=steps)


@dataclass(frozen=True)
class SplitPlan:
    train_collections: tuple[str, ...]
    val_collection: str
    test_collection: str


def round_robin_splits(collection_ids: Sequence[str]) -> list[SplitPlan]:
    """All ordered (validation, test) collection pairs; K ids give K*(K-1) plans."""
    ids = list(collection_ids)
    if len(ids) != len(set(ids)):
        raise ConfigError("collection ids must be unique")
    if len(ids) < 3:
        raise ConfigError(f"need at least 3 collections to split, got {len(ids)}")
    plans = []
    for val_id in ids:
        for test_id in ids:
            if test_id == val_id:
                continue
            train = tuple(c for c in ids if c not in (val_id, test_id))
            plans.append(
                SplitPlan(train_collections=train, val_collection=val_id, test_collection=test_id)
            )
    return plans


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass(frozen=True)
class TrainResult:
    params: ModelParams
    best_epoch: int
    best_val_loss: float
    history: tuple[EpochStats, ...]


def _batch_loss_and_grad(params, examples, config):
    total_loss = 0.0
    total_grad = None
    for ex in examples:
        loss, grad = loss_and_grad(
            params, ex.sequence, ex.target_views, ex.target_steps,
            lam=config.lam, bce_full_form=config.bce_full_form,
            bce_normalize_steps=config.bce_normalize_steps,
        )
        gvec = to_vector(grad)
        total_loss += loss
        total_grad = gvec if total_grad is None else total_grad + gvec
    count = len(examples)
    return total_loss / count, total_grad / count


def _mean_val_loss(params, examples, config):
    return float(
        np.mean(
            [
                evaluate_loss(
                    params, ex.sequence, ex.target_views, ex.target_steps,
                    lam=config.lam, bce_full_form=config.bce_full_form,
                    bce_normalize_steps=config.bce_normalize_steps,
                ).total
                for ex in examples
            ]
        )
    )


def train(
    initial: ModelParams,
    collections: Mapping[str, Sequence[TrainingExample]],
    plan: SplitPlan,
    config: TrainConfig,
) -> TrainResult:
    """Run the full loop for one split plan and return the best checkpoint.

    Validation runs after every epoch; ties keep the earliest epoch so a
    rerun with the same seed reproduces the same selected weights.
    """
    for cid in (*plan.train_collections, plan.val_collection, plan.test_collection):
        if cid not in collections:
            raise ConfigError(f"split plan references unknown collection {cid!r}")
    train_examples = [ex for cid in plan.train_collections for ex in collections[cid]]
    val_examples = list(collections[plan.val_collection])
    if not train_examples:
        raise ConfigError("split plan leaves no training examples")
    if not val_examples:
        raise ConfigError("split plan leaves no validation examples")

    rng = np.random.default_rng(config.seed)
    vec = to_vector(initial)
    state = AdamState.zeros(vec.size)
    best_vec = vec.copy()
    best_val = np.inf
    best_epoch = 0
    history: list[EpochStats] = []

    for epoch in range(1, config.iterations + 1):
        order = rng.permutation(len(train_examples))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_examples[j] for j in order[start : start + config.batch_size]]
            params = from_vector(initial, vec)
            loss, grad = _batch_loss_and_grad(params, batch, config)
            epoch_losses.append(loss)
            vec = adam_step(state, vec, grad, config)
        params = from_vector(initial, vec)
        val_loss = _mean_val_loss(params, val_examples, config)
        history.append(
            EpochStats(epoch=epoch, train_loss=float(np.mean(epoch_losses)), val_loss=val_loss)
        )
        if val_loss < best_val:
            best_val = val_loss
            best_vec = vec.copy()
            best_epoch = epoch

    return TrainResult(
        params=from_vector(initial, best_vec),
        best_epoch=best_epoch,
        best_val_loss=float(best_val),
        history=tuple(history),
    )


def save_checkpoint(path, params: ModelParams, extra: dict | None = None) -> None:
    """Write weights with enough header metadata to rebuild the model."""
    header = {
        "input_dim": params.input_dim,
        "hidden_size": params.hidden_size,
        "output_dim": params.output_dim,
        "seed": params.seed,
    }
    if extra:
        header["extra"] = extra
    io.write_checkpoint(path, header, params.named_arrays())


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    doc, blocks = io.read_checkpoint(path)
    params = ModelParams(
        input_dim=int(doc["input_dim"]),
        hidden_size=int(doc["hidden_size"]),
        output_dim=int(doc["output_dim"]),
        seed=int(doc.get("seed", 0)),
        **blocks,
    )
    return params, doc
