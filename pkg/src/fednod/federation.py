"""FedAvg: client-side local training, server-side aggregation and evaluation.

Randomness is derived from ``(seed, client_id, epoch)`` where ``epoch``
counts the client's local epochs across all rounds. With a single client
this makes federated training identical, bit for bit, to centralized
training for the same number of epochs.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np

from .data.dataset import Dataset
from .errors import AggregationError, IncompatibleWeightsError, TrainingDivergedError
from .models import NUM_CLASSES, ModelSpec, ModelWeights, weights_extract, weights_load
from .nn.layers import DTYPE, softmax_cross_entropy
from .nn.optim import AdamState, Hyperparameters, adam_step

log = logging.getLogger(__name__)

EVAL_BATCH = 64


@dataclass
class ClientUpdate:
    client_id: int
    weights: ModelWeights
    n_samples: int
    local_metrics: tuple[float, float] = (0.0, 0.0)  # (train_loss, train_accuracy)


@dataclass
class RoundReport:
    round: int
    test_accuracy: float
    test_loss: float
    confusion: np.ndarray
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "test_accuracy": self.test_accuracy,
            "test_loss": self.test_loss,
            "confusion": self.confusion.tolist(),
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, d) -> RoundReport:
        return cls(int(d["round"]), float(d["test_accuracy"]), float(d["test_loss"]),
                   np.asarray(d["confusion"], dtype=np.int64), float(d.get("wall_time", 0.0)))

    def same_outcome(self, other: RoundReport) -> bool:
        """Equality ignoring wall time."""
        return (
            self.round == other.round
            and self.test_accuracy == other.test_accuracy
            and self.test_loss == other.test_loss
            and np.array_equal(self.confusion, other.confusion)
        )


@dataclass
class ServerState:
    round: int
    global_weights: ModelWeights
    config: Any = None
    history: list[RoundReport] = field(default_factory=list)


def epoch_rng(seed, client_id: int, epoch: int) -> np.random.Generator:
    """Generator driving the shuffle and dropout masks of one local epoch."""
    seed = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return np.random.default_rng(seed + [int(client_id), int(epoch)])


def local_train(model: ModelSpec, global_weights: ModelWeights, shard: Dataset, hyper: Hyperparameters,
                local_epochs: int, seed, client_id: int = 0, epoch_offset: int = 0,
                opt_state: AdamState | None = None, round_index: int | None = None):
    """Run ``local_epochs`` passes of mini-batch Adam on ``shard``.

    ``model`` is used as scratch space: its parameters are overwritten with
    ``global_weights``. Returns ``(update, opt_state)``; the optimizer state
    is meant to be carried into the client's next round.
    """
    if len(shard) == 0:
        raise ValueError(f"client {client_id} has an empty shard")
    weights_load(model, global_weights)
    params = model.parameters()
    state = opt_state if opt_state is not None else AdamState.zeros_like(params)
    n = len(shard)
    loss_sum = correct = seen = 0.0
    for e in range(local_epochs):
        rng = epoch_rng(seed, client_id, epoch_offset + e)
        order = rng.permutation(n)
        loss_sum = correct = seen = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            x = shard.tensors(idx)
            y = shard.labels[idx]
            loss, logits, grads = model.loss_and_grads(x, y, rng)
            if not np.isfinite(loss):
                raise TrainingDivergedError("non-finite training loss", round_index, client_id)
            try:
                params, state = adam_step(params, grads, state, hyper)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(str(exc), round_index, client_id) from None
            model.set_parameters(params)
            loss_sum += loss * len(idx)
            correct += float(np.sum(logits.argmax(axis=1) == y))
            seen += len(idx)
    metrics = (loss_sum / seen, correct / seen) if seen else (0.0, 0.0)
    update = ClientUpdate(client_id, weights_extract(model), n, metrics)
    return update, state


class Client:
    """A simulated participant: owns a shard and its optimizer state across rounds."""

    def __init__(self, client_id: int, shard: Dataset, model: ModelSpec, hyper: Hyperparameters,
                 local_epochs: int = 1, seed=0):
        self.client_id = client_id
        self.shard = shard
        self.model = model
        self.hyper = hyper
        self.local_epochs = local_epochs
        self.seed = seed
        self.opt_state: AdamState | None = None
        self.epochs_done = 0

    def fit(self, global_weights: ModelWeights, round_index: int) -> ClientUpdate:
        update, self.opt_state = local_train(
            self.model, global_weights, self.shard, self.hyper, self.local_epochs, self.seed,
            client_id=self.client_id, epoch_offset=self.epochs_done, opt_state=self.opt_state,
            round_index=round_index,
        )
        self.epochs_done += self.local_epochs
        return update


class FitsUpdates(Protocol):
    client_id: int

    def fit(self, global_weights: ModelWeights, round_index: int) -> ClientUpdate: ...


def aggregation_coefficients(updates) -> np.ndarray:
    counts = np.array([u.n_samples for u in updates], dtype=np.float64)
    return counts / counts.sum()


def fedavg_aggregate(updates: list[ClientUpdate]) -> ModelWeights:
    """Sample-count weighted mean of client weights, combined in client_id order."""
    if not updates:
        raise AggregationError("no client updates to aggregate")
    updates = sorted(updates, key=lambda u: u.client_id)
    reference = updates[0].weights
    for u in updates[1:]:
        if not u.weights.same_structure(reference):
            raise IncompatibleWeightsError(f"update from client {u.client_id} does not match the model structure")
    if any(u.n_samples <= 0 for u in updates):
        raise AggregationError("every update needs a positive sample count")
    coeffs = aggregation_coefficients(updates)
    entries = []
    for j, (layer, name, _) in enumerate(reference.entries):
        acc = np.zeros(reference.entries[j][2].shape, dtype=np.float64)
        for c, u in zip(coeffs, updates):
            acc += c * u.weights.entries[j][2].astype(np.float64)
        entries.append((layer, name, acc.astype(DTYPE)))
    return ModelWeights(reference.arch_name, entries)


def confusion_matrix(labels, predictions, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """``m[i, j]`` counts samples of true class i predicted as j."""
    flat = np.asarray(labels) * num_classes + np.asarray(predictions)
    return np.bincount(flat, minlength=num_classes**2).reshape(num_classes, num_classes)


def evaluate(model: ModelSpec, weights: ModelWeights | None, test_set: Dataset, batch_size: int = EVAL_BATCH):
    """Accuracy, mean cross-entropy and confusion matrix with dropout disabled.

    Ties in the logits go to the lowest class index.
    """
    if len(test_set) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    if weights is not None:
        weights_load(model, weights)
    predictions = np.empty(len(test_set), dtype=np.int64)
    loss_sum = 0.0
    for start in range(0, len(test_set), batch_size):
        idx = np.arange(start, min(start + batch_size, len(test_set)))
        logits = model.forward(test_set.tensors(idx), training=False)
        loss, _ = softmax_cross_entropy(logits, test_set.labels[idx])
        loss_sum += loss * len(idx)
        predictions[idx] = logits.argmax(axis=1)
    confusion = confusion_matrix(test_set.labels, predictions)
    accuracy = float(np.trace(confusion) / confusion.sum())
    return accuracy, loss_sum / len(test_set), confusion


def run_round(state: ServerState, clients: list, test_set: Dataset, model: ModelSpec,
              workers: int | None = None) -> ServerState:
    """Broadcast, train every client, aggregate, evaluate; returns the next state.

    ``clients`` are objects with ``client_id`` and ``fit(weights, round)``:
    in-process :class:`Client` instances or network proxies. With
    ``workers > 1`` clients train concurrently; each then needs its own
    model instance. Updates are always combined in client_id order.
    """
    started = time.perf_counter()
    round_index = state.round
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            updates = list(pool.map(lambda c: c.fit(state.global_weights, round_index), clients))
    else:
        updates = [c.fit(state.global_weights, round_index) for c in clients]
    new_weights = fedavg_aggregate(updates)
    accuracy, loss, confusion = evaluate(model, new_weights, test_set)
    report = RoundReport(round_index + 1, accuracy, loss, confusion, time.perf_counter() - started)
    log.info("round %d: accuracy %.4f loss %.4f (%.1fs)", report.round, accuracy, loss, report.wall_time)
    return ServerState(round_index + 1, new_weights, state.config, state.history + [report])
