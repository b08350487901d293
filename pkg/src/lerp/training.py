"""Loss, optimizers, the epoch loop and early stopping."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .data import EhrRecord, make_batch
from .exceptions import (
    ConfigurationError,
    DataError,
    DimensionError,
    NumericalError,
    UndefinedMetricError,
)
from .metrics import roc_auc
from .model import Network, read_container

logger = logging.getLogger(__name__)

LOG_EPS = 1e-12
EMBEDDING = "embedding"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 0:
            raise ConfigurationError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"optimizer must be one of {sorted(OPTIMIZERS)}, got {self.optimizer!r}")


# --------------------------------------------------------------------------
# loss


def bce_loss(y_hat: Node, y) -> Node:
    """Mean binary cross-entropy over the labels of one record.

    Logs are clamped at ``LOG_EPS`` so saturated probabilities stay finite.
    """
    y = np.asarray(y, dtype=np.float64)
    p = y_hat.value
    if p.shape != y.shape:
        raise DimensionError(f"bce_loss: {p.shape} predictions for {y.shape} targets")
    n = y.size
    pc = np.clip(p, LOG_EPS, 1.0 - LOG_EPS)
    value = -np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    inside = (p > LOG_EPS) & (p < 1.0 - LOG_EPS)

    def _back(g):
        return (g * inside * (pc - y) / (n * pc * (1.0 - pc)),)

    return ad.custom_op(np.array(value), (y_hat,), _back)


def mean_of(nodes: Sequence[Node]) -> Node:
    acc = nodes[0]
    for node in nodes[1:]:
        acc = ad.add(acc, node)
    return ad.scale(acc, 1.0 / len(nodes))


# --------------------------------------------------------------------------
# optimizers


class SGD:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: dict, grads: dict) -> None:
        for name, g in grads.items():
            params[name] -= self.learning_rate * g

    def state(self) -> tuple[dict, dict]:
        return {}, {}

    def load_state(self, meta: dict, tensors: dict) -> None:
        pass


class Adam:
    def __init__(self, learning_rate: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> tuple[dict, dict]:
        tensors = {f"adam.m/{k}": v for k, v in sorted(self.m.items())}
        tensors.update({f"adam.v/{k}": v for k, v in sorted(self.v.items())})
        return {"t": self.t}, tensors

    def load_state(self, meta: dict, tensors: dict) -> None:
        self.t = int(meta["t"])
        self.m = {k[len("adam.m/"):]: v.copy() for k, v in tensors.items() if k.startswith("adam.m/")}
        self.v = {k[len("adam.v/"):]: v.copy() for k, v in tensors.items() if k.startswith("adam.v/")}


OPTIMIZERS = {"sgd": SGD, "adam": Adam}


# --------------------------------------------------------------------------
# training state


@dataclass
class TrainState:
    network: Network
    optimizer: object
    rng: np.random.Generator
    epoch: int = 0
    best_val_loss: float = float("inf")
    best_epoch: int = 0
    best_params: Optional[dict] = None
    best_table: Optional[np.ndarray] = None
    stale_epochs: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def start(cls, network: Network, config: TrainConfig) -> "TrainState":
        return cls(
            network=network,
            optimizer=OPTIMIZERS[config.optimizer](config.learning_rate),
            rng=np.random.default_rng(config.seed),
        )

    def trainable(self) -> dict:
        """Name -> array of everything the optimizer updates (arrays are shared, not copied)."""
        out = dict(self.network.params)
        if self.network.table.trainable:
            out[EMBEDDING] = self.network.table.matrix
        return out

    def save(self, path, train_config: TrainConfig) -> None:
        opt_meta, opt_tensors = self.optimizer.state()
        meta = {
            "train": {
                "config": asdict(train_config),
                "epoch": self.epoch,
                "best_val_loss": self.best_val_loss,
                "best_epoch": self.best_epoch,
                "stale_epochs": self.stale_epochs,
                "rng": self.rng.bit_generator.state,
                "optimizer": opt_meta,
                "history": self.history,
            }
        }
        tensors = dict(opt_tensors)
        if self.best_params is not None:
            tensors.update({f"best/{k}": v for k, v in sorted(self.best_params.items())})
            tensors["best_embedding"] = self.best_table
        self.network.save(path, extra_meta=meta, extra_tensors=tensors)

    @classmethod
    def load(cls, path) -> tuple["TrainState", TrainConfig]:
        meta, tensors = read_container(path)
        network = Network.from_container(meta, tensors)
        train = meta["train"]
        config = TrainConfig(**train["config"])
        optimizer = OPTIMIZERS[config.optimizer](config.learning_rate)
        optimizer.load_state(train["optimizer"], tensors)
        rng = np.random.default_rng()
        rng.bit_generator.state = train["rng"]
        best = {k[len("best/"):]: v for k, v in tensors.items() if k.startswith("best/")}
        state = cls(
            network=network,
            optimizer=optimizer,
            rng=rng,
            epoch=train["epoch"],
            best_val_loss=train["best_val_loss"],
            best_epoch=train["best_epoch"],
            best_params=best or None,
            best_table=tensors.get("best_embedding"),
            stale_epochs=train["stale_epochs"],
            history=[tuple(h) for h in train["history"]],
        )
        return state, config


# --------------------------------------------------------------------------
# loops


def batch_loss_and_grads(network: Network, records: Sequence[EhrRecord]) -> tuple[float, dict]:
    """Mean loss over ``records`` and its gradient for every trainable tensor."""
    encoded = [network.encode(r) for r in records]
    batch = make_batch(encoded, network.max_note_len)
    with Tape() as tape:
        params = {k: tape.variable(v, name=k) for k, v in network.params.items()}
        if network.table.trainable:
            table = tape.variable(network.table.matrix, name=EMBEDDING)
        else:
            table = ad.constant(network.table.matrix)
        losses = []
        for i in range(len(batch)):
            out = network.run(
                batch.tokens[i], batch.events[i], batch.mask[i], batch.ids[i], params=params, table=table
            )
            losses.append(bce_loss(out.y_hat, batch.labels[i]))
        loss = mean_of(losses)
    ad.backward(tape, loss)
    grads = {k: node.grad for k, node in params.items()}
    if network.table.trainable:
        grads[EMBEDDING] = table.grad
    return float(loss.value), grads


def evaluate(network: Network, records: Sequence[EhrRecord]) -> tuple[float, Optional[float], np.ndarray]:
    """Mean loss, micro ROC AUC (``None`` if undefined) and the score matrix."""
    if not records:
        raise DataError("cannot evaluate on zero records")
    scores, _, _ = network.predict(records)
    targets = np.array([r.labels for r in records], dtype=np.float64)
    losses = [float(bce_loss(ad.constant(s), t).value) for s, t in zip(scores, targets)]
    try:
        auc = roc_auc(scores, targets)
    except UndefinedMetricError:
        auc = None
    return float(np.mean(losses)), auc, scores


def train_epoch(state: TrainState, records: Sequence[EhrRecord], config: TrainConfig) -> float:
    """One pass over ``records`` in a seeded shuffled order; returns the mean batch loss."""
    if not records:
        raise DataError("cannot train on zero records")
    order = state.rng.permutation(len(records))
    params = state.trainable()
    losses = []
    for start in range(0, len(order), config.batch_size):
        chunk = [records[i] for i in order[start : start + config.batch_size]]
        loss, grads = batch_loss_and_grads(state.network, chunk)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            ids = ", ".join(r.id for r in chunk)
            raise NumericalError(
                f"non-finite loss or gradient in epoch {state.epoch + 1}, batch at {start} (records {ids})"
            )
        state.optimizer.step(params, grads)
        losses.append(loss)
    state.network.table.matrix[0] = 0.0
    state.epoch += 1
    return float(np.mean(losses))


@dataclass
class FitResult:
    network: Network  # parameters from the best validation epoch
    best_epoch: int
    best_val_loss: float
    epochs_run: int
    history: list  # (epoch, train_loss, val_loss, val_micro_auc)


def fit(
    config: TrainConfig,
    network: Network,
    train_records: Sequence[EhrRecord],
    val_records: Sequence[EhrRecord],
    state: Optional[TrainState] = None,
    on_epoch: Optional[Callable[[TrainState], None]] = None,
) -> FitResult:
    """Train until validation loss stops improving for ``patience`` epochs.

    Returns a copy of ``network`` holding the weights of the epoch with the
    lowest validation loss, or the initial weights when no epoch ran. Pass a
    ``state`` loaded from a checkpoint to resume.
    """
    if not val_records:
        raise DataError("validation set is empty")
    if state is None:
        state = TrainState.start(network, config)
    if state.best_params is None:
        # returned only if no epoch runs
        state.best_params = copy.deepcopy(state.network.params)
        state.best_table = state.network.table.matrix.copy()
    while state.epoch < config.max_epochs and state.stale_epochs < config.patience:
        train_loss = train_epoch(state, train_records, config)
        val_loss, val_auc, _ = evaluate(state.network, val_records)
        state.history.append((state.epoch, train_loss, val_loss, val_auc))
        logger.info("epoch %d train %.6f val %.6f auc %s", state.epoch, train_loss, val_loss, val_auc)
        if val_loss < state.best_val_loss:
            state.best_val_loss = val_loss
            state.best_epoch = state.epoch
            state.best_params = copy.deepcopy(state.network.params)
            state.best_table = state.network.table.matrix.copy()
            state.stale_epochs = 0
        else:
            state.stale_epochs += 1
        if on_epoch is not None:
            on_epoch(state)
    net = state.network
    best = Network(
        config=net.config,
        params=copy.deepcopy(state.best_params),
        table=type(net.table)(state.best_table.copy(), trainable=net.table.trainable),
        vocab=net.vocab,
        label_names=net.label_names,
        max_note_len=net.max_note_len,
    )
    return FitResult(best, state.best_epoch, state.best_val_loss, state.epoch, list(state.history))


def format_log(history: Sequence[tuple]) -> str:
    lines = ["epoch, train_loss, val_loss, val_micro_auc"]
    for epoch, train_loss, val_loss, auc in history:
        auc_text = "nan" if auc is None else f"{auc:.6f}"
        lines.append(f"{epoch}, {train_loss:.6f}, {val_loss:.6f}, {auc_text}")
    return "\n".join(lines) + "\n"
