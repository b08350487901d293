"""scikit-learn style estimator around the training loop."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import EhrRecord, LabelCatalog, make_record, split
from .embedding import load_pretrained
from .exceptions import ConfigurationError, DataError
from .explain import AttentionReport, explain
from .metrics import PredictionSet, report, roc_auc
from .model import ModelConfig, Network, build_network
from .training import FitResult, TrainConfig, fit


def check_records(X, n_labels: Optional[int] = None) -> list[EhrRecord]:
    """Coerce ``X`` to a list of records.

    Items may be :class:`EhrRecord` or mappings with ``note`` and ``events``
    (plus optional ``id`` and ``labels``). Missing labels become all zeros.
    """
    if isinstance(X, (str, bytes)) or not hasattr(X, "__iter__"):
        raise DataError("X must be a sequence of records")
    out = []
    for i, item in enumerate(X):
        if isinstance(item, EhrRecord):
            out.append(item)
            continue
        try:
            labels = item.get("labels")
            if labels is None:
                if n_labels is None:
                    raise DataError(f"record {i} has no labels")
                labels = [0] * n_labels
            out.append(make_record(item.get("id", str(i)), item["note"], item.get("events", ()), labels, n_labels))
        except (AttributeError, KeyError, TypeError):
            raise DataError(f"item {i} is not a record or a mapping with 'note' and 'events'") from None
    return out


def _with_labels(records: Sequence[EhrRecord], y: np.ndarray) -> list[EhrRecord]:
    return [EhrRecord(r.id, r.note, r.events, tuple(int(v) for v in row)) for r, row in zip(records, y)]


class LERPClassifier(ClassifierMixin, BaseEstimator):
    """Multi-label risk classifier over notes, events and label names.

    Parameters mirror the model and training configuration. ``label_names``
    gives the text of each risk label; the label-dependent branch attends
    with it, so it should be meaningful. When omitted, generic names are used.

    ``fit`` holds out ``validation_fraction`` of the records for early
    stopping unless ``X_val`` is given.
    """

    def __init__(
        self,
        label_names: Optional[Sequence[str]] = None,
        variant: str = "lerp",
        embedding_dim: int = 64,
        projection_dim: int = 32,
        conv_width: int = 3,
        pool_width: int = 2,
        hidden_dim: int = 64,
        learning_rate: float = 1e-3,
        batch_size: int = 16,
        max_epochs: int = 100,
        patience: int = 5,
        optimizer: str = "adam",
        max_note_len: int = 256,
        validation_fraction: float = 0.2,
        embeddings: Optional[str] = None,
        trainable_embeddings: Optional[bool] = None,
        threshold: float = 0.5,
        random_state: int = 0,
    ):
        self.label_names = label_names
        self.variant = variant
        self.embedding_dim = embedding_dim
        self.projection_dim = projection_dim
        self.conv_width = conv_width
        self.pool_width = pool_width
        self.hidden_dim = hidden_dim
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.optimizer = optimizer
        self.max_note_len = max_note_len
        self.validation_fraction = validation_fraction
        self.embeddings = embeddings
        self.trainable_embeddings = trainable_embeddings
        self.threshold = threshold
        self.random_state = random_state

    def _configs(self, n_labels: int, embedding_dim: int) -> tuple[ModelConfig, TrainConfig]:
        model = ModelConfig(
            n_labels=n_labels,
            variant=self.variant,
            embedding_dim=embedding_dim,
            projection_dim=self.projection_dim,
            conv_width=self.conv_width,
            pool_width=self.pool_width,
            hidden_dim=self.hidden_dim,
            seed=self.random_state,
        )
        train = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.random_state,
            optimizer=self.optimizer,
        )
        return model, train

    def fit(self, X, y=None, X_val=None, y_val=None):
        records = check_records(X)
        if not records:
            raise DataError("cannot fit on zero records")
        if y is not None:
            y = check_array(y, dtype=np.int64, ensure_2d=True)
            if y.shape[0] != len(records):
                raise DataError(f"{len(records)} records but {y.shape[0]} label rows")
            records = _with_labels(records, y)
        n_labels = len(records[0].labels)
        names = tuple(self.label_names) if self.label_names is not None else tuple(f"label {j}" for j in range(n_labels))
        catalog = LabelCatalog(names)
        if len(catalog) != n_labels:
            raise ConfigurationError(f"{len(catalog)} label names for {n_labels} labels")
        for r in records:
            if len(r.labels) != n_labels:
                raise DataError(f"record {r.id!r} has {len(r.labels)} labels, expected {n_labels}")

        if X_val is not None:
            train, val = records, check_records(X_val, n_labels)
            if y_val is not None:
                val = _with_labels(val, check_array(y_val, dtype=np.int64))
        else:
            train, val = split(records, 1.0 - self.validation_fraction, seed=self.random_state)

        pretrained = load_pretrained(self.embeddings) if self.embeddings else None
        dim = pretrained[1].dim if pretrained else self.embedding_dim
        trainable = self.trainable_embeddings
        if trainable is None:
            trainable = pretrained is None
        model_cfg, train_cfg = self._configs(n_labels, dim)
        network = build_network(
            model_cfg,
            list(train) + list(val),
            catalog,
            pretrained=pretrained,
            trainable_embeddings=trainable,
            max_note_len=self.max_note_len,
        )
        result: FitResult = fit(train_cfg, network, train, val)
        self.network_ = result.network
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_labels_ = n_labels
        self.classes_ = np.arange(n_labels)
        self.validation_records_ = list(val)
        return self

    @classmethod
    def from_network(cls, network: Network, **params) -> "LERPClassifier":
        cfg = network.config
        est = cls(
            label_names=list(network.label_names),
            variant=cfg.variant.value,
            embedding_dim=cfg.embedding_dim,
            projection_dim=cfg.projection_dim,
            conv_width=cfg.conv_width,
            pool_width=cfg.pool_width,
            hidden_dim=cfg.hidden_dim,
            max_note_len=network.max_note_len,
            random_state=cfg.seed,
            **params,
        )
        est.network_ = network
        est.n_labels_ = cfg.n_labels
        est.classes_ = np.arange(cfg.n_labels)
        return est

    @classmethod
    def load(cls, path) -> "LERPClassifier":
        return cls.from_network(Network.load(path))

    def save(self, path) -> None:
        check_is_fitted(self, "network_")
        self.network_.save(path)

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        records = check_records(X, self.n_labels_)
        if not records:
            return np.zeros((0, self.n_labels_))
        scores, _, _ = self.network_.predict(records)
        return scores

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= self.threshold).astype(np.int64)

    def score(self, X, y=None, sample_weight=None) -> float:
        """Micro-averaged ROC AUC."""
        records = check_records(X, getattr(self, "n_labels_", None))
        targets = np.array([r.labels for r in records]) if y is None else check_array(y, dtype=np.int64)
        return roc_auc(self.predict_proba(records), targets)

    def evaluate(self, X):
        """Full metrics report against the records' own labels."""
        records = check_records(X, self.n_labels_)
        targets = np.array([r.labels for r in records])
        return report(PredictionSet(self.predict_proba(records), targets, self.threshold))

    def explain(self, X) -> list[AttentionReport]:
        check_is_fitted(self, "network_")
        return explain(self.network_, check_records(X, self.n_labels_))
