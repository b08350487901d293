"""Token vocabulary and static embedding tables.

The encoder here is a plain lookup table: either trainable (Gaussian init)
or frozen vectors read from a word-vector text file.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .autodiff import Node, entity_mean, gather_columns
from .exceptions import ConfigurationError, DataError, ParseError

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class Vocab:
    """Bijection between token strings and integer ids.

    Ids 0 and 1 are reserved for padding and unknown tokens.
    """

    def __init__(self, tokens: Iterable[str] = ()):
        self._itos: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self._stoi: dict[str, int] = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self._stoi.get(token)
        if idx is None:
            idx = len(self._itos)
            self._stoi[token] = idx
            self._itos.append(token)
        return idx

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def id(self, token: str) -> int:
        return self._stoi.get(token, UNK_ID)

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self._stoi.get(t, UNK_ID) for t in tokens]

    def token(self, idx: int) -> str:
        return self._itos[idx]

    @property
    def tokens(self) -> list[str]:
        """All tokens in id order, reserved ones included."""
        return list(self._itos)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocab":
        """Rebuild from an id-ordered token list as returned by :attr:`tokens`."""
        if list(tokens[:2]) != [PAD_TOKEN, UNK_TOKEN]:
            raise DataError("vocabulary must start with the reserved padding and unknown tokens")
        vocab = cls(tokens[2:])
        if len(vocab) != len(tokens):
            raise DataError("vocabulary token list contains duplicates")
        return vocab

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._itos == other._itos


class EmbeddingTable:
    """A |V| x D matrix of token vectors; row 0 (padding) stays zero."""

    def __init__(self, matrix: np.ndarray, trainable: bool = True):
        matrix = np.array(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] < 1:
            raise ConfigurationError(f"embedding matrix must be |V| x D with D > 0, got {matrix.shape}")
        if matrix.shape[0] < 2:
            raise ConfigurationError("embedding matrix needs at least the two reserved rows")
        matrix[PAD_ID] = 0.0
        self.matrix = matrix
        self.trainable = trainable

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def random(cls, n_tokens: int, dim: int, rng: np.random.Generator) -> "EmbeddingTable":
        """Gaussian table with std 1/sqrt(dim)."""
        if dim < 1:
            raise ConfigurationError(f"embedding dimension must be positive, got {dim}")
        return cls(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(n_tokens, dim)), trainable=True)


def _check_ids(table_size: int, ids: np.ndarray, record_id: Optional[str]) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= table_size):
        where = f" in record {record_id!r}" if record_id is not None else ""
        raise DataError(f"token id out of range [0, {table_size}){where}")


def embed_note(table: Node, tokens: Sequence[int], record_id: Optional[str] = None) -> Node:
    """D x N_M matrix whose column n is the table row of ``tokens[n]``.

    ``table`` is the table as a node (a variable when trainable, otherwise a
    constant) so that gradients can reach it.
    """
    ids = np.asarray(tokens, dtype=np.int64)
    _check_ids(table.shape[0], ids, record_id)
    return gather_columns(table, ids)


def embed_entities(
    table: Node, entities: Sequence[Sequence[int]], record_id: Optional[str] = None
) -> Node:
    """D x N matrix of entity vectors, each the mean of its tokens' rows.

    Padding ids inside an entity are dropped before averaging.
    """
    cleaned = []
    for i, ent in enumerate(entities):
        ids = np.asarray([t for t in ent if t != PAD_ID], dtype=np.int64)
        if ids.size == 0:
            where = f" of record {record_id!r}" if record_id is not None else ""
            raise DataError(f"entity {i}{where} has no tokens")
        _check_ids(table.shape[0], ids, record_id)
        cleaned.append(ids)
    if not cleaned:
        raise DataError("no entities to embed")
    return entity_mean(table, cleaned)


def load_pretrained(path) -> tuple[Vocab, EmbeddingTable]:
    """Read a word-vector text file into a frozen table.

    The first line is ``<count> <D>``; each following line is a token and D
    floats. Reserved rows are prepended: padding is zero, unknown is the mean
    of all file vectors.
    """
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            raise ParseError(f"{path}:1: empty file, expected '<count> <D>' header")
        parts = header.split()
        try:
            count, dim = int(parts[0]), int(parts[1])
            if len(parts) != 2 or count < 0 or dim < 1:
                raise ValueError
        except (ValueError, IndexError):
            raise ParseError(f"{path}:1: malformed header {header.strip()!r}") from None
        vocab = Vocab()
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split(" ")
            fields = [f for f in fields if f]
            token, values = fields[0], fields[1:]
            if len(values) != dim:
                raise ParseError(f"{path}:{lineno}: expected {dim} values for {token!r}, got {len(values)}")
            if token in vocab:
                raise ParseError(f"{path}:{lineno}: duplicate token {token!r}")
            try:
                rows.append([float(v) for v in values])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value for {token!r}") from None
            vocab.add(token)
    if len(rows) != count:
        raise ParseError(f"{path}: header announces {count} vectors, found {len(rows)}")
    if not rows:
        raise ParseError(f"{path}: no vectors")
    vectors = np.array(rows, dtype=np.float64)
    matrix = np.vstack([np.zeros((1, dim)), vectors.mean(axis=0, keepdims=True), vectors])
    return vocab, EmbeddingTable(matrix, trainable=False)


def save_text(path, vocab: Vocab, table: EmbeddingTable) -> None:
    """Write the non-reserved rows in the format :func:`load_pretrained` reads.

    Floats are written with ``repr`` so a save/load round trip is exact.
    """
    tokens = vocab.tokens
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"{len(tokens) - 2} {table.dim}\n")
        for idx in range(2, len(tokens)):
            fh.write(tokens[idx] + " " + " ".join(repr(float(v)) for v in table.matrix[idx]) + "\n")
