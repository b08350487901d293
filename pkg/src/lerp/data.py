"""Records, tokenization, file IO, splitting, batching and synthetic data."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .embedding import PAD_ID, Vocab
from .exceptions import ConfigurationError, DataError, ParseError

_TOKEN_RE = re.compile(r"[0-9a-z]+")

DEFAULT_MAX_NOTE_LEN = 256


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class EhrRecord:
    id: str
    note: tuple[str, ...]
    events: tuple[tuple[str, ...], ...]
    labels: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "note": " ".join(self.note),
            "events": [" ".join(e) for e in self.events],
            "labels": list(self.labels),
        }


@dataclass(frozen=True)
class LabelCatalog:
    """Ordered risk-label names, shared by every record."""

    names: tuple[str, ...]
    tokens: tuple[tuple[str, ...], ...] = field(init=False)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise DataError("label names must be unique")
        toks = tuple(tuple(tokenize(n)) for n in self.names)
        for name, t in zip(self.names, toks):
            if not t:
                raise DataError(f"label name {name!r} has no tokens")
        object.__setattr__(self, "tokens", toks)

    def __len__(self) -> int:
        return len(self.names)


def make_record(id, note, events, labels, n_labels: Optional[int] = None) -> EhrRecord:
    """Validate raw fields and build a record; strings are tokenized."""
    note_tokens = tuple(tokenize(note)) if isinstance(note, str) else tuple(note)
    if not note_tokens:
        raise DataError(f"record {id!r}: note is empty after tokenization")
    ev = []
    for e in events:
        toks = tuple(tokenize(e)) if isinstance(e, str) else tuple(e)
        if not toks:
            raise DataError(f"record {id!r}: event {e!r} has no tokens")
        ev.append(toks)
    labels = tuple(int(v) for v in labels)
    if any(v not in (0, 1) for v in labels):
        raise DataError(f"record {id!r}: labels must be 0 or 1")
    if n_labels is not None and len(labels) != n_labels:
        raise DataError(f"record {id!r}: has {len(labels)} labels, catalog has {n_labels}")
    return EhrRecord(str(id), note_tokens, tuple(ev), labels)


def load_catalog(path) -> LabelCatalog:
    path = Path(path)
    try:
        names = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise ParseError(f"{path}: catalog must be a JSON array of strings")
    return LabelCatalog(tuple(names))


def save_catalog(path, catalog: LabelCatalog) -> None:
    Path(path).write_text(json.dumps(list(catalog.names)) + "\n", encoding="utf-8")


def load_dataset(path, catalog: LabelCatalog) -> list[EhrRecord]:
    """Read a JSON-lines record file, validating each line against ``catalog``."""
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = make_record(
                    obj["id"], obj["note"], obj["events"], obj["labels"], n_labels=len(catalog)
                )
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            except (KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed record ({exc!r})") from None
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            records.append(rec)
    return records


def save_dataset(path, records: Sequence[EhrRecord]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json()) + "\n")


def split(records: Sequence, fraction: float = 0.8, seed: int = 0) -> tuple[list, list]:
    """Seeded shuffle, then the first ``fraction`` goes to training."""
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError(f"split fraction must be in (0, 1), got {fraction}")
    n = len(records)
    if n < 2:
        raise DataError(f"need at least 2 records to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = min(max(int(round(fraction * n)), 1), n - 1)
    return [records[i] for i in order[:n_train]], [records[i] for i in order[n_train:]]


# --------------------------------------------------------------------------
# encoding and batching


class EncodedRecord(NamedTuple):
    id: str
    note: np.ndarray  # token ids, truncated
    events: list[list[int]]
    labels: np.ndarray


def encode(record: EhrRecord, vocab: Vocab, max_note_len: int = DEFAULT_MAX_NOTE_LEN) -> EncodedRecord:
    note = np.asarray(vocab.ids(record.note[:max_note_len]), dtype=np.int64)
    events = [vocab.ids(e) for e in record.events]
    return EncodedRecord(record.id, note, events, np.asarray(record.labels, dtype=np.float64))


@dataclass
class Batch:
    ids: list[str]
    tokens: np.ndarray  # B x N_M, PAD_ID past each note's end
    mask: np.ndarray  # B x N_M, True on real tokens
    events: list[list[list[int]]]
    labels: np.ndarray  # B x N_Y

    def __len__(self) -> int:
        return len(self.ids)


def make_batch(encoded: Sequence[EncodedRecord], max_note_len: int = DEFAULT_MAX_NOTE_LEN) -> Batch:
    """Pad notes to ``min(longest note, max_note_len)``."""
    if not encoded:
        raise DataError("cannot batch zero records")
    width = min(max(len(e.note) for e in encoded), max_note_len)
    tokens = np.full((len(encoded), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(encoded), width), dtype=bool)
    for i, e in enumerate(encoded):
        n = min(len(e.note), width)
        tokens[i, :n] = e.note[:n]
        mask[i, :n] = True
    return Batch(
        ids=[e.id for e in encoded],
        tokens=tokens,
        mask=mask,
        events=[e.events for e in encoded],
        labels=np.stack([e.labels for e in encoded]),
    )


# --------------------------------------------------------------------------
# synthetic data


class SyntheticData(NamedTuple):
    records: list[EhrRecord]
    catalog: LabelCatalog
    # per record: label index -> note positions of its trigger word
    triggers: list[dict[int, list[int]]]


def _word(i: int) -> str:
    return f"w{i:04d}"


def generate_synthetic(
    n_records: int,
    n_labels: int,
    vocab_size: int,
    signal_strength: float,
    seed: int = 0,
    event_only_labels: int = 0,
    trigger_rate: float = 0.3,
    note_length: tuple[int, int] = (20, 40),
    filler_events: tuple[int, int] = (1, 3),
) -> SyntheticData:
    """Records whose labels are planted by trigger words and trigger events.

    The word pool ``w0000 .. w{vocab_size-1}`` is partitioned: trigger words,
    trigger-event words, label-name words, then filler. For each record and
    label a coin with probability ``trigger_rate`` decides whether the label
    is triggered. A triggered label gets its trigger word inserted in the
    note and its trigger event added to the events, and is positive with
    probability ``signal_strength``; an untriggered label is negative.

    The first ``event_only_labels`` labels are planted through events alone.
    For those, every note mentions the event word regardless of the label,
    so the note by itself carries no information about them.
    """
    if n_labels < 2:
        raise ConfigurationError(f"n_labels must be >= 2, got {n_labels}")
    if vocab_size < 10 * n_labels:
        raise ConfigurationError(f"vocab_size must be >= 10 * n_labels = {10 * n_labels}, got {vocab_size}")
    if n_records < 0:
        raise ConfigurationError(f"n_records must be >= 0, got {n_records}")
    if not 0.0 <= signal_strength <= 1.0:
        raise ConfigurationError(f"signal_strength must be in [0, 1], got {signal_strength}")
    if not 0 <= event_only_labels <= n_labels:
        raise ConfigurationError(f"event_only_labels must be in [0, {n_labels}], got {event_only_labels}")
    if not 0.0 < trigger_rate < 1.0:
        raise ConfigurationError(f"trigger_rate must be in (0, 1), got {trigger_rate}")
    lo, hi = note_length
    if not 1 <= lo <= hi:
        raise ConfigurationError(f"bad note_length range {note_length}")

    rng = np.random.default_rng(seed)
    trigger_words = [_word(j) for j in range(n_labels)]
    event_words = [_word(n_labels + j) for j in range(n_labels)]
    catalog = LabelCatalog(tuple(_word(2 * n_labels + j) for j in range(n_labels)))
    filler = [_word(i) for i in range(3 * n_labels, vocab_size)]
    width = len(str(max(n_records - 1, 0)))

    records, triggers = [], []
    for r in range(n_records):
        note = [filler[i] for i in rng.integers(0, len(filler), size=rng.integers(lo, hi + 1))]
        events = [
            (filler[a], filler[b])
            for a, b in rng.integers(0, len(filler), size=(rng.integers(filler_events[0], filler_events[1] + 1), 2))
        ]
        labels = []
        planted = []
        for j in range(n_labels):
            hit = rng.random() < trigger_rate
            positive = hit and rng.random() < signal_strength
            labels.append(int(positive))
            if j < event_only_labels:
                planted.append(event_words[j])
            elif hit:
                planted.append(trigger_words[j])
            if hit:
                events.append((event_words[j],))
        for word in planted:
            note.insert(int(rng.integers(0, len(note) + 1)), word)
        order = rng.permutation(len(events))
        events = [events[i] for i in order]
        positions = {
            j: [n for n, tok in enumerate(note) if tok == trigger_words[j]]
            for j in range(event_only_labels, n_labels)
            if trigger_words[j] in note
        }
        records.append(EhrRecord(f"r{r:0{width}d}", tuple(note), tuple(events), tuple(labels)))
        triggers.append(positions)
    return SyntheticData(records, catalog, triggers)
