"""Cross-attention forward graph and its two ablations.

Variants
--------
``lerp``
    Note words are scored against clinical events (event-guided branch) and
    against risk-label names (label-dependent branch). Each branch yields an
    attention distribution over words and a weighted note vector; both
    vectors feed a fusion head.
``lerp-minus``
    Label-dependent branch only. Its note vector is fed to the head twice.
``ts``
    Self-attention baseline: words are scored by their mean scaled-dot
    similarity to the other words of the note.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .data import DEFAULT_MAX_NOTE_LEN, EhrRecord, EncodedRecord, LabelCatalog, encode
from .embedding import EmbeddingTable, Vocab, embed_entities, embed_note
from .exceptions import ConfigurationError, DataError, DimensionError, ParseError


class Variant(str, enum.Enum):
    LERP = "lerp"
    LERP_MINUS = "lerp-minus"
    TS = "ts"


@dataclass(frozen=True)
class ModelConfig:
    n_labels: int
    variant: Variant = Variant.LERP
    embedding_dim: int = 64
    projection_dim: int = 32
    conv_width: int = 3
    pool_width: int = 2
    hidden_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.n_labels < 1:
            raise ConfigurationError(f"n_labels must be >= 1, got {self.n_labels}")
        for name in ("embedding_dim", "projection_dim", "hidden_dim", "pool_width", "conv_width"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.conv_width % 2 == 0:
            raise ConfigurationError(f"conv_width must be odd, got {self.conv_width}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape of every learnable tensor of the configured variant."""
    D, F, H, Y, k = (
        config.embedding_dim,
        config.projection_dim,
        config.hidden_dim,
        config.n_labels,
        config.conv_width,
    )
    shapes = {"proj.W": (F, D), "proj.b": (F,)}
    if config.variant is Variant.LERP:
        # one filter shared by all event channels: events vary in number
        shapes["event_conv.W"] = (1, 1, k)
        shapes["event_conv.b"] = (1,)
    if config.variant in (Variant.LERP, Variant.LERP_MINUS):
        shapes["label_conv.W"] = (Y, Y, k)
        shapes["label_conv.b"] = (Y,)
    shapes.update(
        {
            "fuse.W": (H, 2 * D),
            "fuse.b": (H,),
            "mid.W": (F, H),
            "mid.b": (F,),
            "out.W": (Y, F),
            "out.b": (Y,),
        }
    )
    return shapes


def init_params(config: ModelConfig, rng: Optional[np.random.Generator] = None) -> dict[str, np.ndarray]:
    """He-normal weights (std sqrt(2 / fan_in)) and zero biases."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return params


@dataclass
class ForwardOutput:
    y_hat: Node
    alpha_E: Node
    alpha_Y: Node


# --------------------------------------------------------------------------
# building blocks


def _linear_columns(x: Node, W: Node, b: Node) -> Node:
    return ad.add_bias(ad.matmul(W, x), b)


def _linear(x: Node, W: Node, b: Node) -> Node:
    col = ad.reshape(x, (x.shape[0], 1))
    return ad.reshape(_linear_columns(col, W, b), (W.shape[0],))


def scaled_dot_similarity(Em: Node, Ex: Node, params: Mapping[str, Node]) -> Node:
    """N_M x N_X matrix of projected inner products divided by sqrt(F)."""
    W, b = params["proj.W"], params["proj.b"]
    if Em.shape[0] != W.shape[1] or Ex.shape[0] != W.shape[1]:
        raise DimensionError(
            f"scaled_dot_similarity: inputs {Em.shape} and {Ex.shape} do not match projection {W.shape}"
        )
    pm = _linear_columns(Em, W, b)
    px = _linear_columns(Ex, W, b)
    return ad.scale(ad.matmul(ad.transpose(pm), px), 1.0 / np.sqrt(W.shape[0]))


def attention_score(
    G: Node, kernel: Node, bias: Node, pool_width: int, mask: Optional[np.ndarray] = None
) -> Node:
    """Length-N_M word scores from an N_M x N_X similarity matrix.

    Entities are channels and words the length axis: same-padded conv,
    ReLU, max over channels, then a same-padded max of width ``pool_width``
    along the words. Masked (padding) words are zeroed before the conv and
    after the ReLU so they never influence real words.
    """
    n_words, n_ent = G.shape
    if n_ent < 1:
        raise DimensionError("attention_score: no entities to attend with")
    n_real = n_words if mask is None else int(np.sum(mask))
    if pool_width > n_real:
        raise ConfigurationError(f"pool width {pool_width} exceeds note length {n_real}")
    x = ad.transpose(G)
    if mask is not None:
        keep = ad.constant(np.broadcast_to(np.asarray(mask, dtype=np.float64), (n_ent, n_words)))
        x = ad.mul(x, keep)
    h = ad.relu(ad.conv1d(x, kernel, bias))
    if mask is not None:
        h = ad.mul(h, keep)
    h = ad.maxpool_axis(h, axis=0, window=n_ent, stride=n_ent)
    h = ad.maxpool_axis(h, axis=1, window=pool_width, stride=1, same=True)
    return ad.reshape(h, (n_words,))


def weighted_pool(Em: Node, u: Node, mask: Optional[np.ndarray] = None) -> tuple[Node, Node]:
    """Softmax the scores over real words and average the note columns."""
    if mask is not None and not np.any(mask):
        raise DataError("weighted_pool: every position is padding")
    alpha = ad.softmax(u, mask=mask)
    z = ad.matmul(Em, ad.reshape(alpha, (alpha.shape[0], 1)))
    return alpha, ad.reshape(z, (Em.shape[0],))


def fusion_head(zE: Node, zY: Node, params: Mapping[str, Node]) -> Node:
    """Label probabilities from the two note vectors (three stacked affine maps, then sigmoid)."""
    if zE.shape != zY.shape or zE.value.ndim != 1:
        raise DimensionError(f"fusion_head: note vectors have shapes {zE.shape} and {zY.shape}")
    h = _linear(ad.concat(zE, zY), params["fuse.W"], params["fuse.b"])
    h = _linear(h, params["mid.W"], params["mid.b"])
    return ad.sigmoid(_linear(h, params["out.W"], params["out.b"]))


def self_attention_score(Em: Node, params: Mapping[str, Node], mask: Optional[np.ndarray] = None) -> Node:
    """Mean scaled-dot similarity of each word to the real words of the note."""
    n_words = Em.shape[1]
    G = scaled_dot_similarity(Em, Em, params)
    w = np.ones(n_words) if mask is None else np.asarray(mask, dtype=np.float64)
    col = ad.constant((w / w.sum()).reshape(n_words, 1))
    return ad.reshape(ad.matmul(G, col), (n_words,))


# --------------------------------------------------------------------------
# full graph


def forward(
    config: ModelConfig,
    params: Mapping[str, Node],
    table: Node,
    tokens: Sequence[int],
    events: Sequence[Sequence[int]],
    label_entities: Sequence[Sequence[int]],
    mask: Optional[np.ndarray] = None,
    record_id: Optional[str] = None,
) -> ForwardOutput:
    """Run one record through the configured variant.

    ``params`` and ``table`` are nodes; pass variables to get gradients.
    ``mask`` marks real (non-padding) note positions; ``None`` means all.
    """
    Em = embed_note(table, tokens, record_id)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (len(tokens),):
            raise DimensionError(f"mask shape {mask.shape} does not match {len(tokens)} tokens")
        if not mask.any():
            raise DataError(f"record {record_id!r}: note is all padding")
    variant = config.variant

    if variant is Variant.TS:
        u = self_attention_score(Em, params, mask)
        alpha, z = weighted_pool(Em, u, mask)
        return ForwardOutput(fusion_head(z, z, params), alpha, alpha)

    if len(label_entities) != config.n_labels:
        raise DimensionError(f"{len(label_entities)} label names for a {config.n_labels}-label model")
    EY = embed_entities(table, label_entities, record_id)
    GY = scaled_dot_similarity(Em, EY, params)
    uY = attention_score(GY, params["label_conv.W"], params["label_conv.b"], config.pool_width, mask)
    alpha_Y, zY = weighted_pool(Em, uY, mask)

    if variant is Variant.LERP_MINUS:
        return ForwardOutput(fusion_head(zY, zY, params), alpha_Y, alpha_Y)

    if not events:
        raise DataError(f"record {record_id!r} has no clinical events")
    EE = embed_entities(table, events, record_id)
    GE = scaled_dot_similarity(Em, EE, params)
    n_events = EE.shape[1]
    kernel = ad.diag_kernel(params["event_conv.W"], n_events)
    bias = ad.tile(params["event_conv.b"], n_events)
    uE = attention_score(GE, kernel, bias, config.pool_width, mask)
    alpha_E, zE = weighted_pool(Em, uE, mask)
    return ForwardOutput(fusion_head(zE, zY, params), alpha_E, alpha_Y)


# --------------------------------------------------------------------------
# checkpoint container

_MAGIC = b"LERPCKPT\x01\n"


def write_container(path, meta: dict, tensors: Mapping[str, np.ndarray]) -> None:
    """Binary file: magic, header length, JSON header, raw float64 data.

    The header lists each tensor's name, shape and byte offset. Output is a
    pure function of the inputs, so identical inputs give identical bytes.
    """
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ParseError(f"{path}: not a checkpoint file")
    pos = len(_MAGIC)
    (hlen,) = struct.unpack("<Q", raw[pos : pos + 8])
    pos += 8
    try:
        header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ParseError(f"{path}: corrupt checkpoint header") from None
    base = pos + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + entry["offset"]
        if start + 8 * count > len(raw):
            raise ParseError(f"{path}: truncated tensor {entry['name']!r}")
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=start).reshape(shape).astype(np.float64)
    return header["meta"], tensors


# --------------------------------------------------------------------------
# trained-model bundle


@dataclass
class Network:
    """Everything needed to score raw records: weights, vocabulary, labels."""

    config: ModelConfig
    params: dict
    table: EmbeddingTable
    vocab: Vocab
    label_names: tuple
    max_note_len: int = DEFAULT_MAX_NOTE_LEN

    def __post_init__(self):
        expected = param_shapes(self.config)
        if set(expected) != set(self.params):
            raise ConfigurationError(
                f"parameters {sorted(self.params)} do not match variant {self.config.variant.value!r}"
            )
        for name, shape in expected.items():
            if tuple(self.params[name].shape) != shape:
                raise DimensionError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")
        if self.table.dim != self.config.embedding_dim:
            raise DimensionError(
                f"embedding table has D={self.table.dim}, model expects {self.config.embedding_dim}"
            )
        if len(self.label_names) != self.config.n_labels:
            raise DimensionError(f"{len(self.label_names)} label names for {self.config.n_labels} labels")
        if len(self.table) != len(self.vocab):
            raise DimensionError(f"table has {len(self.table)} rows for a vocabulary of {len(self.vocab)}")
        self.label_entities = [self.vocab.ids(t) for t in LabelCatalog(tuple(self.label_names)).tokens]

    def encode(self, record: EhrRecord) -> EncodedRecord:
        if len(record.labels) != self.config.n_labels:
            raise ConfigurationError(
                f"record {record.id!r} has {len(record.labels)} labels, model predicts {self.config.n_labels}"
            )
        return encode(record, self.vocab, self.max_note_len)

    def run(self, tokens, events, mask=None, record_id=None, params=None, table=None) -> ForwardOutput:
        """Forward one record; ``params``/``table`` default to constant nodes."""
        if params is None:
            params = {k: ad.constant(v) for k, v in self.params.items()}
        if table is None:
            table = ad.Node(self.table.matrix)
        return forward(self.config, params, table, tokens, events, self.label_entities, mask, record_id)

    def predict(self, records: Sequence[EhrRecord]) -> tuple[np.ndarray, list, list]:
        """Scores (R x N_Y) and the two attention vectors of every record."""
        params = {k: ad.constant(v) for k, v in self.params.items()}
        table = ad.Node(self.table.matrix)
        scores = np.zeros((len(records), self.config.n_labels))
        alpha_E, alpha_Y = [], []
        for i, rec in enumerate(records):
            enc = self.encode(rec)
            out = self.run(enc.note, enc.events, record_id=enc.id, params=params, table=table)
            scores[i] = out.y_hat.value
            alpha_E.append(out.alpha_E.value)
            alpha_Y.append(out.alpha_Y.value)
        return scores, alpha_E, alpha_Y

    def meta(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "vocab": self.vocab.tokens,
            "label_names": list(self.label_names),
            "max_note_len": self.max_note_len,
            "embedding_trainable": self.table.trainable,
        }

    def tensors(self) -> dict:
        out = {"embedding": self.table.matrix}
        out.update({f"param/{k}": v for k, v in sorted(self.params.items())})
        return out

    def save(self, path, extra_meta: Optional[dict] = None, extra_tensors: Optional[Mapping] = None) -> None:
        meta = {"network": self.meta()}
        if extra_meta:
            meta.update(extra_meta)
        tensors = self.tensors()
        if extra_tensors:
            tensors.update(extra_tensors)
        write_container(path, meta, tensors)

    @classmethod
    def from_container(cls, meta: dict, tensors: Mapping[str, np.ndarray]) -> "Network":
        try:
            net = meta["network"]
            config = ModelConfig(**net["config"])
            params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
            return cls(
                config=config,
                params=params,
                table=EmbeddingTable(tensors["embedding"], trainable=net["embedding_trainable"]),
                vocab=Vocab.from_tokens(net["vocab"]),
                label_names=tuple(net["label_names"]),
                max_note_len=net["max_note_len"],
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"checkpoint is missing field {exc}") from None

    @classmethod
    def load(cls, path) -> "Network":
        return cls.from_container(*read_container(path))


def build_network(
    config: ModelConfig,
    records: Sequence[EhrRecord],
    catalog: LabelCatalog,
    pretrained: Optional[tuple[Vocab, EmbeddingTable]] = None,
    trainable_embeddings: bool = True,
    max_note_len: int = DEFAULT_MAX_NOTE_LEN,
) -> Network:
    """Fresh network whose vocabulary covers ``records`` and ``catalog``.

    With ``pretrained`` the vocabulary and vectors come from that table and
    unseen tokens map to the unknown id.
    """
    if len(catalog) != config.n_labels:
        raise ConfigurationError(f"catalog has {len(catalog)} labels, model config says {config.n_labels}")
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    params = init_params(config, np.random.default_rng(seeds[0]))
    if pretrained is not None:
        vocab, table = pretrained
        table = EmbeddingTable(table.matrix.copy(), trainable=trainable_embeddings)
    else:
        vocab = Vocab()
        for rec in records:
            for tok in rec.note[:max_note_len]:
                vocab.add(tok)
            for ev in rec.events:
                for tok in ev:
                    vocab.add(tok)
        for name in catalog.tokens:
            for tok in name:
                vocab.add(tok)
        table = EmbeddingTable.random(len(vocab), config.embedding_dim, np.random.default_rng(seeds[1]))
        table.trainable = trainable_embeddings
    return Network(config, params, table, vocab, tuple(catalog.names), max_note_len)
