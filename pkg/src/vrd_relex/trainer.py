"""Relation model assembly, training loop, evaluation and checkpoints."""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import struct
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import __version__
from . import numcore as nc
from .decoder import (
    MULTI,
    SINGLE,
    Prediction,
    adjacency_to_prediction,
    binary_decode,
    binary_loss,
    heads_to_prediction,
    single_head_decode,
    single_head_loss,
)
from .docmodel import Document, LabelSet
from .encoder import GcnEncoder
from .featurize import (
    Vocabulary,
    attach_label,
    box_array,
    bucketize_embed,
    edge_feature_matrix,
    embed_tokens,
    external_matrix,
    geometry_buckets,
    pair_feature_matrix,
    pooling_inputs,
)
from .labeler import LabelerParams, label_accuracy, label_loss, label_scores, mtl_loss
from .preprocess import augment_corpus, to_single_head
from .scorer import ScoreMatrix, ScorerParams, total_scores

log = logging.getLogger(__name__)

LABEL_SOURCES = ("gold", "auto", "none")
DECODERS = (SINGLE, MULTI)


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 50
    decoder: str = SINGLE
    label_source: str = "auto"
    mtl: bool = False
    mtl_weight: float = 1.0
    augment: bool = False
    augment_ratio: float = 0.2
    word_dim: int = 100
    label_dim: int = 100
    gcn_dim: int = 100
    gcn_layers: int = 2
    role_dim: int = 300
    labeler_hidden: int = 300
    geometry_dim: int = 10
    learning_rate: float = 1e-2
    pretrained_learning_rate: float = 1e-5
    leaky_slope: float = 0.1
    geometry_scale: float = 1000.0
    feature_scorer: bool = True
    signed_offsets: bool = False
    threshold: float = 0.5
    weight_decay: float = 0.0
    clip_norm: float | None = None
    external_embeddings: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.decoder not in DECODERS:
            raise ValueError(f"decoder must be one of {DECODERS}, got {self.decoder!r}")
        if self.label_source not in LABEL_SOURCES:
            raise ValueError(f"label_source must be one of {LABEL_SOURCES}, got {self.label_source!r}")
        for name in ("epochs", "word_dim", "label_dim", "gcn_dim", "gcn_layers", "role_dim", "labeler_hidden", "geometry_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.mtl_weight < 0:
            raise ValueError("mtl_weight must be >= 0")
        if not 0.0 <= self.augment_ratio < 1.0:
            raise ValueError("augment_ratio must be in [0, 1)")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")
        if self.geometry_scale <= 0:
            raise ValueError("geometry_scale must be positive")
        if self.learning_rate <= 0 or self.pretrained_learning_rate <= 0:
            raise ValueError("learning rates must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# per-document inputs
# ---------------------------------------------------------------------------


@dataclass
class DocInputs:
    doc: Document
    token_ids: np.ndarray | None
    pool: np.ndarray | None
    external: np.ndarray | None
    labels: np.ndarray
    buckets: np.ndarray
    edge_feats: np.ndarray
    pair_feats: np.ndarray
    heads: np.ndarray | None = None
    adjacency: np.ndarray | None = None


def entity_labels(doc: Document, source: str) -> np.ndarray:
    if source == "none":
        return np.zeros(len(doc), dtype=np.int64)
    attr = "gold_label" if source == "gold" else "auto_label"
    vals = [getattr(e, attr) for e in doc.entities]
    if source == "auto" and any(v is None for v in vals):
        raise ValueError(f"{doc.doc_id}: auto labels missing; run `autolabel` first or use label_source='gold'")
    return np.asarray([v or 0 for v in vals], dtype=np.int64)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass
class RelationModel:
    config: TrainConfig
    vocab: Vocabulary
    labels: LabelSet
    word_table: nc.Tensor | None
    label_table: nc.Tensor
    encoder: GcnEncoder
    scorer: ScorerParams
    labeler: LabelerParams | None = None
    external: dict | None = field(default=None, repr=False)

    @classmethod
    def init(cls, config: TrainConfig, vocab: Vocabulary, labels: LabelSet, entity_dim: int | None = None) -> "RelationModel":
        rng = np.random.default_rng(config.seed)
        if entity_dim is None:
            entity_dim = config.word_dim
            word_table = nc.Tensor(rng.normal(0.0, 0.1, (len(vocab), entity_dim)), requires_grad=True, name="word_table")
        else:
            word_table = None
        label_table = nc.Tensor(rng.normal(0.0, 0.1, (len(labels), config.label_dim)), requires_grad=True, name="label_table")
        encoder = GcnEncoder.init(
            rng, entity_dim + config.label_dim, config.gcn_dim, config.gcn_dim, config.gcn_layers, config.leaky_slope
        )
        scorer = ScorerParams.init(rng, config.gcn_dim, config.role_dim, 4 if config.signed_offsets else 2, config.leaky_slope)
        if not config.feature_scorer:
            scorer.W_F.requires_grad = scorer.b_F.requires_grad = False
            scorer.W_F.grad = scorer.b_F.grad = None
        labeler = None
        if config.mtl:
            labeler = LabelerParams.init(
                rng, entity_dim, len(labels) - 1, config.labeler_hidden, config.geometry_dim, config.leaky_slope
            )
        return cls(config, vocab, labels, word_table, label_table, encoder, scorer, labeler)

    @property
    def entity_dim(self) -> int:
        return self.encoder.layers[0].node_dim - self.config.label_dim

    def named_tensors(self) -> dict[str, nc.Tensor]:
        ts = []
        if self.word_table is not None:
            ts.append(self.word_table)
        ts.append(self.label_table)
        ts += self.encoder.tensors() + self.scorer.tensors()
        if self.labeler is not None:
            ts += self.labeler.tensors()
        return {t.name: t for t in ts}

    def trainable(self) -> list[nc.Tensor]:
        return [t for t in self.named_tensors().values() if t.requires_grad]

    def param_groups(self) -> list[nc.ParamGroup]:
        # External entity vectors are frozen inputs, so the pretrained group is
        # empty unless a future hook makes them trainable.
        return [
            nc.ParamGroup("model", self.trainable(), self.config.learning_rate),
            nc.ParamGroup("pretrained", [], self.config.pretrained_learning_rate),
        ]

    # -- inputs ------------------------------------------------------------

    def prepare(self, doc: Document, seed: int = 0) -> DocInputs:
        boxes = box_array(doc)
        if self.external is not None or self.word_table is None:
            if self.external is None:
                raise ValueError("model expects external entity vectors; attach them with `model.external = ...`")
            ids = pool = None
            ext = external_matrix(doc, self.external)
        else:
            ids, pool = pooling_inputs(doc, self.vocab)
            ext = None
        inst = to_single_head(doc, seed)
        return DocInputs(
            doc=doc,
            token_ids=ids,
            pool=pool,
            external=ext,
            labels=entity_labels(doc, self.config.label_source),
            buckets=geometry_buckets(doc),
            edge_feats=edge_feature_matrix(boxes) * self.config.geometry_scale,
            pair_feats=pair_feature_matrix(boxes, self.config.signed_offsets) * self.config.geometry_scale,
            heads=inst.head_of,
            adjacency=inst.adjacency,
        )

    # -- forward -----------------------------------------------------------

    def entity_vectors(self, x: DocInputs) -> nc.Tensor:
        if x.external is not None:
            return nc.Tensor(x.external)
        return embed_tokens(x.token_ids, x.pool, self.word_table)

    def forward(self, x: DocInputs) -> tuple[ScoreMatrix, nc.Tensor | None]:
        b = self.entity_vectors(x)
        e = attach_label(b, x.labels, self.label_table)
        encoded = self.encoder.encode(e, x.edge_feats)
        S = total_scores(encoded, x.pair_feats, self.scorer)
        logits = None
        if self.labeler is not None:
            logits = label_scores(b, bucketize_embed(x.buckets, self.labeler.geo), self.labeler)
        return S, logits

    def loss(self, x: DocInputs) -> nc.Tensor:
        S, logits = self.forward(x)
        if self.config.decoder == SINGLE:
            rel = single_head_loss(S, x.heads)
        else:
            rel = binary_loss(S, x.adjacency)
        if logits is not None:
            return mtl_loss(rel, label_loss(logits, x.doc), self.config.mtl_weight)
        return rel

    def predict(self, doc: Document) -> Prediction:
        mode = self.config.decoder
        if not doc.entities:
            return Prediction(doc.doc_id, mode)
        S, _ = self.forward(self.prepare(doc))
        if mode == SINGLE:
            return heads_to_prediction(doc, single_head_decode(S))
        return adjacency_to_prediction(doc, binary_decode(S, self.config.threshold))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    gold: int
    predicted: int
    correct: int
    label_accuracy: float | None = None
    per_doc: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def prf(correct: int, predicted: int, gold: int) -> tuple[float, float, float]:
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def evaluate_relations(preds: Sequence[Prediction], gold: Sequence[Document]) -> EvalReport:
    """Micro-averaged, direction-sensitive link P/R/F1; pseudo-root links never count."""
    by_id = {p.doc_id: p for p in preds}
    missing = [d.doc_id for d in gold if d.doc_id not in by_id]
    if missing:
        raise KeyError(f"no prediction for {len(missing)} documents, first: {missing[:10]}")
    tot_g = tot_p = tot_c = 0
    per_doc = []
    for doc in gold:
        g = doc.link_set()
        p = by_id[doc.doc_id].links
        c = len(g & p)
        tot_g, tot_p, tot_c = tot_g + len(g), tot_p + len(p), tot_c + c
        dp, dr, df = prf(c, len(p), len(g))
        per_doc.append({"doc_id": doc.doc_id, "gold": len(g), "predicted": len(p), "correct": c, "f1": df})
    P, R, F = prf(tot_c, tot_p, tot_g)
    return EvalReport(P, R, F, tot_g, tot_p, tot_c, label_accuracy(gold), per_doc)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: RelationModel
    history: list[dict]
    seconds: float


def _entity_dim(config: TrainConfig, external: dict | None) -> int | None:
    if external is None:
        return None
    return int(next(iter(external.values())).shape[0])


def train(
    config: TrainConfig,
    train_docs: Sequence[Document],
    labels: LabelSet,
    dev_docs: Sequence[Document] | None = None,
    external: dict | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Fixed number of epochs, one optimizer step per document, no early stopping."""
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    docs = [d for d in train_docs if d.entities]
    if config.augment:
        docs = augment_corpus(docs, config.augment_ratio, config.seed)
    vocab = Vocabulary.build(docs)
    model = RelationModel.init(config, vocab, labels, _entity_dim(config, external))
    model.external = external
    inputs = [model.prepare(d, seed=config.seed + k) for k, d in enumerate(docs)]
    opt = nc.Adam(model.param_groups(), weight_decay=config.weight_decay, clip_norm=config.clip_norm)

    history = []
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for k in rng.permutation(len(inputs)):
            try:
                loss = model.loss(inputs[k])
                nc.backward(loss)
                opt.step()
            except nc.NumericalError as exc:
                raise TrainingAborted(f"epoch {epoch}, document {inputs[k].doc.doc_id}: {exc}") from exc
            total += loss.item()
        row = {"epoch": epoch, "loss": total / max(len(inputs), 1)}
        if not np.isfinite(row["loss"]):
            raise TrainingAborted(f"epoch {epoch}: non-finite mean loss")
        history.append(row)
        log.info("epoch %d loss %.6f", epoch, row["loss"])
        if on_epoch:
            on_epoch(row)

    if dev_docs is not None:
        report = evaluate_relations(predict_corpus(model, dev_docs), dev_docs)
        history[-1].update({"dev_precision": report.precision, "dev_recall": report.recall, "dev_f1": report.f1})
    return TrainResult(model, history, time.perf_counter() - start)


def predict_corpus(model: RelationModel, docs: Sequence[Document]) -> list[Prediction]:
    return [model.predict(d) for d in docs]


# ---------------------------------------------------------------------------
# checkpoints: MAGIC | u64 header length | header JSON | float64 payload | sha256
# ---------------------------------------------------------------------------

MAGIC = b"VRDRELEX"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: RelationModel) -> None:
    tensors = model.named_tensors()
    payload = io.BytesIO()
    entries = []
    for name, t in tensors.items():
        entries.append({"name": name, "shape": list(t.shape), "offset": payload.tell()})
        payload.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    header = {
        "format_version": CHECKPOINT_VERSION,
        "tool_version": __version__,
        "config": model.config.to_dict(),
        "labels": model.labels.names,
        "vocab": model.vocab.tokens,
        "vocab_min_frequency": model.vocab.min_frequency,
        "entity_dim": model.entity_dim,
        "tensors": entries,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<Q", len(head)) + head + payload.getvalue()
    with open(path, "wb") as fh:
        fh.write(body + hashlib.sha256(body).digest())


def load_checkpoint(path) -> RelationModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupted or was modified")
    (hlen,) = struct.unpack("<Q", body[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(body[start : start + hlen].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format version {header.get('format_version')}, "
            f"this build reads version {CHECKPOINT_VERSION}"
        )
    payload = body[start + hlen :]
    config = TrainConfig.from_dict(header["config"])
    vocab = Vocabulary(header["vocab"], header["vocab_min_frequency"])
    labels = LabelSet(header["labels"])
    has_words = any(e["name"] == "word_table" for e in header["tensors"])
    ext_dim = None if has_words else header["entity_dim"]
    model = RelationModel.init(config, vocab, labels, ext_dim)
    tensors = model.named_tensors()
    for entry in header["tensors"]:
        t = tensors.get(entry["name"])
        if t is None:
            raise CheckpointError(f"{path}: unexpected tensor {entry['name']!r}")
        count = int(np.prod(entry["shape"]))
        data = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
        if tuple(entry["shape"]) != t.shape:
            raise CheckpointError(f"{path}: tensor {entry['name']!r} has shape {entry['shape']}, expected {t.shape}")
        t.data = data.reshape(t.shape).astype(np.float64)
        if t.requires_grad:
            t.grad = np.zeros_like(t.data)
    return model
