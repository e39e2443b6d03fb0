"""Entity labeling head, jackknifed auto labels and the multi-task objective."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import numcore as nc
from .docmodel import Document, LabelSet
from .encoder import glorot, zeros
from .featurize import (
    Vocabulary,
    bucketize_embed,
    embed_tokens,
    geometry_buckets,
    geometry_tables,
    pooling_inputs,
)
from .preprocess import split_kfold

log = logging.getLogger(__name__)


@dataclass
class LabelerParams:
    """MLP over ``b_i ⊕ g_i``; scores the real labels (label id k+1 <-> logit k)."""

    geo: list[nc.Tensor]
    W_h: nc.Tensor
    b_h: nc.Tensor
    W_o: nc.Tensor
    b_o: nc.Tensor
    slope: float = 0.1

    @classmethod
    def init(cls, rng, entity_dim: int, num_labels: int, hidden: int = 300, geometry_dim: int = 10, slope: float = 0.1):
        geo = geometry_tables(rng, geometry_dim)
        for t in geo:
            t.name = "labeler." + t.name
        return cls(
            geo=geo,
            W_h=glorot(rng, (entity_dim + 3 * geometry_dim, hidden), "labeler.W_h"),
            b_h=zeros((hidden,), "labeler.b_h"),
            W_o=glorot(rng, (hidden, num_labels), "labeler.W_o"),
            b_o=zeros((num_labels,), "labeler.b_o"),
            slope=slope,
        )

    def tensors(self) -> list[nc.Tensor]:
        return [*self.geo, self.W_h, self.b_h, self.W_o, self.b_o]


def label_scores(b: nc.Tensor, g: nc.Tensor, p: LabelerParams) -> nc.Tensor:
    hidden = nc.leaky_relu(nc.matmul(nc.concat([b, g], axis=-1), p.W_h) + p.b_h, p.slope)
    return nc.matmul(hidden, p.W_o) + p.b_o


def label_targets(doc: Document) -> tuple[np.ndarray, np.ndarray]:
    """Positions with a usable gold label and their logit indices."""
    rows = [k for k, e in enumerate(doc.entities) if e.gold_label]
    return np.asarray(rows, dtype=np.int64), np.asarray([doc.entities[k].gold_label - 1 for k in rows], dtype=np.int64)


def label_loss(logits: nc.Tensor, doc: Document) -> nc.Tensor:
    rows, targets = label_targets(doc)
    if rows.size == 0:
        return nc.Tensor(0.0)
    return nc.softmax_cross_entropy(logits[rows], targets)


def mtl_loss(relation_loss: nc.Tensor, labeling_loss: nc.Tensor, weight: float = 1.0) -> nc.Tensor:
    if weight < 0:
        raise ValueError(f"multi-task weight must be >= 0, got {weight}")
    if weight == 0:
        return relation_loss
    return relation_loss + labeling_loss * weight


# ---------------------------------------------------------------------------
# standalone labeler used for auto labels
# ---------------------------------------------------------------------------


@dataclass
class LabelerConfig:
    seed: int = 0
    epochs: int = 20
    word_dim: int = 100
    hidden: int = 300
    geometry_dim: int = 10
    learning_rate: float = 1e-2


@dataclass
class LabelerModel:
    vocab: Vocabulary
    word_table: nc.Tensor
    head: LabelerParams

    def logits(self, doc: Document) -> nc.Tensor:
        ids, pool = pooling_inputs(doc, self.vocab)
        b = embed_tokens(ids, pool, self.word_table)
        g = bucketize_embed(geometry_buckets(doc), self.head.geo)
        return label_scores(b, g, self.head)

    def predict(self, doc: Document) -> np.ndarray:
        """Predicted label ids (1-based, ``unknown`` is never predicted)."""
        if not doc.entities:
            return np.zeros(0, dtype=np.int64)
        return np.argmax(self.logits(doc).data, axis=1) + 1

    def tensors(self) -> list[nc.Tensor]:
        return [self.word_table, *self.head.tensors()]


def train_labeler(docs: Sequence[Document], labels: LabelSet, config: LabelerConfig | None = None) -> LabelerModel:
    config = config or LabelerConfig()
    rng = np.random.default_rng(config.seed)
    vocab = Vocabulary.build(docs)
    model = LabelerModel(
        vocab,
        nc.Tensor(rng.normal(0.0, 0.1, (len(vocab), config.word_dim)), requires_grad=True, name="labeler.words"),
        LabelerParams.init(rng, config.word_dim, len(labels) - 1, config.hidden, config.geometry_dim),
    )
    opt = nc.Adam([nc.ParamGroup("labeler", model.tensors(), config.learning_rate)])
    docs = [d for d in docs if d.entities]
    for epoch in range(config.epochs):
        total = 0.0
        for k in rng.permutation(len(docs)):
            loss = label_loss(model.logits(docs[k]), docs[k])
            nc.backward(loss)
            opt.step()
            total += loss.item()
        log.debug("labeler epoch %d loss %.4f", epoch, total / max(len(docs), 1))
    return model


def apply_auto_labels(doc: Document, predicted: np.ndarray) -> Document:
    ents = tuple(replace(e, auto_label=int(lab)) for e, lab in zip(doc.entities, predicted))
    return replace(doc, entities=ents)


def label_accuracy(docs: Sequence[Document]) -> float | None:
    pairs = [(e.gold_label, e.auto_label) for d in docs for e in d.entities if e.gold_label and e.auto_label is not None]
    if not pairs:
        return None
    return sum(g == a for g, a in pairs) / len(pairs)


def jackknife_autolabel(
    train_docs: Sequence[Document],
    labels: LabelSet,
    k: int = 5,
    seed: int = 0,
    test_docs: Sequence[Document] | None = None,
    config: LabelerConfig | None = None,
    train_fn: Callable[[Sequence[Document], LabelSet, LabelerConfig], LabelerModel] = train_labeler,
) -> tuple[list[Document], list[Document]]:
    """Fill ``auto_label`` by k-fold jackknifing on train and a full-train model on test.

    Training documents come back in their original order.
    """
    config = config or LabelerConfig(seed=seed)
    folds = split_kfold(list(range(len(train_docs))), k, seed)
    out: list[Document | None] = [None] * len(train_docs)
    for f, held in enumerate(folds):
        held_set = set(held)
        rest = [train_docs[i] for i in range(len(train_docs)) if i not in held_set]
        model = train_fn(rest, labels, replace(config, seed=config.seed + f))
        for i in held:
            out[i] = apply_auto_labels(train_docs[i], model.predict(train_docs[i]))
        log.info("auto labels: fold %d/%d done", f + 1, k)

    labeled_test: list[Document] = []
    if test_docs:
        model = train_fn(list(train_docs), labels, config)
        labeled_test = [apply_auto_labels(d, model.predict(d)) for d in test_docs]
    return out, labeled_test
