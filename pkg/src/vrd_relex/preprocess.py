"""Turning gold documents into training instances."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .docmodel import Document

ROOT = 0


@dataclass(frozen=True)
class TrainInstance:
    """A document viewed as a head-selection problem.

    Entities are addressed by position: index ``k + 1`` is ``doc.entities[k]``
    and index 0 is the pseudo root. ``head_of[k]`` is the head index of
    entity ``k`` (single-head view); ``adjacency[h, d]`` is true for every
    gold link between real entities (multi-head view, no root).
    """

    base: Document
    head_of: np.ndarray
    adjacency: np.ndarray
    reading_order: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.base.entities)


def gold_heads(doc: Document) -> dict[int, list[int]]:
    heads: dict[int, list[int]] = defaultdict(list)
    for link in doc.links:
        heads[link.dependent].append(link.head)
    return heads


def adjacency_matrix(doc: Document) -> np.ndarray:
    pos = doc.position()
    adj = np.zeros((len(doc), len(doc)), dtype=bool)
    for link in doc.links:
        adj[pos[link.head], pos[link.dependent]] = True
    return adj


def to_single_head(doc: Document, seed: int) -> TrainInstance:
    rng = np.random.default_rng(seed)
    pos = doc.position()
    heads = gold_heads(doc)
    head_of = np.zeros(len(doc), dtype=np.int64)
    for k, e in enumerate(doc.entities):
        cands = heads.get(e.id)
        if not cands:
            head_of[k] = ROOT
        elif len(cands) == 1:
            head_of[k] = pos[cands[0]] + 1
        else:
            head_of[k] = pos[cands[int(rng.integers(len(cands)))]] + 1
    return TrainInstance(
        base=replace(doc, has_pseudo_root=True),
        head_of=head_of,
        adjacency=adjacency_matrix(doc),
        reading_order=tuple(reading_order(doc)),
    )


def reading_order(doc: Document) -> list[int]:
    """Entity ids from top-left to bottom-right: sorted by (y1, x1, id)."""
    return [e.id for e in sorted(doc.entities, key=lambda e: (e.box.y1, e.box.x1, e.id))]


def augment_word_dropout(doc: Document, ratio: float, seed: int) -> Document:
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"dropout ratio must be in [0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    ents = []
    for e in doc.entities:
        drop = rng.random(len(e.words)) < ratio
        if drop.all():
            drop[int(rng.integers(len(e.words)))] = False
        words = tuple(w for w, d in zip(e.words, drop) if not d)
        ents.append(replace(e, words=words))
    return replace(doc, doc_id=f"{doc.doc_id}+aug{seed}", entities=tuple(ents))


def augment_corpus(docs: Sequence[Document], ratio: float = 0.2, seed: int = 0) -> list[Document]:
    """Originals followed by one word-dropout copy of each document."""
    copies = [augment_word_dropout(d, ratio, seed + k) for k, d in enumerate(docs)]
    return list(docs) + copies


def split_kfold(docs: Sequence, k: int, seed: int) -> list[list]:
    if not 2 <= k <= len(docs):
        raise ValueError(f"k must be in [2, {len(docs)}], got {k}")
    order = np.random.default_rng(seed).permutation(len(docs))
    return [[docs[i] for i in part] for part in np.array_split(order, k)]
