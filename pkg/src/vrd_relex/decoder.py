"""Losses and decoding for the single-head and multi-head regimes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .docmodel import Document
from .numcore import _sigmoid
from .scorer import ScoreMatrix

SINGLE = "single-head"
MULTI = "multi-head"


@dataclass
class Prediction:
    """Predicted links of one document, in entity-id space.

    ``links`` holds links between real entities. Dependents attached to the
    pseudo root are kept apart in ``root_dependents`` so that an entity whose
    id happens to be 0 is never confused with the root.
    """

    doc_id: str
    mode: str
    links: set[tuple[int, int]] = field(default_factory=set)
    root_dependents: set[int] = field(default_factory=set)

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "mode": self.mode,
            "links": sorted([h, d] for h, d in self.links),
            "root_links": sorted([0, d] for d in self.root_dependents),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Prediction":
        return cls(
            rec["doc_id"],
            rec.get("mode", SINGLE),
            {(int(h), int(d)) for h, d in rec.get("links", [])},
            {int(d) for _, d in rec.get("root_links", [])},
        )


def single_head_loss(S: ScoreMatrix, heads) -> nc.Tensor:
    """Mean softmax cross-entropy of each dependent's column against its gold head."""
    heads = np.asarray(heads, dtype=np.int64)
    if heads.shape != (S.n,):
        raise ValueError(f"expected {S.n} gold heads, got shape {heads.shape}")
    return nc.softmax_cross_entropy(nc.transpose(S.scores), heads, S.mask.T)


def single_head_decode(S: ScoreMatrix) -> np.ndarray:
    """Best admissible head index per dependent; ties go to the smallest index."""
    vals = np.where(S.mask, S.values(), -np.inf)
    return np.argmax(vals, axis=0)


def binary_loss(S: ScoreMatrix, adjacency) -> nc.Tensor:
    """Mean sigmoid BCE over ordered real pairs ``i != j`` (root row ignored)."""
    n = S.n
    adjacency = np.asarray(adjacency, dtype=bool)
    off_diag = ~np.eye(n, dtype=bool)
    return nc.binary_cross_entropy(S.scores[1:], adjacency, off_diag)


def binary_decode(S: ScoreMatrix, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    probs = _sigmoid(S.values()[1:])
    return (probs > threshold) & ~np.eye(S.n, dtype=bool)


def heads_to_prediction(doc: Document, heads: np.ndarray) -> Prediction:
    ids = doc.entity_ids()
    pred = Prediction(doc.doc_id, SINGLE)
    for k, h in enumerate(heads):
        if h == 0:
            pred.root_dependents.add(ids[k])
        else:
            pred.links.add((ids[h - 1], ids[k]))
    return pred


def adjacency_to_prediction(doc: Document, adj: np.ndarray) -> Prediction:
    ids = doc.entity_ids()
    hs, ds = np.nonzero(adj)
    return Prediction(doc.doc_id, MULTI, {(ids[h], ids[d]) for h, d in zip(hs, ds)})


def save_predictions(path, preds: list[Prediction], extra: dict | None = None) -> None:
    payload = {"predictions": [p.to_record() for p in preds]}
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def load_predictions(path) -> list[Prediction]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return [Prediction.from_record(r) for r in payload["predictions"]]
