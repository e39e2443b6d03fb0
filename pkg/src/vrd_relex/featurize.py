"""Entity vectors, label embeddings and box geometry features."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import numcore as nc
from .docmodel import BoundingBox, Document, SemanticEntity

PAD, UNK = 0, 1

WIDTH_BINS = 20
HEIGHT_BINS = 20
# upper edges of the character-count buckets; anything above 100 is the last bucket
CHAR_EDGES = (1, 2, 3, 4, 5, 10, 20, 50, 100)
CHAR_BINS = len(CHAR_EDGES) + 1
GEOMETRY_DIM = 10


def tokenize(words: Iterable[str]) -> list[str]:
    return [tok.lower() for w in words for tok in w.split()]


@dataclass
class Vocabulary:
    tokens: list[str] = field(default_factory=lambda: ["<pad>", "<unk>"])
    min_frequency: int = 1

    def __post_init__(self):
        self._index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, token: str) -> int:
        return self._index.get(token, UNK)

    def encode(self, words: Iterable[str]) -> list[int]:
        return [self[t] for t in tokenize(words)]

    @classmethod
    def build(cls, docs: Iterable[Document], min_frequency: int = 1) -> "Vocabulary":
        counts: Counter = Counter()
        for doc in docs:
            for e in doc.entities:
                counts.update(tokenize(e.words))
        kept = sorted(t for t, c in counts.items() if c >= min_frequency)
        return cls(["<pad>", "<unk>"] + kept, min_frequency)


# ---------------------------------------------------------------------------
# entity vectors
# ---------------------------------------------------------------------------


def pooling_inputs(doc: Document, vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
    """Flat token ids of a document and the (n, tokens) mean-pooling matrix."""
    ids: list[int] = []
    owners: list[int] = []
    for k, e in enumerate(doc.entities):
        toks = vocab.encode(e.words)
        if not toks:
            raise ValueError(f"{doc.doc_id}: entity {e.id} has no words")
        ids.extend(toks)
        owners.extend([k] * len(toks))
    pool = np.zeros((len(doc.entities), len(ids)))
    owners_arr = np.asarray(owners, dtype=np.int64)
    pool[owners_arr, np.arange(len(ids))] = 1.0
    pool /= np.maximum(pool.sum(axis=1, keepdims=True), 1.0)
    return np.asarray(ids, dtype=np.int64), pool


def embed_tokens(token_ids: np.ndarray, pool: np.ndarray, table: nc.Tensor) -> nc.Tensor:
    """Mean word vector per entity, differentiable w.r.t. ``table``."""
    return nc.matmul(pool, nc.take_rows(table, token_ids))


def embed_entity(entity: SemanticEntity, vocab: Vocabulary, table: nc.Tensor) -> nc.Tensor:
    ids = vocab.encode(entity.words)
    if not ids:
        raise ValueError(f"entity {entity.id} has no words")
    return nc.mean(nc.take_rows(table, ids), axis=0)


def attach_label(b: nc.Tensor, labels, label_table: nc.Tensor) -> nc.Tensor:
    """Append label embeddings: ``e_i = b_i ⊕ l_i``. Works for one vector or a matrix."""
    labels = np.asarray(labels, dtype=np.int64)
    if np.any((labels < 0) | (labels >= label_table.shape[0])):
        raise ValueError(f"label id out of range for a table of {label_table.shape[0]} labels: {labels}")
    return nc.concat([b, nc.take_rows(label_table, labels)], axis=-1)


# ---------------------------------------------------------------------------
# pair geometry
# ---------------------------------------------------------------------------


def edge_features(a: BoundingBox, b: BoundingBox) -> tuple[float, float]:
    x = min(abs(a.x1 - b.x2), abs(b.x1 - a.x2))
    y = min(abs(a.y1 - b.y2), abs(b.y1 - a.y2))
    return x, y


def box_array(doc: Document) -> np.ndarray:
    """(n, 4) array of ``[x1, y1, x2, y2]``."""
    return np.array([e.box.as_list() for e in doc.entities], dtype=np.float64).reshape(-1, 4)


def edge_feature_matrix(boxes: np.ndarray) -> np.ndarray:
    """(n, n, 2) pairwise gap features for every ordered pair, diagonal included."""
    x1, y1, x2, y2 = (boxes[:, k] for k in range(4))
    gx = np.minimum(np.abs(x1[:, None] - x2[None, :]), np.abs(x1[None, :] - x2[:, None]))
    gy = np.minimum(np.abs(y1[:, None] - y2[None, :]), np.abs(y1[None, :] - y2[:, None]))
    return np.stack([gx, gy], axis=-1)


def signed_offsets(boxes: np.ndarray) -> np.ndarray:
    """(n, n, 2) center deltas ``center_j - center_i``."""
    cx = (boxes[:, 0] + boxes[:, 2]) / 2.0
    cy = (boxes[:, 1] + boxes[:, 3]) / 2.0
    return np.stack([cx[None, :] - cx[:, None], cy[None, :] - cy[:, None]], axis=-1)


def pair_feature_matrix(boxes: np.ndarray, signed: bool = False) -> np.ndarray:
    """Scorer features for (head candidate, dependent): ``(n+1, n, d)``.

    Row 0 is the pseudo root and carries zeros.
    """
    n = boxes.shape[0]
    feats = edge_feature_matrix(boxes)
    if signed:
        feats = np.concatenate([feats, signed_offsets(boxes)], axis=-1)
    out = np.zeros((n + 1, n, feats.shape[-1]))
    out[1:] = feats
    return out


# ---------------------------------------------------------------------------
# width / height / character-count features
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeometryFeatures:
    width: float
    height: float
    chars: int


def geometry_features(entity: SemanticEntity) -> GeometryFeatures:
    return GeometryFeatures(entity.box.width, entity.box.height, max(len(entity.text), 1))


# widths come from coordinate differences, so 0.35 - 0.1 must still land on the 0.25 edge
_EDGE_TOLERANCE = 1e-9


def _uniform_bin(v: float, bins: int) -> int:
    return int(min(max(np.floor(v * bins + _EDGE_TOLERANCE), 0), bins - 1))


def bucketize(g: GeometryFeatures) -> tuple[int, int, int]:
    c = int(np.searchsorted(CHAR_EDGES, g.chars, side="left"))
    return _uniform_bin(g.width, WIDTH_BINS), _uniform_bin(g.height, HEIGHT_BINS), c


def geometry_buckets(doc: Document) -> np.ndarray:
    """(n, 3) bucket ids for width, height and characters."""
    return np.array([bucketize(geometry_features(e)) for e in doc.entities], dtype=np.int64).reshape(-1, 3)


def bucketize_embed(buckets: np.ndarray, tables: Sequence[nc.Tensor]) -> nc.Tensor:
    """Concatenate the three 10-dim lookups, giving (n, 30) (or (30,) for one entity)."""
    buckets = np.asarray(buckets, dtype=np.int64)
    parts = [nc.take_rows(t, buckets[..., k]) for k, t in enumerate(tables)]
    return nc.concat(parts, axis=-1)


def geometry_tables(rng: np.random.Generator, dim: int = GEOMETRY_DIM) -> list[nc.Tensor]:
    return [
        nc.Tensor(rng.normal(0.0, 0.1, (size, dim)), requires_grad=True, name=name)
        for name, size in (("geo_width", WIDTH_BINS), ("geo_height", HEIGHT_BINS), ("geo_chars", CHAR_BINS))
    ]


# ---------------------------------------------------------------------------
# external entity vectors
# ---------------------------------------------------------------------------


class EmbeddingFileError(ValueError):
    pass


def load_external_embeddings(path, corpus: Sequence[Document]) -> dict[tuple[str, int], np.ndarray]:
    """Read precomputed entity vectors (JSON lines: doc_id, entity_id, vec)."""
    table: dict[tuple[str, int], np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            vec = np.asarray(rec["vec"], dtype=np.float64)
            if dim is None:
                dim = vec.shape
            elif vec.shape != dim:
                raise EmbeddingFileError(f"{path}:{lineno}: vector shape {vec.shape}, expected {dim}")
            table[(str(rec["doc_id"]), int(rec["entity_id"]))] = vec
    missing = [(d.doc_id, e.id) for d in corpus for e in d.entities if _lookup(table, d.doc_id, e.id) is None]
    if missing:
        raise EmbeddingFileError(f"{path}: {len(missing)} entities have no vector, first: {missing[:10]}")
    return table


def _lookup(table, doc_id: str, entity_id: int):
    vec = table.get((doc_id, entity_id))
    if vec is None and "+aug" in doc_id:
        # augmented copies fall back to the vectors of their source document
        vec = table.get((doc_id.split("+aug")[0], entity_id))
    return vec


def external_matrix(doc: Document, table: dict[tuple[str, int], np.ndarray]) -> np.ndarray:
    rows = [_lookup(table, doc.doc_id, e.id) for e in doc.entities]
    if any(r is None for r in rows):
        raise EmbeddingFileError(f"{doc.doc_id}: missing external vectors")
    return np.stack(rows)
