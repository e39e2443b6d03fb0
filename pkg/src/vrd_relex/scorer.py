"""Key/value role projections, biaffine pair scores and the layout feature score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .encoder import EncodedDocument, glorot, zeros


@dataclass
class ScorerParams:
    W_key: nc.Tensor
    b_key: nc.Tensor
    W_value: nc.Tensor
    b_value: nc.Tensor
    W1_B: nc.Tensor
    W2_B: nc.Tensor
    W_F: nc.Tensor
    b_F: nc.Tensor
    slope: float = 0.1

    @classmethod
    def init(cls, rng, in_dim: int = 100, role_dim: int = 300, feature_dim: int = 2, slope: float = 0.1):
        return cls(
            W_key=glorot(rng, (in_dim, role_dim), "W_key"),
            b_key=zeros((role_dim,), "b_key"),
            W_value=glorot(rng, (in_dim, role_dim), "W_value"),
            b_value=zeros((role_dim,), "b_value"),
            W1_B=zeros((role_dim, role_dim), "W1_B"),
            W2_B=zeros((role_dim,), "W2_B"),
            W_F=zeros((feature_dim,), "W_F"),
            b_F=zeros((), "b_F"),
            slope=slope,
        )

    def tensors(self) -> list[nc.Tensor]:
        return [self.W_key, self.b_key, self.W_value, self.b_value, self.W1_B, self.W2_B, self.W_F, self.b_F]


@dataclass
class ScoreMatrix:
    """``scores[i, j]``: head candidate ``i`` (0 = pseudo root) for dependent ``j``.

    ``mask[i, j]`` is true for admissible cells; the self-pairs ``i = j + 1``
    are excluded.
    """

    scores: nc.Tensor
    mask: np.ndarray

    @property
    def n(self) -> int:
        return self.scores.shape[1]

    def values(self) -> np.ndarray:
        return self.scores.data


def self_pair_mask(n: int) -> np.ndarray:
    mask = np.ones((n + 1, n), dtype=bool)
    mask[np.arange(1, n + 1), np.arange(n)] = False
    return mask


def project_roles(encoded: EncodedDocument, p: ScorerParams) -> tuple[nc.Tensor, nc.Tensor]:
    """Key roles for root + entities, shape (n+1, r); value roles for entities, (n, r)."""
    heads = nc.concat([nc.reshape(encoded.root, (1, -1)), encoded.nodes], axis=0)
    h_key = nc.leaky_relu(nc.matmul(heads, p.W_key) + p.b_key, p.slope)
    h_value = nc.leaky_relu(nc.matmul(encoded.nodes, p.W_value) + p.b_value, p.slope)
    return h_key, h_value


def biaffine_score(h_key: np.ndarray, h_value: np.ndarray, W1: np.ndarray, W2: np.ndarray) -> float:
    return float(h_key @ W1 @ h_value + h_key @ W2)


def biaffine_scores(h_key: nc.Tensor, h_value: nc.Tensor, p: ScorerParams) -> nc.Tensor:
    bilinear = nc.matmul(nc.matmul(h_key, p.W1_B), nc.transpose(h_value))
    linear = nc.reshape(nc.matmul(h_key, p.W2_B), (-1, 1))
    return bilinear + linear


def feature_score(r: np.ndarray, W_F: np.ndarray, b_F: float) -> float:
    return float(np.dot(W_F, r) + b_F)


def feature_scores(pair_feats: np.ndarray, p: ScorerParams) -> nc.Tensor:
    return nc.matmul(pair_feats, p.W_F) + p.b_F


def total_scores(encoded: EncodedDocument, pair_feats: np.ndarray, p: ScorerParams) -> ScoreMatrix:
    """Biaffine plus layout-feature scores for all (candidate head, dependent) cells."""
    h_key, h_value = project_roles(encoded, p)
    s = biaffine_scores(h_key, h_value, p) + feature_scores(pair_feats, p)
    return ScoreMatrix(s, self_pair_mask(encoded.nodes.shape[0]))
