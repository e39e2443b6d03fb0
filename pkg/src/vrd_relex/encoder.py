"""Layout-aware graph encoder over the entities of one document.

Each layer builds neighbour features ``h_ij = e_i ⊕ r_ij ⊕ e_j`` for every
ordered pair (self-pairs included), attends over ``j`` with
``softmax_j(LeakyReLU(W_a · h_ij))`` and produces

    e'_i  = Σ_j α_ij (W_n h_ij + b_n)
    r'_ij = W_r h_ij + b_r

The concatenation is never materialised: every projection of ``h_ij`` is
split into its self, edge and neighbour blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .featurize import edge_feature_matrix


def glorot(rng: np.random.Generator, shape: tuple[int, ...], name: str) -> nc.Tensor:
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return nc.Tensor(rng.uniform(-limit, limit, shape), requires_grad=True, name=name)


def zeros(shape, name: str) -> nc.Tensor:
    return nc.Tensor(np.zeros(shape), requires_grad=True, name=name)


@dataclass
class GcnLayerParams:
    node_dim: int
    edge_dim: int
    W_a: nc.Tensor
    W_n: nc.Tensor
    b_n: nc.Tensor
    W_r: nc.Tensor
    b_r: nc.Tensor

    @property
    def pair_dim(self) -> int:
        return 2 * self.node_dim + self.edge_dim

    @property
    def out_node_dim(self) -> int:
        return self.W_n.shape[1]

    @property
    def out_edge_dim(self) -> int:
        return self.W_r.shape[1]

    @classmethod
    def init(cls, rng, node_dim: int, edge_dim: int, out_node: int, out_edge: int, prefix: str) -> "GcnLayerParams":
        h = 2 * node_dim + edge_dim
        return cls(
            node_dim,
            edge_dim,
            W_a=glorot(rng, (h,), f"{prefix}.W_a"),
            W_n=glorot(rng, (h, out_node), f"{prefix}.W_n"),
            b_n=zeros((out_node,), f"{prefix}.b_n"),
            W_r=glorot(rng, (h, out_edge), f"{prefix}.W_r"),
            b_r=zeros((out_edge,), f"{prefix}.b_r"),
        )

    def tensors(self) -> list[nc.Tensor]:
        return [self.W_a, self.W_n, self.b_n, self.W_r, self.b_r]


def neighbor_features(e_i: np.ndarray, r_ij: np.ndarray, e_j: np.ndarray) -> np.ndarray:
    return np.concatenate([e_i, r_ij, e_j])


def _split_project(nodes: nc.Tensor, edges: nc.Tensor, W: nc.Tensor, d: int, de: int):
    """Self, edge and neighbour contributions of ``W`` applied to ``h_ij``."""
    return (
        nc.matmul(nodes, W[:d]),
        nc.matmul(edges, W[d : d + de]),
        nc.matmul(nodes, W[d + de :]),
    )


def gcn_layer(nodes: nc.Tensor, edges: nc.Tensor, params: GcnLayerParams, slope: float = 0.1):
    """One message-passing step. Returns ``(nodes', edges', attention)``."""
    n, d = nodes.shape
    de = edges.shape[-1]
    if d != params.node_dim or de != params.edge_dim or edges.shape[:2] != (n, n):
        raise nc.ShapeError(
            f"gcn_layer: nodes {nodes.shape} / edges {edges.shape} do not fit "
            f"layer dims ({params.node_dim}, {params.edge_dim})"
        )

    a_self, a_edge, a_nbr = _split_project(nodes, edges, params.W_a, d, de)
    logits = nc.reshape(a_self, (n, 1)) + a_edge + nc.reshape(a_nbr, (1, n))
    alpha = nc.softmax(nc.leaky_relu(logits, slope), axis=1)

    # Σ_j α_ij (P_i + R_ij + Q_j + b) = P_i + b + Σ_j α_ij R_ij + (α Q)_i
    p_self, p_edge, p_nbr = _split_project(nodes, edges, params.W_n, d, de)
    weighted_edges = nc.sum(nc.reshape(alpha, (n, n, 1)) * p_edge, axis=1)
    new_nodes = p_self + params.b_n + weighted_edges + nc.matmul(alpha, p_nbr)

    r_self, r_edge, r_nbr = _split_project(nodes, edges, params.W_r, d, de)
    k = params.out_edge_dim
    new_edges = nc.reshape(r_self, (n, 1, k)) + r_edge + nc.reshape(r_nbr, (1, n, k)) + params.b_r
    return new_nodes, new_edges, alpha


@dataclass
class EncodedDocument:
    nodes: nc.Tensor
    edges: nc.Tensor
    root: nc.Tensor
    attention: list[np.ndarray]


@dataclass
class GcnEncoder:
    layers: list[GcnLayerParams]
    root: nc.Tensor
    slope: float = 0.1

    @classmethod
    def init(cls, rng, in_dim: int, hidden: int = 100, edge_hidden: int = 100, num_layers: int = 2, slope: float = 0.1):
        layers = []
        node_dim, edge_dim = in_dim, 2
        for k in range(num_layers):
            layers.append(GcnLayerParams.init(rng, node_dim, edge_dim, hidden, edge_hidden, f"gcn{k}"))
            node_dim, edge_dim = hidden, edge_hidden
        root = nc.Tensor(rng.normal(0.0, 0.1, hidden), requires_grad=True, name="root")
        return cls(layers, root, slope)

    def tensors(self) -> list[nc.Tensor]:
        return [t for layer in self.layers for t in layer.tensors()] + [self.root]

    def encode(self, reps: nc.Tensor, edge_feats) -> EncodedDocument:
        nodes = reps
        edges = nc.as_tensor(edge_feats)
        attention = []
        for layer in self.layers:
            nodes, edges, alpha = gcn_layer(nodes, edges, layer, self.slope)
            attention.append(alpha.data)
        return EncodedDocument(nodes, edges, self.root, attention)


def encode_document(encoder: GcnEncoder, reps: nc.Tensor, boxes: np.ndarray) -> EncodedDocument:
    return encoder.encode(reps, edge_feature_matrix(np.asarray(boxes, dtype=np.float64)))
