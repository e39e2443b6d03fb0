"""Finite-difference checks for every differentiable block of the model.

Each check builds a small random problem, reduces the block's output to a
scalar with a fixed random projection and compares backprop against central
differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numcore as nc
from .decoder import binary_loss, single_head_loss
from .encoder import EncodedDocument, GcnLayerParams, gcn_layer
from .featurize import Vocabulary, attach_label, bucketize_embed, embed_tokens, geometry_tables, pooling_inputs
from .labeler import LabelerParams, label_loss, label_scores
from .scorer import ScoreMatrix, ScorerParams, biaffine_scores, feature_scores, project_roles, self_pair_mask, total_scores
from .synthgen import SynthSpec, generate


@dataclass
class SuiteEntry:
    component: str
    report: nc.GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed


def _param(rng, shape, name, scale=0.5) -> nc.Tensor:
    return nc.Tensor(rng.normal(0.0, scale, shape), requires_grad=True, name=name)


def _project(t: nc.Tensor, rng) -> nc.Tensor:
    return nc.sum(t * nc.Tensor(rng.normal(size=t.shape)))


def _randomize(tensors, rng, scale=0.5) -> dict[str, nc.Tensor]:
    for t in tensors:
        t.data = rng.normal(0.0, scale, t.shape)
        t.requires_grad = True
    return {t.name: t for t in tensors}


def _fixture(seed: int):
    docs, labels = generate(SynthSpec(seed=seed, docs=1, pairs=(3, 3), distractor_ratio=0.2))
    return docs[0], labels


def check_embeddings(seed: int, **kw) -> nc.GradCheckReport:
    rng = np.random.default_rng(seed)
    doc, labels = _fixture(seed)
    vocab = Vocabulary.build([doc])
    ids, pool = pooling_inputs(doc, vocab)
    words = _param(rng, (len(vocab), 4), "word_table")
    label_table = _param(rng, (len(labels), 3), "label_table")
    geo = geometry_tables(rng, 2)
    lab = np.array([e.gold_label for e in doc.entities])
    proj = rng.normal(size=(len(doc.entities), 13))

    def build():
        b = attach_label(embed_tokens(ids, pool, words), lab, label_table)
        g = bucketize_embed(np.array([[k % 20, (k * 3) % 20, k % 10] for k in range(len(lab))]), geo)
        return nc.sum(nc.concat([b, g], axis=-1) * nc.Tensor(proj))

    return nc.check_gradients(build, {t.name: t for t in [words, label_table, *geo]}, seed=seed, **kw)


def check_gcn_layer(seed: int, **kw) -> nc.GradCheckReport:
    rng = np.random.default_rng(seed)
    n, d, de = 4, 5, 3
    nodes = _param(rng, (n, d), "nodes")
    edges = _param(rng, (n, n, de), "edges")
    params = GcnLayerParams.init(rng, d, de, 4, 3, "gcn")
    tensors = _randomize(params.tensors(), rng)
    pn, pe = rng.normal(size=(n, 4)), rng.normal(size=(n, n, 3))

    def build():
        new_nodes, new_edges, _ = gcn_layer(nodes, edges, params, 0.1)
        return nc.sum(new_nodes * nc.Tensor(pn)) + nc.sum(new_edges * nc.Tensor(pe))

    return nc.check_gradients(build, {"nodes": nodes, "edges": edges, **tensors}, seed=seed, **kw)


def _scorer_setup(seed: int, n: int = 4, d: int = 5, role: int = 6):
    rng = np.random.default_rng(seed)
    nodes = _param(rng, (n, d), "nodes")
    root = _param(rng, (d,), "root")
    params = ScorerParams.init(rng, d, role, 2)
    tensors = _randomize(params.tensors(), rng)
    feats = np.zeros((n + 1, n, 2))
    feats[1:] = rng.uniform(0, 1, (n, n, 2))
    return rng, nodes, root, params, tensors, feats


def check_roles(seed: int, **kw) -> nc.GradCheckReport:
    rng, nodes, root, params, tensors, _ = _scorer_setup(seed)
    enc = EncodedDocument(nodes, None, root, [])
    pk, pv = rng.normal(size=(5, 6)), rng.normal(size=(4, 6))

    def build():
        hk, hv = project_roles(enc, params)
        return nc.sum(hk * nc.Tensor(pk)) + nc.sum(hv * nc.Tensor(pv))

    keep = {k: tensors[k] for k in ("W_key", "b_key", "W_value", "b_value")}
    return nc.check_gradients(build, {"nodes": nodes, "root": root, **keep}, seed=seed, **kw)


def check_biaffine(seed: int, **kw) -> nc.GradCheckReport:
    rng = np.random.default_rng(seed)
    params = ScorerParams.init(rng, 3, 6, 2)
    tensors = _randomize(params.tensors(), rng)
    hk, hv = _param(rng, (5, 6), "h_key"), _param(rng, (4, 6), "h_value")
    proj = rng.normal(size=(5, 4))

    def build():
        return nc.sum(biaffine_scores(hk, hv, params) * nc.Tensor(proj))

    return nc.check_gradients(build, {"h_key": hk, "h_value": hv, "W1_B": tensors["W1_B"], "W2_B": tensors["W2_B"]}, seed=seed, **kw)


def check_feature_scorer(seed: int, **kw) -> nc.GradCheckReport:
    rng, _, _, params, tensors, feats = _scorer_setup(seed)
    proj = rng.normal(size=(5, 4))

    def build():
        return nc.sum(feature_scores(feats, params) * nc.Tensor(proj))

    return nc.check_gradients(build, {"W_F": tensors["W_F"], "b_F": tensors["b_F"]}, seed=seed, **kw)


def _loss_check(seed: int, loss_fn: Callable[[ScoreMatrix], nc.Tensor], **kw) -> nc.GradCheckReport:
    rng = np.random.default_rng(seed)
    n = 5
    scores = _param(rng, (n + 1, n), "scores", scale=2.0)
    mask = self_pair_mask(n)

    def build():
        return loss_fn(ScoreMatrix(scores, mask))

    return nc.check_gradients(build, {"scores": scores}, seed=seed, **kw)


def check_single_head_loss(seed: int, **kw) -> nc.GradCheckReport:
    heads = np.array([0, 1, 0, 2, 4])
    return _loss_check(seed, lambda S: single_head_loss(S, heads), **kw)


def check_binary_loss(seed: int, **kw) -> nc.GradCheckReport:
    adj = np.zeros((5, 5), dtype=bool)
    adj[0, 1] = adj[1, 3] = adj[3, 4] = adj[0, 4] = True
    return _loss_check(seed, lambda S: binary_loss(S, adj), **kw)


def check_labeler(seed: int, **kw) -> nc.GradCheckReport:
    rng = np.random.default_rng(seed)
    doc, labels = _fixture(seed)
    n = len(doc.entities)
    params = LabelerParams.init(rng, 4, len(labels) - 1, hidden=5, geometry_dim=2)
    tensors = _randomize(params.tensors(), rng)
    b = _param(rng, (n, 4), "entity_vectors")
    buckets = np.array([[k % 20, (2 * k) % 20, k % 10] for k in range(n)])

    def build():
        return label_loss(label_scores(b, bucketize_embed(buckets, params.geo), params), doc)

    return nc.check_gradients(build, {"entity_vectors": b, **tensors}, seed=seed, **kw)


def check_full_model(seed: int, decoder: str, **kw) -> nc.GradCheckReport:
    from .trainer import RelationModel, TrainConfig

    doc, labels = _fixture(seed)
    cfg = TrainConfig(
        seed=seed, label_source="gold", word_dim=6, label_dim=4, gcn_dim=5, role_dim=7,
        labeler_hidden=5, geometry_dim=3, mtl=True, decoder=decoder, geometry_scale=1.0,
    )
    model = RelationModel.init(cfg, Vocabulary.build([doc]), labels)
    tensors = _randomize(model.named_tensors().values(), np.random.default_rng(seed))
    x = model.prepare(doc)
    return nc.check_gradients(lambda: model.loss(x), tensors, seed=seed, **kw)


def run_suite(seed: int = 0, epsilon: float = 1e-3, tolerance: float = 1e-4, coords: int = 32) -> list[SuiteEntry]:
    kw = {"epsilon": epsilon, "tolerance": tolerance, "coords": coords}
    checks: list[tuple[str, Callable[[], nc.GradCheckReport]]] = [
        ("embeddings", lambda: check_embeddings(seed, **kw)),
        ("gcn_layer", lambda: check_gcn_layer(seed, **kw)),
        ("role_mlps", lambda: check_roles(seed, **kw)),
        ("biaffine", lambda: check_biaffine(seed, **kw)),
        ("feature_scorer", lambda: check_feature_scorer(seed, **kw)),
        ("single_head_loss", lambda: check_single_head_loss(seed, **kw)),
        ("binary_loss", lambda: check_binary_loss(seed, **kw)),
        ("labeler", lambda: check_labeler(seed, **kw)),
        ("model_single_head", lambda: check_full_model(seed, "single-head", **kw)),
        ("model_multi_head", lambda: check_full_model(seed, "multi-head", **kw)),
    ]
    return [SuiteEntry(name, fn()) for name, fn in checks]
