import json
from dataclasses import replace

import numpy as np
import pytest
from conftest import make_doc
from hypothesis import given
from hypothesis import strategies as st

from vrd_relex.decoder import Prediction
from vrd_relex.synthgen import SynthSpec, generate
from vrd_relex.trainer import (
    CheckpointError,
    TrainConfig,
    TrainingAborted,
    evaluate_relations,
    load_checkpoint,
    predict_corpus,
    save_checkpoint,
    train,
)
from oracles import micro_prf

SMALL = dict(word_dim=8, label_dim=4, gcn_dim=8, role_dim=12, labeler_hidden=8, geometry_dim=3)


@pytest.fixture(scope="module")
def corpus():
    return generate(SynthSpec(seed=21, docs=6, pairs=(3, 4), distractor_ratio=0.25))


@pytest.fixture(scope="module")
def trained(corpus):
    docs, labels = corpus
    return train(TrainConfig(seed=1, epochs=4, label_source="gold", **SMALL), docs, labels)


def hand_fixture():
    gold = make_doc([[0, 0, 0.1, 0.1]] * 6, [(1, 2), (3, 4), (5, 6), (1, 6)])
    pred = Prediction("d", "single-head", {(1, 2), (3, 4), (5, 6), (2, 1), (4, 3)}, {5})
    return gold, pred


def test_metrics_on_hand_fixture():
    gold, pred = hand_fixture()
    r = evaluate_relations([pred], [gold])
    assert (r.gold, r.predicted, r.correct) == (4, 5, 3)
    assert r.precision == pytest.approx(0.6, abs=1e-9)
    assert r.recall == pytest.approx(0.75, abs=1e-9)
    assert r.f1 == pytest.approx(2 / 3, abs=1e-9)


def test_root_links_never_count():
    gold, pred = hand_fixture()
    more = replace(pred, root_dependents={1, 2, 3, 4, 5, 6})
    assert evaluate_relations([more], [gold]).to_dict() == evaluate_relations([pred], [gold]).to_dict()


def test_all_root_predictions_score_zero():
    gold, _ = hand_fixture()
    r = evaluate_relations([Prediction("d", "single-head", set(), {1, 2, 3})], [gold])
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)


def test_perfect_predictions():
    gold, _ = hand_fixture()
    r = evaluate_relations([Prediction("d", "multi-head", gold.link_set())], [gold])
    assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)


def test_missing_document_is_an_error():
    gold, _ = hand_fixture()
    with pytest.raises(KeyError):
        evaluate_relations([], [gold])


pair = st.tuples(st.integers(1, 5), st.integers(1, 5))


@given(st.lists(st.tuples(st.sets(pair, max_size=8), st.sets(pair, max_size=8)), min_size=1, max_size=4))
def test_micro_metrics_match_oracle(docs):
    golds, preds = [], []
    for k, (g, p) in enumerate(docs):
        g = {x for x in g if x[0] != x[1]}
        golds.append(make_doc([[0, 0, 0.1, 0.1]] * 5, sorted(g), doc_id=f"d{k}"))
        preds.append(Prediction(f"d{k}", "multi-head", p))
    r = evaluate_relations(preds, golds)
    P, R, F = micro_prf([d.link_set() for d in golds], [p.links for p in preds])
    assert (r.precision, r.recall) == pytest.approx((P, R), abs=1e-12)
    assert r.f1 == pytest.approx(F, abs=1e-12)
    assert r.correct <= min(r.gold, r.predicted)
    assert 0 <= r.f1 <= 1


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(decoder="tree")
    with pytest.raises(ValueError):
        TrainConfig(gcn_dim=0)
    with pytest.raises(ValueError, match="unknown config keys"):
        TrainConfig.from_dict({"epochs": 3, "batch_size": 2})
    cfg = TrainConfig(seed=3, mtl=True)
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_training_is_deterministic(corpus, trained):
    docs, labels = corpus
    again = train(TrainConfig(seed=1, epochs=4, label_source="gold", **SMALL), docs, labels)
    assert [h["loss"] for h in again.history] == [h["loss"] for h in trained.history]


def test_loss_decreases_over_first_epochs(trained):
    losses = [h["loss"] for h in trained.history]
    assert losses[0] > losses[1] > losses[2]


def test_checkpoint_round_trip_is_bit_exact(tmp_path, corpus, trained):
    docs, _ = corpus
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, trained.model)
    loaded = load_checkpoint(path)
    for doc in docs:
        a = trained.model.forward(trained.model.prepare(doc))[0].values()
        b = loaded.forward(loaded.prepare(doc))[0].values()
        assert np.array_equal(a, b)
    assert loaded.vocab.tokens == trained.model.vocab.tokens
    assert loaded.labels == trained.model.labels


def test_tampered_checkpoint_fails_checksum(tmp_path, trained):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, trained.model)
    raw = bytearray(path.read_bytes())
    raw[-100] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)


def test_checkpoint_version_mismatch_names_versions(tmp_path, trained, monkeypatch):
    import vrd_relex.trainer as tr

    path = tmp_path / "m.ckpt"
    monkeypatch.setattr(tr, "CHECKPOINT_VERSION", 7)
    save_checkpoint(path, trained.model)
    monkeypatch.setattr(tr, "CHECKPOINT_VERSION", 1)
    with pytest.raises(CheckpointError, match="version 7.*version 1"):
        load_checkpoint(path)


def test_not_a_checkpoint(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"hello world" * 10)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_gold_copied_as_auto_matches_gold_configuration(corpus):
    docs, labels = corpus
    as_auto = [replace(d, entities=tuple(replace(e, auto_label=e.gold_label) for e in d.entities)) for d in docs]
    gold = train(TrainConfig(seed=2, epochs=2, label_source="gold", **SMALL), docs, labels)
    auto = train(TrainConfig(seed=2, epochs=2, label_source="auto", **SMALL), as_auto, labels)
    r_gold = evaluate_relations(predict_corpus(gold.model, docs), docs)
    r_auto = evaluate_relations(predict_corpus(auto.model, as_auto), as_auto)
    assert r_gold.f1 == r_auto.f1


def test_auto_labels_are_required_for_auto_source(corpus):
    docs, labels = corpus
    with pytest.raises(ValueError, match="auto labels"):
        train(TrainConfig(seed=0, epochs=1, label_source="auto", **SMALL), docs, labels)


def test_frozen_feature_scorer_stays_zero(corpus):
    docs, labels = corpus
    res = train(TrainConfig(seed=0, epochs=2, label_source="gold", feature_scorer=False, **SMALL), docs, labels)
    assert not res.model.scorer.W_F.data.any() and float(res.model.scorer.b_F.data) == 0.0


def test_non_finite_training_aborts_with_location(corpus):
    docs, labels = corpus
    with pytest.raises(TrainingAborted, match="epoch 1"):
        train(TrainConfig(seed=0, epochs=2, label_source="gold", learning_rate=1e300, **SMALL), docs, labels)


def test_multi_head_gold_caps_single_head_recall():
    # two answers, each linked from both questions: single-head decoding can recover at most half
    doc = make_doc([[0, 0, 0.1, 0.1], [0.2, 0, 0.3, 0.1], [0, 0.2, 0.1, 0.3], [0.2, 0.2, 0.3, 0.3]],
                   [(1, 2), (3, 2), (1, 4), (3, 4)], labels=[3, 1, 3, 1])
    labels = generate(SynthSpec(seed=0, docs=1, pairs=(1, 1)))[1]
    res = train(TrainConfig(seed=0, epochs=2, label_source="gold", **SMALL), [doc], labels)
    r = evaluate_relations(predict_corpus(res.model, [doc]), [doc])
    assert r.gold == 4
    assert r.recall <= 0.5


def test_multi_head_mode_trains_and_predicts(corpus):
    docs, labels = corpus
    res = train(TrainConfig(seed=0, epochs=3, label_source="gold", decoder="multi-head", mtl=True, augment=True, **SMALL), docs, labels, docs)
    assert "dev_f1" in res.history[-1]
    assert all(p.mode == "multi-head" and not p.root_dependents for p in predict_corpus(res.model, docs))


def test_external_vectors_replace_word_table(corpus, tmp_path):
    docs, labels = corpus
    rng = np.random.default_rng(0)
    external = {(d.doc_id, e.id): rng.normal(size=16) for d in docs for e in d.entities}
    res = train(TrainConfig(seed=0, epochs=2, label_source="gold", **SMALL), docs, labels, external=external)
    assert res.model.word_table is None
    assert res.model.entity_dim == 16
    path = tmp_path / "ext.ckpt"
    save_checkpoint(path, res.model)
    loaded = load_checkpoint(path)
    loaded.external = external
    assert [p.links for p in predict_corpus(loaded, docs)] == [p.links for p in predict_corpus(res.model, docs)]
