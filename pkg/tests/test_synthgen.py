import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrd_relex.docmodel import corpus_stats, validate
from vrd_relex.featurize import edge_features
from vrd_relex.synthgen import LAYOUTS, SynthSpec, generate


def test_construction_arithmetic():
    docs, labels = generate(SynthSpec(seed=0, docs=10, pairs=(8, 8)))
    s = corpus_stats(docs, labels)
    assert (s.documents, s.links) == (10, 80)
    assert s.entities >= 160


def test_without_distractors_every_entity_is_linked_once():
    docs, _ = generate(SynthSpec(seed=1, docs=5, pairs=(3, 6)))
    for d in docs:
        ends = [x for link in d.links for x in (link.head, link.dependent)]
        assert sorted(ends) == sorted(d.entity_ids())


def test_same_seed_same_corpus():
    spec = SynthSpec(seed=5, docs=4, distractor_ratio=0.3, jitter=0.5, value_noise=0.2)
    assert generate(spec) == generate(spec)
    assert generate(spec)[0] != generate(SynthSpec(seed=6, docs=4, distractor_ratio=0.3))[0]


def test_distractor_count():
    docs, labels = generate(SynthSpec(seed=2, docs=3, pairs=(8, 8), distractor_ratio=0.2))
    other = labels.index("other")
    for d in docs:
        assert sum(e.gold_label == other for e in d.entities) == round(0.2 * 16)
        assert all(e.id not in {x for link in d.links for x in (link.head, link.dependent)} for e in d.entities if e.gold_label == other)


def test_links_point_from_question_to_answer():
    docs, labels = generate(SynthSpec(seed=3, docs=4, layouts=LAYOUTS))
    for d in docs:
        lab = {e.id: labels.name(e.gold_label) for e in d.entities}
        assert all((lab[link.head], lab[link.dependent]) == ("question", "answer") for link in d.links)


@pytest.mark.parametrize("bad", [dict(pairs=(0, 3)), dict(pairs=(5, 2)), dict(layouts=("spiral",)), dict(distractor_ratio=1.5), dict(key_vocab=3)])
def test_invalid_specs(bad):
    with pytest.raises(ValueError):
        SynthSpec(**bad)


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.sampled_from([("rows",), ("two-column",), ("table",), LAYOUTS]), st.floats(0, 1), st.floats(0, 1))
def test_generated_corpora_validate_and_pairs_stay_close(seed, layouts, distract, jitter):
    spec = SynthSpec(seed=seed, docs=2, pairs=(2, 9), layouts=layouts, distractor_ratio=distract, jitter=jitter)
    docs, labels = generate(spec)
    for d in docs:
        assert validate(d, labels) == []
        boxes = {e.id: e.box for e in d.entities}
        for link in d.links:
            q, a = boxes[link.head], boxes[link.dependent]
            overlap_x = min(q.x2, a.x2) - max(q.x1, a.x1)
            overlap_y = min(q.y2, a.y2) - max(q.y1, a.y1)
            assert overlap_x <= 0 or overlap_y <= 0
            # the separating gap is bounded by the layout gap parameter (plus jitter slack)
            assert min(edge_features(q, a)) <= spec.gap + 2 * 0.002 * jitter + 1e-12
