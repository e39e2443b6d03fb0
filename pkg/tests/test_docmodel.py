import json

import pytest
from conftest import make_doc
from hypothesis import given
from hypothesis import strategies as st

from vrd_relex.docmodel import (
    BoundingBox,
    Document,
    LabelSet,
    ParseError,
    RelationLink,
    SemanticEntity,
    ValidationError,
    corpus_stats,
    document_from_record,
    document_to_record,
    load_corpus,
    load_funsd_dir,
    normalize_document,
    parse_funsd,
    save_corpus,
    validate,
)


def test_label_set_reserves_unknown():
    labels = LabelSet.from_names(["question", "answer"])
    assert labels.names == ["unknown", "answer", "question"]
    assert labels.index("question") == 2
    with pytest.raises(KeyError):
        labels.index("header")


def test_label_set_rejects_duplicates():
    with pytest.raises(ValueError):
        LabelSet(["unknown", "a", "a"])


def test_parse_funsd_normalizes_and_links(funsd_file):
    labels = LabelSet()
    doc = parse_funsd(funsd_file, (200, 100), labels)
    assert [e.id for e in doc.entities] == [0, 1, 3]
    assert doc.link_set() == {(0, 1)}
    assert doc.entities[0].box == BoundingBox(0.05, 0.2, 0.3, 0.4)
    assert doc.entities[2].words == ("FORM", "A")
    assert validate(doc, labels) == []


def test_parse_funsd_reorders_inverted_boxes(funsd_file):
    doc = parse_funsd(funsd_file, (200, 100))
    b = doc.entities[2].box
    assert (b.x1, b.y1, b.x2, b.y2) == (0.6, 0.8, 1.0, 1.0)


def test_parse_funsd_without_page_uses_axis_maxima(funsd_file):
    doc = parse_funsd(funsd_file)
    assert max(e.box.x2 for e in doc.entities) == 1.0
    assert max(e.box.y2 for e in doc.entities) == 1.0


def test_parse_funsd_single_entity(tmp_path):
    p = tmp_path / "one.json"
    p.write_text(json.dumps({"form": [{"id": 4, "text": "x", "box": [1, 1, 2, 2], "label": "other", "linking": []}]}))
    doc = parse_funsd(p)
    assert len(doc) == 1 and doc.links == ()


def test_parse_funsd_reports_missing_link_ids(tmp_path):
    p = tmp_path / "bad.json"
    form = [{"id": 0, "text": "a", "box": [0, 0, 1, 1], "label": "question", "linking": [[0, 7]]}]
    p.write_text(json.dumps({"form": form}))
    with pytest.raises(ValidationError, match="7"):
        parse_funsd(p)


def test_parse_funsd_malformed_json_names_path(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ParseError, match="broken.json"):
        parse_funsd(p)


def test_parse_funsd_deduplicates_links(tmp_path):
    p = tmp_path / "dup.json"
    form = [
        {"id": 0, "text": "a", "box": [0, 0, 1, 1], "label": "question", "linking": [[0, 1]]},
        {"id": 1, "text": "b", "box": [2, 0, 3, 1], "label": "answer", "linking": [[0, 1]]},
    ]
    p.write_text(json.dumps({"form": form}))
    assert parse_funsd(p).link_set() == {(0, 1)}
    assert len(parse_funsd(p).links) == 1


def test_load_funsd_dir_reads_annotations_subdir(tmp_path, funsd_file):
    split = tmp_path / "training_data"
    (split / "annotations").mkdir(parents=True)
    funsd_file.rename(split / "annotations" / funsd_file.name)
    docs, labels = load_funsd_dir(split)
    assert len(docs) == 1
    assert set(labels.names) == {"unknown", "question", "answer", "header"}


def test_validate_well_formed_document_is_clean():
    assert validate(make_doc([[0, 0, 0.1, 0.1], [0.2, 0, 0.3, 0.1]], [(1, 2)])) == []


def test_validate_reports_dangling_link():
    doc = make_doc([[0, 0, 0.1, 0.1]], [(1, 99)])
    assert [str(v) for v in validate(doc)] == ["dangling-link(99)"]


def test_validate_reports_inverted_box():
    doc = make_doc([[0.5, 0, 0.1, 0.1]])
    assert [str(v) for v in validate(doc)] == ["inverted-box(1)"]


def test_validate_reports_duplicates_and_self_links():
    e = SemanticEntity(1, ("a",), BoundingBox(0, 0, 0.1, 0.1))
    doc = Document("d", (e, e), (RelationLink(1, 1), RelationLink(1, 1)))
    codes = {v.code for v in validate(doc)}
    assert codes == {"duplicate-id", "self-link", "duplicate-link"}


def test_corpus_stats_counts_multi_head():
    doc = make_doc([[0, 0, 0.1, 0.1]] * 3, [(1, 2), (3, 2)])
    stats = corpus_stats([doc])
    assert (stats.multi_head, stats.zero_head, stats.links) == (1, 2, 2)


def test_corpus_stats_link_total_is_sum_of_documents():
    docs = [make_doc([[0, 0, 0.1, 0.1]] * 3, [(1, 2)]), make_doc([[0, 0, 0.1, 0.1]] * 3, [(1, 2), (2, 3)])]
    assert corpus_stats(docs).links == sum(len(d.links) for d in docs)


def test_corpus_round_trip(tmp_path, qa_labels):
    doc = make_doc([[0, 0, 0.1, 0.1], [0.2, 0, 0.3, 0.1]], [(1, 2)], labels=[3, 1], words=[["Date:"], ["1", "2"]])
    path = tmp_path / "c.jsonl"
    save_corpus(path, [doc], qa_labels)
    docs, labels = load_corpus(path)
    assert docs == [doc]
    assert labels == qa_labels


def test_record_version_is_checked():
    rec = document_to_record(make_doc([[0, 0, 0.1, 0.1]]))
    rec["format_version"] = 99
    with pytest.raises(ParseError, match="99"):
        document_from_record(rec)


coord = st.floats(0, 1000, allow_nan=False)


@given(st.lists(st.tuples(coord, coord, coord, coord), min_size=1, max_size=6))
def test_normalization_is_idempotent(raw):
    ents = tuple(
        SemanticEntity(k, ("w",), BoundingBox(min(a, c), min(b, d), max(a, c), max(b, d))) for k, (a, b, c, d) in enumerate(raw)
    )
    once = normalize_document(Document("d", ents), (1000.0, 1000.0))
    twice = normalize_document(once, (1.0, 1.0))
    for e1, e2 in zip(once.entities, twice.entities):
        for u, v in zip(e1.box.as_list(), e2.box.as_list()):
            assert abs(u - v) <= 1e-12
    assert all(0 <= v <= 1 for e in once.entities for v in e.box.as_list())


@given(st.lists(st.tuples(st.floats(0, 0.5), st.floats(0, 0.5), st.floats(0, 0.5), st.floats(0, 0.5)), min_size=1, max_size=5),
       st.lists(st.tuples(st.integers(1, 5), st.integers(1, 5)), max_size=6))
def test_serialize_round_trip_property(boxes, pairs):
    n = len(boxes)
    links = sorted({(h, d) for h, d in pairs if h <= n and d <= n and h != d})
    doc = make_doc([[a, b, a + c, b + d] for a, b, c, d in boxes], links)
    assert document_from_record(json.loads(json.dumps(document_to_record(doc)))) == doc
