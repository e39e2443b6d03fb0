import json
import os
import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from vrd_relex.docmodel import BoundingBox, Document, LabelSet, RelationLink, SemanticEntity  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_doc(boxes, links=(), labels=None, words=None, doc_id="d"):
    ents = []
    for k, b in enumerate(boxes):
        ents.append(
            SemanticEntity(
                id=k + 1,
                words=tuple(words[k]) if words else (f"w{k}",),
                box=BoundingBox(*b),
                gold_label=labels[k] if labels else None,
            )
        )
    return Document(doc_id, tuple(ents), tuple(RelationLink(h, d) for h, d in links), 1.0, 1.0)


@pytest.fixture
def qa_labels():
    return LabelSet.from_names(["answer", "other", "question"])


@pytest.fixture
def funsd_file(tmp_path):
    """A small annotation file in the FUNSD layout (pixel boxes)."""
    form = [
        {"id": 0, "text": "Date:", "box": [10, 20, 60, 40], "label": "question",
         "words": [{"text": "Date:", "box": [10, 20, 60, 40]}], "linking": [[0, 1]]},
        {"id": 1, "text": "12/03/98", "box": [70, 20, 150, 40], "label": "answer",
         "words": [{"text": "12/03/98", "box": [70, 20, 150, 40]}], "linking": [[0, 1]]},
        {"id": 2, "text": "", "box": [0, 0, 5, 5], "label": "other", "words": [], "linking": [[2, 1]]},
        {"id": 3, "text": "FORM A", "box": [200, 100, 120, 80], "label": "header",
         "words": [{"text": "FORM", "box": [120, 80, 160, 100]}, {"text": "A", "box": [165, 80, 200, 100]}],
         "linking": []},
    ]
    path = tmp_path / "form_0001.json"
    path.write_text(json.dumps({"form": form}))
    return path
