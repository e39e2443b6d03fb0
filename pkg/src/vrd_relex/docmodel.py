"""Document data model, FUNSD ingestion and the canonical corpus format."""

from __future__ import annotations

import json
import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
UNKNOWN_LABEL = "unknown"


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_list(cls, xs: Sequence[float]) -> "BoundingBox":
        x1, y1, x2, y2 = (float(v) for v in xs)
        return cls(x1, y1, x2, y2)


@dataclass(frozen=True)
class SemanticEntity:
    id: int
    words: tuple[str, ...]
    box: BoundingBox
    gold_label: int | None = None
    auto_label: int | None = None

    @property
    def text(self) -> str:
        return " ".join(self.words).strip()


@dataclass(frozen=True)
class RelationLink:
    head: int
    dependent: int


@dataclass(frozen=True)
class Document:
    doc_id: str
    entities: tuple[SemanticEntity, ...]
    links: tuple[RelationLink, ...] = ()
    page_width: float = 1.0
    page_height: float = 1.0
    has_pseudo_root: bool = False

    def __len__(self) -> int:
        return len(self.entities)

    def entity_ids(self) -> list[int]:
        return [e.id for e in self.entities]

    def position(self) -> dict[int, int]:
        """Entity id -> position in ``entities``."""
        return {e.id: k for k, e in enumerate(self.entities)}

    def link_set(self) -> set[tuple[int, int]]:
        return {(link.head, link.dependent) for link in self.links}


@dataclass
class LabelSet:
    """Ordered label names; index 0 is always ``unknown``."""

    names: list[str] = field(default_factory=lambda: [UNKNOWN_LABEL])

    def __post_init__(self):
        if not self.names or self.names[0] != UNKNOWN_LABEL:
            self.names = [UNKNOWN_LABEL] + [n for n in self.names if n != UNKNOWN_LABEL]
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate label names: {self.names}")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown label {name!r}") from None

    def add(self, name: str) -> int:
        if name not in self.names:
            self.names.append(name)
        return self.names.index(name)

    def name(self, idx: int) -> str:
        return self.names[idx]

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "LabelSet":
        return cls([UNKNOWN_LABEL] + sorted(set(names) - {UNKNOWN_LABEL}))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    ids: tuple

    def __str__(self) -> str:
        return f"{self.code}({', '.join(map(str, self.ids))})"


def validate(doc: Document, labels: LabelSet | None = None) -> list[Violation]:
    out: list[Violation] = []
    seen: set[int] = set()
    for e in doc.entities:
        if e.id in seen:
            out.append(Violation("duplicate-id", (e.id,)))
        seen.add(e.id)
        b = e.box
        vals = b.as_list()
        if not all(math.isfinite(v) for v in vals):
            out.append(Violation("non-finite-box", (e.id,)))
            continue
        if b.x1 > b.x2 or b.y1 > b.y2:
            out.append(Violation("inverted-box", (e.id,)))
        if any(v < 0.0 or v > 1.0 for v in vals):
            out.append(Violation("box-out-of-range", (e.id,)))
        if not e.words:
            out.append(Violation("empty-entity", (e.id,)))
        if labels is not None:
            for lab in (e.gold_label, e.auto_label):
                if lab is not None and not 0 <= lab < len(labels):
                    out.append(Violation("unknown-label", (e.id, lab)))
    pairs: set[tuple[int, int]] = set()
    for link in doc.links:
        for end in (link.head, link.dependent):
            if end not in seen:
                out.append(Violation("dangling-link", (end,)))
        if link.head == link.dependent:
            out.append(Violation("self-link", (link.head,)))
        key = (link.head, link.dependent)
        if key in pairs:
            out.append(Violation("duplicate-link", key))
        pairs.add(key)
    return out


def check(doc: Document, labels: LabelSet | None = None) -> Document:
    problems = validate(doc, labels)
    if problems:
        raise ValidationError(f"{doc.doc_id}: " + "; ".join(map(str, problems)))
    return doc


# ---------------------------------------------------------------------------
# normalisation and FUNSD ingestion
# ---------------------------------------------------------------------------


def normalize_document(doc: Document, page_dims: tuple[float, float] | None = None) -> Document:
    """Scale boxes into [0, 1] by page size, or by the per-axis maxima."""
    if page_dims is not None:
        w, h = (float(v) for v in page_dims)
    else:
        w = max((e.box.x2 for e in doc.entities), default=1.0)
        h = max((e.box.y2 for e in doc.entities), default=1.0)
    w = w if w > 0 else 1.0
    h = h if h > 0 else 1.0

    def scale(b: BoundingBox) -> BoundingBox:
        return BoundingBox(
            min(max(b.x1 / w, 0.0), 1.0),
            min(max(b.y1 / h, 0.0), 1.0),
            min(max(b.x2 / w, 0.0), 1.0),
            min(max(b.y2 / h, 0.0), 1.0),
        )

    ents = tuple(replace(e, box=scale(e.box)) for e in doc.entities)
    return replace(doc, entities=ents, page_width=doc.page_width, page_height=doc.page_height)


def _ordered_box(xs) -> BoundingBox:
    x1, y1, x2, y2 = (float(v) for v in xs)
    return BoundingBox(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))


def _funsd_words(item: dict) -> tuple[str, ...]:
    words = tuple(w.get("text", "").strip() for w in item.get("words") or [])
    words = tuple(w for w in words if w)
    if not words:
        words = tuple(item.get("text", "").split())
    return words


def parse_funsd(
    path: str | os.PathLike,
    page_dims: tuple[float, float] | None = None,
    labels: LabelSet | None = None,
) -> Document:
    """Read one FUNSD annotation file.

    Label names are registered in ``labels`` as they are met (a fresh
    set is used when none is passed). Entities with blank text are dropped
    together with their links.
    """
    path = Path(path)
    labels = labels if labels is not None else LabelSet()
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        form = raw["form"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed FUNSD annotation ({exc})") from exc

    entities = []
    dropped = set()
    pairs: list[tuple[int, int]] = []
    for item in form:
        eid = int(item["id"])
        for pair in item.get("linking") or []:
            pairs.append((int(pair[0]), int(pair[1])))
        if not item.get("text", "").strip():
            dropped.add(eid)
            continue
        label = item.get("label")
        entities.append(
            SemanticEntity(
                id=eid,
                words=_funsd_words(item),
                box=_ordered_box(item["box"]),
                gold_label=labels.add(label) if label else None,
            )
        )
    if dropped:
        log.info("%s: dropped %d empty entities %s", path.name, len(dropped), sorted(dropped))

    known = {e.id for e in entities}
    links: list[RelationLink] = []
    seen = set()
    for head, dep in pairs:
        if head in dropped or dep in dropped:
            continue
        if head not in known or dep not in known:
            missing = sorted({head, dep} - known)
            raise ValidationError(f"{path}: link ({head}, {dep}) references missing ids {missing}")
        if (head, dep) in seen:
            continue
        seen.add((head, dep))
        links.append(RelationLink(head, dep))

    pw, ph = page_dims if page_dims is not None else (
        max((e.box.x2 for e in entities), default=1.0),
        max((e.box.y2 for e in entities), default=1.0),
    )
    doc = Document(path.stem, tuple(entities), tuple(links), float(pw), float(ph))
    return normalize_document(doc, page_dims)


def load_funsd_dir(
    directory: str | os.PathLike,
    page_dims: tuple[float, float] | None = None,
    labels: LabelSet | None = None,
) -> tuple[list[Document], LabelSet]:
    """Parse every ``*.json`` under ``directory`` (or its ``annotations/``)."""
    directory = Path(directory)
    if (directory / "annotations").is_dir():
        directory = directory / "annotations"
    files = sorted(directory.glob("*.json"))
    if not files:
        raise FileNotFoundError(f"no FUNSD annotation files under {directory}")
    labels = labels if labels is not None else LabelSet()
    docs = [parse_funsd(f, page_dims, labels) for f in files]
    return docs, labels


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


@dataclass
class CorpusStats:
    documents: int
    entities: int
    links: int
    multi_head: int
    zero_head: int
    label_histogram: dict[str, int]

    def line(self) -> str:
        return (
            f"docs={self.documents} entities={self.entities} links={self.links} "
            f"multi_head={self.multi_head} zero_head={self.zero_head}"
        )


def head_counts(doc: Document) -> Counter:
    return Counter(link.dependent for link in doc.links)


def corpus_stats(docs: Sequence[Document], labels: LabelSet | None = None) -> CorpusStats:
    multi = zero = n_ent = n_links = 0
    hist: Counter = Counter()
    for doc in docs:
        heads = head_counts(doc)
        n_ent += len(doc.entities)
        n_links += len(doc.links)
        for e in doc.entities:
            k = heads.get(e.id, 0)
            multi += k >= 2
            zero += k == 0
            name = "none" if e.gold_label is None else (labels.name(e.gold_label) if labels else str(e.gold_label))
            hist[name] += 1
    return CorpusStats(len(docs), n_ent, n_links, multi, zero, dict(sorted(hist.items())))


# ---------------------------------------------------------------------------
# canonical corpus JSON (one record per line)
# ---------------------------------------------------------------------------


def document_to_record(doc: Document) -> dict:
    return {
        "doc_id": doc.doc_id,
        "page": {"w": doc.page_width, "h": doc.page_height},
        "entities": [
            {
                "id": e.id,
                "words": list(e.words),
                "box": e.box.as_list(),
                "gold_label": e.gold_label,
                "auto_label": e.auto_label,
            }
            for e in doc.entities
        ],
        "links": [[link.head, link.dependent] for link in doc.links],
        "format_version": FORMAT_VERSION,
    }


def document_from_record(rec: dict) -> Document:
    version = rec.get("format_version")
    if version != FORMAT_VERSION:
        raise ParseError(f"corpus record format_version {version!r}, expected {FORMAT_VERSION}")
    ents = tuple(
        SemanticEntity(
            id=int(e["id"]),
            words=tuple(e["words"]),
            box=BoundingBox.from_list(e["box"]),
            gold_label=e.get("gold_label"),
            auto_label=e.get("auto_label"),
        )
        for e in rec["entities"]
    )
    links = tuple(RelationLink(int(h), int(d)) for h, d in rec["links"])
    return Document(rec["doc_id"], ents, links, float(rec["page"]["w"]), float(rec["page"]["h"]))


def save_corpus(path: str | os.PathLike, docs: Sequence[Document], labels: LabelSet) -> None:
    """Write a corpus: a header line with the label set, then one document per line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"labels": labels.names, "format_version": FORMAT_VERSION}) + "\n")
        for doc in docs:
            fh.write(json.dumps(document_to_record(doc), ensure_ascii=False) + "\n")


def load_corpus(path: str | os.PathLike) -> tuple[list[Document], LabelSet]:
    docs = []
    labels = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            if "labels" in rec and "doc_id" not in rec:
                labels = LabelSet(list(rec["labels"]))
                continue
            docs.append(document_from_record(rec))
    if labels is None:
        raise ParseError(f"{path}: missing label header line")
    return docs, labels
