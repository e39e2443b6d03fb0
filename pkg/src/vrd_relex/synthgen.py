"""Deterministic synthetic forms with question -> answer links."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .docmodel import BoundingBox, Document, LabelSet, RelationLink, SemanticEntity, check

# "table" puts each answer under its question. The pairwise gap feature then
# reports a horizontal distance equal to a box width for the true pair, so
# table forms are much harder than rows and are left out of the default mix.
LAYOUTS = ("rows", "two-column", "table")

KEY_TEMPLATES = (
    "Date:", "Name:", "Registration No.", "Phone:", "Fax:", "Address:", "City:", "State:", "Zip Code:",
    "Country:", "Company:", "Department:", "Title:", "Signature:", "Email:", "Account No.", "Invoice No.",
    "Order No.", "Reference:", "Subject:", "To:", "From:", "CC:", "Total:", "Amount:", "Quantity:",
    "Unit Price:", "Currency:", "Tax ID:", "Brand:", "Product:", "Description:", "Weight:", "Origin:",
    "Destination:", "Carrier:", "Invoice Date:", "Due Date:", "Approved By:", "Prepared By:",
    "Project No.", "Budget Code:", "Contact Person:", "Telephone No.", "Remarks:", "Status:", "Job No.",
    "Report Type:", "Issue Date:", "Expiry Date:",
)

VALUE_SYLLABLES = ("ka", "lo", "mi", "ne", "ru", "sa", "to", "vi", "ze", "do", "pa", "qu")
DISTRACTOR_TEMPLATES = (
    "CONFIDENTIAL", "Page 1 of 2", "Form A-12", "Please print clearly", "For office use only",
    "Revised 1998", "Attachment", "Notes", "Section B", "See reverse side",
)

# value words are shared by every corpus, so train and test draw from one vocabulary
VOCAB_SEED = 20211
CHAR_WIDTH = 0.011
BOX_HEIGHT = 0.018
# below the smallest question/answer gap, so jittered pairs never overlap
MAX_JITTER = 0.002


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    docs: int = 10
    pairs: tuple[int, int] = (8, 8)
    layouts: tuple[str, ...] = ("rows", "two-column")
    key_vocab: int = 50
    value_vocab: int = 200
    distractor_ratio: float = 0.0
    jitter: float = 0.0
    gap: float = 0.03
    value_noise: float = 0.0

    def __post_init__(self):
        lo, hi = self.pairs
        if not 1 <= lo <= hi:
            raise ValueError(f"pairs range must satisfy 1 <= lo <= hi, got {self.pairs}")
        if not self.layouts or any(style not in LAYOUTS for style in self.layouts):
            raise ValueError(f"layouts must be a non-empty subset of {LAYOUTS}, got {self.layouts}")
        if not 1 <= self.key_vocab <= len(KEY_TEMPLATES):
            raise ValueError(f"key_vocab must be in [1, {len(KEY_TEMPLATES)}]")
        if self.key_vocab < hi:
            raise ValueError("key_vocab must cover the largest number of pairs per document")
        for name in ("distractor_ratio", "jitter", "value_noise"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if not 0.0 < self.gap < 0.2:
            raise ValueError("gap must be in (0, 0.2)")


LABEL_NAMES = ("answer", "other", "question")


def synth_labels() -> LabelSet:
    return LabelSet.from_names(LABEL_NAMES)


def value_vocabulary(size: int, rng: np.random.Generator) -> list[str]:
    words: set[str] = set()
    while len(words) < size:
        k = int(rng.integers(2, 4))
        words.add("".join(rng.choice(VALUE_SYLLABLES, size=k)))
    return sorted(words)


def _width(text: str) -> float:
    return min(0.04 + CHAR_WIDTH * len(text), 0.4)


class _Builder:
    def __init__(self, spec: SynthSpec, rng: np.random.Generator, labels: LabelSet, values: list[str]):
        self.spec, self.rng, self.labels, self.values = spec, rng, labels, values
        self.items: list[tuple[str, tuple[str, ...], list[float]]] = []
        self.pairs: list[tuple[int, int]] = []

    def value_text(self) -> tuple[str, ...]:
        k = int(self.rng.integers(1, 4))
        return tuple(self.rng.choice(self.values, size=k))

    def add(self, label: str, words: tuple[str, ...], box: list[float]) -> int:
        self.items.append((label, words, box))
        return len(self.items) - 1

    def pair(self, key: str, q_box: list[float], a_words, a_box: list[float]) -> None:
        q = self.add("question", tuple(key.split()), q_box)
        a = self.add("answer", a_words, a_box)
        self.pairs.append((q, a))


def _row_pairs(b: _Builder, keys, x0: float, x_max: float, y0: float, step: float) -> float:
    y = y0
    for key in keys:
        words = b.value_text()
        wq, wa = _width(key), _width(" ".join(words))
        g = float(b.rng.uniform(0.005, b.spec.gap))
        q_box = [x0, y, min(x0 + wq, x_max - 0.05), y + BOX_HEIGHT]
        ax1 = q_box[2] + g
        a_box = [ax1, y, min(ax1 + wa, x_max), y + BOX_HEIGHT]
        b.pair(key, q_box, words, a_box)
        y += step
    return y


def _table_pairs(b: _Builder, keys, y0: float, step: float) -> float:
    per_row = 4
    cell = 0.9 / per_row
    y = y0
    for start in range(0, len(keys), per_row):
        for c, key in enumerate(keys[start : start + per_row]):
            x = 0.05 + c * cell
            words = b.value_text()
            g = float(b.rng.uniform(0.005, b.spec.gap))
            q_box = [x, y, x + min(_width(key), cell - 0.01), y + BOX_HEIGHT]
            ay = y + BOX_HEIGHT + g
            a_box = [x, ay, x + min(_width(" ".join(words)), cell - 0.01), ay + BOX_HEIGHT]
            b.pair(key, q_box, words, a_box)
        y += 2 * BOX_HEIGHT + b.spec.gap + step
    return y


def generate_document(spec: SynthSpec, rng: np.random.Generator, labels: LabelSet, values: list[str], doc_id: str) -> Document:
    lo, hi = spec.pairs
    n_pairs = int(rng.integers(lo, hi + 1))
    n_distract = int(round(spec.distractor_ratio * 2 * n_pairs))
    layout = spec.layouts[int(rng.integers(len(spec.layouts)))]
    keys = [KEY_TEMPLATES[i] for i in rng.choice(spec.key_vocab, size=n_pairs, replace=False)]
    b = _Builder(spec, rng, labels, values)

    slots = n_pairs + n_distract + 1
    step = min(0.9 / slots, 0.06)
    y = 0.03
    if layout == "rows":
        y = _row_pairs(b, keys, 0.05, 0.95, y, step)
    elif layout == "two-column":
        half = (n_pairs + 1) // 2
        y_left = _row_pairs(b, keys[:half], 0.05, 0.48, y, step)
        y_right = _row_pairs(b, keys[half:], 0.52, 0.95, y, step)
        y = max(y_left, y_right)
    else:
        y = _table_pairs(b, keys, y, step / 2)

    for _ in range(n_distract):
        if rng.random() < 0.5:
            words = tuple(DISTRACTOR_TEMPLATES[int(rng.integers(len(DISTRACTOR_TEMPLATES)))].split())
        else:
            words = b.value_text()
        x = float(rng.uniform(0.05, 0.5))
        y = min(y, 1.0 - BOX_HEIGHT - 1e-3)
        b.add("other", words, [x, y, min(x + _width(" ".join(words)), 0.99), y + BOX_HEIGHT])
        y += step

    if spec.value_noise > 0:
        # swap some answer texts for distractor-like words so text alone is ambiguous
        for idx, (label, words, box) in enumerate(b.items):
            if label == "answer" and rng.random() < spec.value_noise:
                text = DISTRACTOR_TEMPLATES[int(rng.integers(len(DISTRACTOR_TEMPLATES)))]
                b.items[idx] = (label, tuple(text.split()), box)

    order = rng.permutation(len(b.items))
    new_id = {int(old): k + 1 for k, old in enumerate(order)}
    ents = []
    for old in order:
        label, words, box = b.items[int(old)]
        if spec.jitter > 0:
            box = _jitter(box, spec.jitter * MAX_JITTER, rng)
        ents.append(SemanticEntity(new_id[int(old)], words, BoundingBox(*box), gold_label=labels.index(label)))
    links = tuple(sorted((RelationLink(new_id[q], new_id[a]) for q, a in b.pairs), key=lambda link: link.dependent))
    return check(Document(doc_id, tuple(ents), links, 1.0, 1.0), labels)


def _jitter(box: list[float], scale: float, rng: np.random.Generator) -> list[float]:
    x1, y1, x2, y2 = (v + float(rng.uniform(-scale, scale)) for v in box)
    x1, y1 = max(x1, 0.0), max(y1, 0.0)
    x2, y2 = min(max(x2, x1), 1.0), min(max(y2, y1), 1.0)
    return [x1, y1, x2, y2]


def generate(spec: SynthSpec) -> tuple[list[Document], LabelSet]:
    rng = np.random.default_rng(spec.seed)
    labels = synth_labels()
    values = value_vocabulary(spec.value_vocab, np.random.default_rng(VOCAB_SEED))
    docs = [generate_document(spec, rng, labels, values, f"synth-{spec.seed}-{k:04d}") for k in range(spec.docs)]
    return docs, labels
