"""Corpus ingestion, relabeling, class balancing, and date-based splitting.

Raw review rows (headline, body, star rating, category, date) become a
balanced binary-labeled corpus: 1-2 stars map to negative, 4-5 stars to
positive, 3-star rows are dropped, and the majority class is down-sampled
to the minority count. Splits are assigned purely by date.
"""

from __future__ import annotations

import html
import json
import logging
import random
from dataclasses import dataclass, replace
from datetime import date, datetime
from pathlib import Path

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")

# Column names of the Kaggle Amazon US reviews dump; override via column_map.
DEFAULT_COLUMN_MAP = {
    "id": "review_id",
    "headline": "review_headline",
    "body": "review_body",
    "stars": "star_rating",
    "category": "product_category",
    "date": "review_date",
}

_DATE_FORMATS = ("%Y-%m-%d", "%m/%d/%Y")


@dataclass
class RawRecord:
    """One parsed input row, before relabeling."""

    id: str
    headline: str
    body: str
    stars: int
    category: str
    date: date


@dataclass
class RawCorpus:
    records: list[RawRecord]
    skipped: int = 0


@dataclass
class Document:
    """One labeled corpus record. label: 1 = positive, 0 = negative."""

    id: str
    text: str
    label: int
    category: str
    date: date
    split: str | None = None


@dataclass
class LabeledCorpus:
    documents: list[Document]

    def __len__(self) -> int:
        return len(self.documents)

    def class_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {0: 0, 1: 0}
        for doc in self.documents:
            counts[doc.label] = counts.get(doc.label, 0) + 1
        return counts

    def by_split(self, split: str) -> list[Document]:
        return [d for d in self.documents if d.split == split]

    def validate(self, balance_slack: float = 0.05) -> None:
        """Check id uniqueness, label domain, and class balance within slack."""
        seen: set[str] = set()
        for doc in self.documents:
            if doc.id in seen:
                raise ValueError(f"duplicate document id: {doc.id}")
            seen.add(doc.id)
            if doc.label not in (0, 1):
                raise ValueError(f"label out of domain for {doc.id}: {doc.label}")
            if not doc.text:
                raise ValueError(f"empty text for {doc.id}")
        counts = self.class_counts()
        total = len(self.documents)
        if total and abs(counts.get(1, 0) - counts.get(0, 0)) > balance_slack * total:
            raise ValueError(
                f"class imbalance beyond slack: {counts.get(1, 0)} positive "
                f"vs {counts.get(0, 0)} negative"
            )


@dataclass(frozen=True)
class SplitSpec:
    """Date boundaries: <= train_end is train, <= validation_end is validation."""

    train_end: date
    validation_end: date

    def __post_init__(self) -> None:
        if self.train_end >= self.validation_end:
            raise ValueError("train_end must precede validation_end")


def _parse_date(value: str) -> date | None:
    value = value.strip()
    for fmt in _DATE_FORMATS:
        try:
            return datetime.strptime(value, fmt).date()
        except ValueError:
            continue
    return None


def _parse_stars(value) -> int | None:
    try:
        stars = int(str(value).strip())
    except (TypeError, ValueError):
        return None
    return stars if 1 <= stars <= 5 else None


def ingest(path: str | Path, format: str = "csv",
           column_map: dict[str, str] | None = None) -> RawCorpus:
    """Read raw review rows from a CSV/TSV/JSON-Lines file.

    Rows with an unparseable star rating or date are counted and skipped.
    Raises on a missing file, a missing mapped column, or zero parseable rows.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    if format not in ("csv", "tsv", "jsonl"):
        raise ValueError(f"unsupported format: {format}")
    cols = dict(DEFAULT_COLUMN_MAP)
    if column_map:
        cols.update(column_map)

    if format == "jsonl":
        rows = _read_jsonl_rows(path)
    else:
        rows = _read_delimited_rows(path, "\t" if format == "tsv" else ",")

    required = ("headline", "body", "stars", "category", "date")
    records: list[RawRecord] = []
    skipped = 0
    seen_ids: dict[str, int] = {}
    first_row = True
    for row_no, row in enumerate(rows, start=1):
        if first_row:
            missing = [cols[f] for f in required if cols[f] not in row]
            if missing:
                raise ValueError(f"missing mapped column(s): {', '.join(missing)}")
            first_row = False
        stars = _parse_stars(row.get(cols["stars"]))
        parsed_date = _parse_date(str(row.get(cols["date"], "")))
        if stars is None or parsed_date is None:
            skipped += 1
            continue
        raw_id = str(row.get(cols["id"]) or "").strip() or f"r{row_no:06d}"
        if raw_id in seen_ids:
            seen_ids[raw_id] += 1
            raw_id = f"{raw_id}#{seen_ids[raw_id]}"
        else:
            seen_ids[raw_id] = 1
        records.append(RawRecord(
            id=raw_id,
            headline=str(row.get(cols["headline"]) or ""),
            body=str(row.get(cols["body"]) or ""),
            stars=stars,
            category=str(row.get(cols["category"]) or ""),
            date=parsed_date,
        ))
    if not records:
        raise ValueError("empty corpus: no parseable rows")
    if skipped:
        log.info("ingest: skipped %d unparseable rows", skipped)
    return RawCorpus(records=records, skipped=skipped)


def _read_delimited_rows(path: Path, delimiter: str):
    import csv

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise ValueError("empty corpus: no header row")
        yield from reader


def _read_jsonl_rows(path: Path):
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def preprocess(raw: RawCorpus, balance_seed: int, balance: bool = True) -> LabeledCorpus:
    """Relabel stars to binary labels, join headline and body, and balance.

    1-2 stars -> 0, 4-5 stars -> 1, 3-star records are dropped. Text is the
    HTML-unescaped headline and body joined by a single space. The majority
    class is down-sampled uniformly without replacement (seeded) to match
    the minority count exactly; surviving documents keep their input order.
    """
    docs: list[Document] = []
    for rec in raw.records:
        if rec.stars == 3:
            continue
        label = 0 if rec.stars <= 2 else 1
        text = f"{html.unescape(rec.headline)} {html.unescape(rec.body)}".strip()
        if not text:
            continue
        docs.append(Document(id=rec.id, text=text, label=label,
                             category=rec.category, date=rec.date))
    if not docs:
        raise ValueError("empty corpus after preprocessing (no 1-2 or 4-5 star records)")

    if balance:
        by_label = {0: [], 1: []}
        for i, doc in enumerate(docs):
            by_label[doc.label].append(i)
        n0, n1 = len(by_label[0]), len(by_label[1])
        if n0 != n1 and n0 and n1:
            majority = 0 if n0 > n1 else 1
            target = min(n0, n1)
            rng = random.Random(balance_seed)
            kept = set(rng.sample(by_label[majority], target))
            docs = [d for i, d in enumerate(docs)
                    if d.label != majority or i in kept]
    return LabeledCorpus(documents=docs)


def split_by_date(corpus: LabeledCorpus, spec: SplitSpec) -> LabeledCorpus:
    """Assign each document a split by its date; the partition is total."""
    assigned = []
    for doc in corpus.documents:
        if doc.date <= spec.train_end:
            split = "train"
        elif doc.date <= spec.validation_end:
            split = "validation"
        else:
            split = "test"
        assigned.append(replace(doc, split=split))
    return LabeledCorpus(documents=assigned)


def save_jsonl(corpus: LabeledCorpus, path: str | Path) -> None:
    """Write the canonical corpus file: one document object per line."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for doc in corpus.documents:
            fh.write(json.dumps({
                "id": doc.id,
                "text": doc.text,
                "label": doc.label,
                "category": doc.category,
                "date": doc.date.isoformat(),
                "split": doc.split,
            }, ensure_ascii=False) + "\n")


def load_jsonl(path: str | Path) -> LabeledCorpus:
    path = Path(path)
    docs = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            docs.append(Document(
                id=obj["id"],
                text=obj["text"],
                label=int(obj["label"]),
                category=obj.get("category", ""),
                date=date.fromisoformat(obj["date"]),
                split=obj.get("split"),
            ))
    return LabeledCorpus(documents=docs)
