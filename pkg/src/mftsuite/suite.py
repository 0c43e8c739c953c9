"""Suite variant assembly and second-layer topic assignment for MFT cases.

The Original variant is the deduplicated union of the per-seed suites; the
Extended variant adds every paraphrase of an Original case and deduplicates
again with the same normalization, so paraphrases colliding with originals
(or each other) are dropped.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .embedding import EmbeddingMatrix
from .geometry import ClusterModel, kmeans, reduce as reduce_matrix
from .mft_gen import MftCase, MftSuite, dedup
from .topics import TokenizerConfig, class_term_stats, ctfidf, make_topic_name

log = logging.getLogger(__name__)


@dataclass
class SuiteVariantSet:
    split: str
    seed_suites: list[MftSuite]
    original: MftSuite
    extended: MftSuite

    def size_table(self) -> list[tuple[str, int]]:
        rows = [(s.name, len(s)) for s in self.seed_suites]
        rows.append((self.original.name, len(self.original)))
        rows.append((self.extended.name, len(self.extended)))
        return rows

    def variants(self) -> dict[str, MftSuite]:
        out = {variant_slug(s.name): s for s in self.seed_suites}
        out["original"] = self.original
        out["extended"] = self.extended
        return out


def variant_slug(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch.isalnum())


def build_original(seed_suites: list[MftSuite], split: str) -> MftSuite:
    if not seed_suites:
        raise ValueError("at least one seed suite required")
    merged: list[MftCase] = []
    for s in seed_suites:
        merged.extend(s.cases)
    return MftSuite(name="MFT (Original)", cases=dedup(merged),
                    provenance={"split": split,
                                "seeds": [s.provenance.get("seed") for s in seed_suites]})


def assemble_variants(seed_suites: list[MftSuite], paraphrases: list[MftCase],
                      split: str) -> SuiteVariantSet:
    """Build Original and Extended from per-seed suites and paraphrases.

    Every paraphrase must reference a case present in Original (removed
    parents should already have cascaded during QC).
    """
    original = build_original(seed_suites, split)
    original_ids = original.case_ids()
    orphans = [p.id for p in paraphrases
               if p.paraphrase_of is None or p.paraphrase_of not in original_ids]
    if orphans:
        raise ValueError(
            f"paraphrases referencing cases absent from the original suite: {orphans[:5]}")
    extended = MftSuite(name="MFT (Extended)",
                        cases=dedup(list(original.cases) + list(paraphrases)),
                        provenance=dict(original.provenance))
    return SuiteVariantSet(split=split, seed_suites=list(seed_suites),
                           original=original, extended=extended)


@dataclass
class MftTopicModel:
    k: int
    assignments: dict[str, int]
    topic_names: list[str] = field(default_factory=list)


def cluster_mft_topics(suite: MftSuite, embeddings: EmbeddingMatrix,
                       k: int = 4, seed: int = 0, reduce_dims: int = 5,
                       tokenizer: TokenizerConfig = TokenizerConfig(),
                       ) -> MftTopicModel:
    """Second-layer topic clustering on case embeddings.

    Reuses the reduction + k-means path of the corpus clustering and names
    each topic from the top weighted terms of the case texts it groups.
    Assignments are written back onto the cases' mft_topic field.
    """
    if k > len(suite.cases):
        raise ValueError(f"k={k} exceeds suite size {len(suite.cases)}")
    missing = [c.id for c in suite.cases if c.id not in set(embeddings.ids)]
    if missing:
        raise ValueError(f"embeddings missing for cases: {missing[:5]}")
    matrix = embeddings.take([c.id for c in suite.cases])
    dims = min(reduce_dims, matrix.dim, max(len(matrix) - 1, 1))
    reduced = reduce_matrix(matrix, dims, method="pca", seed=seed)
    model = kmeans(reduced, k, seed)

    # Name topics from the grouped case texts.
    from .corpus import Document
    from datetime import date

    pseudo_docs = [Document(id=c.id, text=c.text, label=c.inherited_label,
                            category="", date=date(1970, 1, 1))
                   for c in suite.cases]
    stats = class_term_stats(pseudo_docs, model, tokenizer)
    names = []
    for sig in ctfidf(stats):
        ranked = sorted(sig.weights.items(), key=lambda kv: (-kv[1], kv[0]))
        names.append(make_topic_name(sig.cluster, [t for t, _ in ranked]))

    for case in suite.cases:
        case.mft_topic = model.assignments[case.id]
    return MftTopicModel(k=k, assignments=dict(model.assignments),
                         topic_names=names)


def manual_grouping(suite: MftSuite, rules_path: str | Path) -> MftTopicModel:
    """Rule-based grouping: ordered (keyword, group) rows, first match wins.

    Matching is case-insensitive substring on the case text; cases matching
    no rule fall into the trailing "other" group.
    """
    rules = _load_rules(rules_path)
    if not rules:
        raise ValueError(f"empty rules file: {rules_path}")
    group_names: list[str] = []
    for _, group in rules:
        if group not in group_names:
            group_names.append(group)
    group_names.append("other")
    index = {g: i for i, g in enumerate(group_names)}

    assignments: dict[str, int] = {}
    for case in suite.cases:
        text = case.text.lower()
        group = "other"
        for keyword, g in rules:
            if keyword.lower() in text:
                group = g
                break
        assignments[case.id] = index[group]
        case.mft_topic = index[group]
    return MftTopicModel(k=len(group_names), assignments=assignments,
                         topic_names=group_names)


def _load_rules(path: str | Path) -> list[tuple[str, str]]:
    path = Path(path)
    rules = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or not row[0].strip():
                continue
            if row[0].strip().lower() == "keyword":
                continue
            if len(row) < 2:
                raise ValueError(f"rule row needs keyword and group: {row}")
            rules.append((row[0].strip(), row[1].strip()))
    return rules


def save_size_table(variant_set: SuiteVariantSet, path: str | Path,
                    pre_qc_sizes: dict[str, int] | None = None) -> None:
    """Size table CSV: one row per variant, optionally with pre-QC counts."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if pre_qc_sizes:
            writer.writerow(["dataset", "size_pre_qc", "size"])
            for name, size in variant_set.size_table():
                writer.writerow([name, pre_qc_sizes.get(name, ""), size])
        else:
            writer.writerow(["dataset", "size"])
            for name, size in variant_set.size_table():
                writer.writerow([name, size])
