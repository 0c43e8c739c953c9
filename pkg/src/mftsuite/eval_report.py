"""Scoring of downstream-model predictions per suite variant and per topic,
cross-seed stability, and report rendering (Markdown, CSV, SVG figures)."""

from __future__ import annotations

import csv
import json
import logging
import statistics
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP
from fractions import Fraction
from pathlib import Path

from .geometry import ReducedMatrix
from .mft_gen import MftSuite
from .suite import MftTopicModel, SuiteVariantSet, variant_slug

log = logging.getLogger(__name__)


@dataclass
class PredictionRecord:
    case_id: str
    predicted_label: int
    score: float | None = None


@dataclass
class Cell:
    """One accuracy cell: exact correct/total ratio."""

    correct: int
    total: int

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.correct, self.total)

    @property
    def pct(self) -> str:
        return percent(self.correct, self.total)


@dataclass
class EvalReport:
    model_name: str
    variants: dict[str, Cell] = field(default_factory=dict)
    topics: dict[str, Cell] = field(default_factory=dict)
    per_seed_pct: dict[str, float] = field(default_factory=dict)
    stability_pct: float | None = None

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "variants": {k: [c.correct, c.total] for k, c in self.variants.items()},
            "topics": {k: [c.correct, c.total] for k, c in self.topics.items()},
            "per_seed_pct": self.per_seed_pct,
            "stability_pct": self.stability_pct,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        return cls(
            model_name=obj["model_name"],
            variants={k: Cell(*v) for k, v in obj["variants"].items()},
            topics={k: Cell(*v) for k, v in obj["topics"].items()},
            per_seed_pct=dict(obj.get("per_seed_pct", {})),
            stability_pct=obj.get("stability_pct"),
        )


def percent(correct: int, total: int) -> str:
    """Exact ratio rendered as a percent with 2 decimals, half-up."""
    if total <= 0:
        raise ValueError("total must be positive")
    value = (Decimal(correct) * 100 / Decimal(total)).quantize(
        Decimal("0.01"), rounding=ROUND_HALF_UP)
    return f"{value}"


def stability(per_seed_accuracies: list[float]) -> float:
    """Sample (n-1) standard deviation of per-seed accuracy scores."""
    if len(per_seed_accuracies) < 2:
        raise ValueError("stability needs at least 2 values")
    return statistics.stdev(per_seed_accuracies)


def ingest_predictions(source: str | Path, suite: MftSuite, *,
                       allow_partial: bool = False,
                       http_batch_size: int = 64,
                       timeout: float = 60.0) -> list[PredictionRecord]:
    """Load one prediction per suite case from a CSV file or predict endpoint.

    CSV columns: case_id, predicted_label[, score]. HTTP mode posts
    {"texts": [...]} batches and maps the returned {"labels": [...]} back by
    position. Unknown ids error; incomplete coverage errors unless
    allow_partial.
    """
    if isinstance(source, str) and source.startswith(("http://", "https://")):
        records = _predict_http(source, suite, http_batch_size, timeout)
    else:
        records = _read_predictions_csv(Path(source), suite)

    covered = {r.case_id for r in records}
    missing = [c.id for c in suite.cases if c.id not in covered]
    if missing and not allow_partial:
        raise ValueError(
            f"predictions missing for {len(missing)} case(s): {missing[:5]}")
    return records


def _read_predictions_csv(path: Path, suite: MftSuite) -> list[PredictionRecord]:
    known = suite.case_ids()
    records = []
    seen: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "case_id" not in reader.fieldnames \
                or "predicted_label" not in reader.fieldnames:
            raise ValueError(f"predictions file needs case_id,predicted_label: {path}")
        for row in reader:
            case_id = row["case_id"]
            if case_id not in known:
                raise ValueError(f"unknown case_id in predictions: {case_id}")
            if case_id in seen:
                raise ValueError(f"duplicate prediction for case: {case_id}")
            seen.add(case_id)
            label = int(row["predicted_label"])
            if label not in (0, 1):
                raise ValueError(f"predicted_label out of domain for {case_id}: {label}")
            score = float(row["score"]) if row.get("score") not in (None, "") else None
            records.append(PredictionRecord(case_id=case_id, predicted_label=label,
                                            score=score))
    return records


def _predict_http(url: str, suite: MftSuite, batch_size: int,
                  timeout: float) -> list[PredictionRecord]:
    import requests

    records = []
    cases = suite.cases
    for start in range(0, len(cases), batch_size):
        batch = cases[start:start + batch_size]
        resp = requests.post(url, json={"texts": [c.text for c in batch]},
                             timeout=timeout)
        resp.raise_for_status()
        labels = resp.json()["labels"]
        if len(labels) != len(batch):
            raise ValueError(
                f"endpoint returned {len(labels)} labels for {len(batch)} texts")
        for case, label in zip(batch, labels):
            records.append(PredictionRecord(case_id=case.id,
                                            predicted_label=int(label)))
    return records


def _score_cases(cases, predictions: list[PredictionRecord]) -> Cell:
    truth = {c.id: c.inherited_label for c in cases}
    missing = [i for i in truth if i not in {p.case_id for p in predictions}]
    if missing:
        raise ValueError(f"predictions do not cover cases: {missing[:5]}")
    correct = sum(1 for p in predictions
                  if p.case_id in truth and p.predicted_label == truth[p.case_id])
    return Cell(correct=correct, total=len(truth))


def score(variant_set: SuiteVariantSet,
          predictions: dict[str, list[PredictionRecord]],
          topic_model: MftTopicModel | None = None,
          model_name: str = "model") -> EvalReport:
    """Accuracy per provided variant, per MFT topic on the Original suite,
    and cross-seed stability.

    The case-count-weighted mean of per-topic accuracies is checked against
    the Original accuracy as an exact rational identity.
    """
    report = EvalReport(model_name=model_name)
    suites = variant_set.variants()
    for slug, suite in suites.items():
        if slug not in predictions:
            continue
        report.variants[slug] = _score_cases(suite.cases, predictions[slug])

    seed_slugs = [variant_slug(s.name) for s in variant_set.seed_suites]
    for slug in seed_slugs:
        if slug in report.variants:
            cell = report.variants[slug]
            report.per_seed_pct[slug] = 100.0 * cell.correct / cell.total
    if len(report.per_seed_pct) >= 2:
        report.stability_pct = stability(list(report.per_seed_pct.values()))

    if topic_model is not None and "original" in predictions:
        original = variant_set.original
        preds = {p.case_id: p for p in predictions["original"]}
        by_topic: dict[int, list] = {}
        for case in original.cases:
            topic = topic_model.assignments.get(case.id)
            if topic is None:
                raise ValueError(f"case not covered by topic model: {case.id}")
            by_topic.setdefault(topic, []).append(case)
        for topic in sorted(by_topic):
            cases = by_topic[topic]
            name = topic_model.topic_names[topic] \
                if topic < len(topic_model.topic_names) else str(topic)
            report.topics[name] = _score_cases(
                cases, [preds[c.id] for c in cases])
        _check_weighted_mean(report.topics, report.variants["original"])
    return report


def _check_weighted_mean(topics: dict[str, Cell], overall: Cell) -> None:
    total = sum(c.total for c in topics.values())
    weighted = sum((Fraction(c.total, total) * c.fraction for c in topics.values()),
                   Fraction(0))
    if weighted != overall.fraction or total != overall.total:
        raise AssertionError(
            f"per-topic accuracies do not reconcile with overall: "
            f"{weighted} != {overall.fraction}")


VARIANT_DISPLAY = {
    "original": "MFT (Original)",
    "extended": "MFT (Extended)",
}


def _display_name(slug: str, split: str) -> str:
    base = VARIANT_DISPLAY.get(slug)
    if base is None and slug.startswith("mft"):
        base = f"MFT {slug[3:]}"
    prefix = split.capitalize()
    return f"{prefix} {base}" if base else f"{prefix} {slug}"


def render(report: EvalReport, out_dir: str | Path, *,
           split: str = "train",
           suite: MftSuite | None = None,
           coords: ReducedMatrix | None = None,
           topic_model: MftTopicModel | None = None) -> list[Path]:
    """Write the Markdown report, per-table CSVs, and SVG scatter figures.

    Figures need 2-D coordinates plus the suite; they color cases by label
    and, when a topic model is given, by MFT topic.
    """
    if not report.variants:
        raise ValueError("nothing to render: report has no scored variants")
    if suite is not None and not suite.cases:
        raise ValueError("nothing to render: empty suite")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    variant_csv = out_dir / "variant_accuracy.csv"
    with variant_csv.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "cases", "correct", "accuracy_pct"])
        for slug, cell in report.variants.items():
            writer.writerow([_display_name(slug, split), cell.total,
                             cell.correct, cell.pct])
    written.append(variant_csv)

    if report.topics:
        topic_csv = out_dir / "topic_accuracy.csv"
        with topic_csv.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["topic", "cases", "correct", "accuracy_pct"])
            for name, cell in report.topics.items():
                writer.writerow([name, cell.total, cell.correct, cell.pct])
        written.append(topic_csv)

    md = out_dir / f"report_{report.model_name}.md"
    md.write_text(_render_markdown(report, split), encoding="utf-8")
    written.append(md)

    if coords is not None and suite is not None:
        written.extend(_render_figures(suite, coords, topic_model, out_dir))
    return written


def _render_markdown(report: EvalReport, split: str) -> str:
    lines = [f"# MFT evaluation report: {report.model_name}", ""]
    lines += ["## Accuracy per suite variant", "",
              "| Variant | Cases | Correct | Accuracy |",
              "| --- | ---: | ---: | ---: |"]
    for slug, cell in report.variants.items():
        lines.append(f"| {_display_name(slug, split)} | {cell.total} "
                     f"| {cell.correct} | {cell.pct}% |")
    lines.append("")
    if report.stability_pct is not None:
        lines.append(f"Stability across seed suites: {report.stability_pct:.2f} "
                     "(sample standard deviation of per-seed accuracy, "
                     "n-1 denominator).")
        lines.append("")
    if report.topics:
        lines += ["## Accuracy per MFT topic", "",
                  "| Topic | Cases | Correct | Accuracy |",
                  "| --- | ---: | ---: | ---: |"]
        for name, cell in report.topics.items():
            lines.append(f"| {name} | {cell.total} | {cell.correct} "
                         f"| {cell.pct}% |")
        lines.append("")
    return "\n".join(lines) + "\n"


def _render_figures(suite: MftSuite, coords: ReducedMatrix,
                    topic_model: MftTopicModel | None,
                    out_dir: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "mftsuite"
    if coords.r < 2:
        raise ValueError("figures need 2-D coordinates")
    pos = {i: k for k, i in enumerate(coords.ids)}
    missing = [c.id for c in suite.cases if c.id not in pos]
    if missing:
        raise ValueError(f"coordinates missing for cases: {missing[:5]}")

    written = []
    label_groups: dict[str, list[str]] = {}
    for case in suite.cases:
        name = "positive" if case.inherited_label == 1 else "negative"
        label_groups.setdefault(name, []).append(case.id)
    written.append(_scatter(label_groups, coords, pos,
                            out_dir / "mft_cases_by_label.svg",
                            "MFT cases by label"))

    if topic_model is not None:
        topic_groups: dict[str, list[str]] = {}
        for case in suite.cases:
            topic = topic_model.assignments[case.id]
            name = topic_model.topic_names[topic] \
                if topic < len(topic_model.topic_names) else str(topic)
            topic_groups.setdefault(name, []).append(case.id)
        written.append(_scatter(topic_groups, coords, pos,
                                out_dir / "mft_cases_by_topic.svg",
                                "MFT cases by topic"))
    return written


def _scatter(groups: dict[str, list[str]], coords: ReducedMatrix,
             pos: dict[str, int], path: Path, title: str) -> Path:
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 5))
    for name in sorted(groups):
        rows = [pos[i] for i in groups[name]]
        ax.scatter(coords.coords[rows, 0], coords.coords[rows, 1],
                   s=14, alpha=0.75, label=name)
    ax.set_title(title)
    ax.set_xlabel("c1")
    ax.set_ylabel("c2")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def save_report_json(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True)
                          + "\n", encoding="utf-8")


def load_report_json(path: str | Path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
