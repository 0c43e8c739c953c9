"""LLM-assisted label verification with human triage of flagged cases.

Every generated case is re-labeled by the LLM at temperature 0. Cases
whose LLM label disagrees with the inherited label, or that come back
"hard to decide", are exported to a triage CSV a reviewer can edit in any
spreadsheet tool; applying the edited file removes or relabels cases, with
removals cascading to paraphrases.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass
from pathlib import Path

from .llm_gateway import ChatGateway, ChatParams, ChatRequest
from .mft_gen import MftCase, MftSuite, load_template

log = logging.getLogger(__name__)

LLM_LABELS = ("positive", "negative", "hard")
TRIAGE_ACTIONS = ("keep", "relabel_positive", "relabel_negative", "remove")
PENDING = "pending"

_LABEL_LINE_RE = re.compile(r"label\s*[:\-]\s*(.+)", re.IGNORECASE)
_REASON_LINE_RE = re.compile(r"reason\s*[:\-]\s*(.+)", re.IGNORECASE)


@dataclass
class QcVerdict:
    case_id: str
    llm_label: str
    reason: str
    agrees_with_inherited: bool

    @property
    def flagged(self) -> bool:
        return self.llm_label == "hard" or not self.agrees_with_inherited


@dataclass
class TriageRecord:
    case_id: str
    text: str
    inherited_label: int
    llm_label: str
    reason: str
    proposed_action: str
    human_decision: str


def parse_label_response(text: str) -> tuple[str, str] | None:
    """Extract (label, reason) from an annotator answer, or None."""
    label = None
    reason = ""
    for line in text.splitlines():
        m = _LABEL_LINE_RE.match(line.strip())
        if m and label is None:
            raw = m.group(1).strip().lower()
            if "hard" in raw:
                label = "hard"
            elif "positive" in raw:
                label = "positive"
            elif "negative" in raw:
                label = "negative"
            continue
        m = _REASON_LINE_RE.match(line.strip())
        if m and not reason:
            reason = m.group(1).strip()
    if label is None:
        return None
    return label, reason


def _agrees(llm_label: str, inherited: int) -> bool:
    if llm_label == "hard":
        return False
    return (llm_label == "positive") == (inherited == 1)


def auto_label(case: MftCase, gateway: ChatGateway, params: ChatParams,
               tag: str | None = None) -> QcVerdict:
    """LLM sentiment verdict for one case; unparseable answers become hard."""
    prompt = load_template("label_sentiment.txt").format(input_text=case.text)
    tag = tag or f"qc/{case.id}"
    answer = gateway.chat(ChatRequest(prompt=prompt, model_name=params.model_name,
                                      temperature=params.temperature,
                                      max_tokens=params.max_tokens, tag=tag))
    parsed = parse_label_response(answer)
    if parsed is None:
        answer = gateway.chat(ChatRequest(prompt=prompt, model_name=params.model_name,
                                          temperature=params.temperature,
                                          max_tokens=params.max_tokens,
                                          tag=f"{tag}/retry"))
        parsed = parse_label_response(answer)
    if parsed is None:
        return QcVerdict(case_id=case.id, llm_label="hard", reason="parse failure",
                         agrees_with_inherited=False)
    label, reason = parsed
    return QcVerdict(case_id=case.id, llm_label=label, reason=reason,
                     agrees_with_inherited=_agrees(label, case.inherited_label))


def auto_label_suite(suite: MftSuite, gateway: ChatGateway,
                     params: ChatParams) -> list[QcVerdict]:
    """Label all cases, calls running in parallel through the gateway pool."""
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=gateway.config.concurrency) as pool:
        return list(pool.map(lambda c: auto_label(c, gateway, params), suite.cases))


TRIAGE_COLUMNS = ("case_id", "text", "inherited_label", "llm_label", "reason",
                  "proposed_action", "human_decision")


def triage_export(suite: MftSuite, verdicts: list[QcVerdict],
                  path: str | Path) -> int:
    """Write flagged cases to a triage CSV; returns the row count.

    Hard cases propose removal; disagreements propose relabeling to the LLM
    label. human_decision is prefilled with the proposal so an unedited
    file applies the defaults; reviewers change rows they disagree with.
    """
    by_id = {c.id: c for c in suite.cases}
    missing = [v.case_id for v in verdicts if v.case_id not in by_id]
    if missing:
        raise ValueError(f"verdicts reference unknown cases: {missing[:5]}")
    covered = {v.case_id for v in verdicts}
    uncovered = [c.id for c in suite.cases if c.id not in covered]
    if uncovered:
        raise ValueError(f"verdicts do not cover cases: {uncovered[:5]}")

    rows = []
    for verdict in verdicts:
        if not verdict.flagged:
            continue
        case = by_id[verdict.case_id]
        if verdict.llm_label == "hard":
            action = "remove"
        else:
            action = f"relabel_{verdict.llm_label}"
        rows.append(TriageRecord(
            case_id=case.id, text=case.text, inherited_label=case.inherited_label,
            llm_label=verdict.llm_label, reason=verdict.reason,
            proposed_action=action, human_decision=action))

    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRIAGE_COLUMNS)
        for r in rows:
            writer.writerow([r.case_id, r.text, r.inherited_label, r.llm_label,
                             r.reason, r.proposed_action, r.human_decision])
    return len(rows)


def load_triage(path: str | Path) -> list[TriageRecord]:
    path = Path(path)
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            records.append(TriageRecord(
                case_id=row["case_id"], text=row.get("text", ""),
                inherited_label=int(row["inherited_label"]),
                llm_label=row["llm_label"], reason=row.get("reason", ""),
                proposed_action=row["proposed_action"],
                human_decision=row["human_decision"].strip()))
    return records


def apply_triage(suite: MftSuite, triage_path: str | Path) -> MftSuite:
    """Apply a reviewed triage file; see apply_triage_records."""
    return apply_triage_records(suite, load_triage(triage_path))


def apply_triage_records(suite: MftSuite,
                         records: list[TriageRecord]) -> MftSuite:
    """Apply reviewed triage decisions; all-or-nothing and idempotent.

    Removals cascade to the case's paraphrases. Relabels flip the inherited
    label and stamp qc_label. Every case untouched by triage gets
    qc_label = its inherited label name. Remove rows whose case is already
    absent are treated as applied; other rows referencing unknown cases are
    errors.
    """
    pending = [r.case_id for r in records if r.human_decision in ("", PENDING)]
    if pending:
        raise ValueError(f"pending triage decisions for: {pending[:5]}")
    bad = [r.case_id for r in records if r.human_decision not in TRIAGE_ACTIONS]
    if bad:
        raise ValueError(f"unknown triage action for: {bad[:5]}")

    by_id = {c.id: c for c in suite.cases}
    for r in records:
        if r.case_id not in by_id and r.human_decision != "remove":
            raise ValueError(f"unknown case_id in triage file: {r.case_id}")

    remove_ids: set[str] = set()
    relabels: dict[str, int] = {}
    for r in records:
        if r.human_decision == "remove":
            remove_ids.add(r.case_id)
        elif r.human_decision == "relabel_positive":
            relabels[r.case_id] = 1
        elif r.human_decision == "relabel_negative":
            relabels[r.case_id] = 0
    # Cascade removals to paraphrases of removed parents.
    for case in suite.cases:
        if case.paraphrase_of is not None and case.paraphrase_of in remove_ids:
            remove_ids.add(case.id)

    from dataclasses import replace

    kept: list[MftCase] = []
    for case in suite.cases:
        if case.id in remove_ids:
            continue
        if case.id in relabels:
            new_label = relabels[case.id]
            kept.append(replace(case, inherited_label=new_label,
                                qc_label="positive" if new_label == 1 else "negative"))
        else:
            kept.append(replace(
                case, qc_label="positive" if case.inherited_label == 1 else "negative"))
    return MftSuite(name=suite.name, cases=kept, provenance=dict(suite.provenance))


def qc_summary(verdicts: list[QcVerdict]) -> dict:
    """Counts of agreements, disagreements, and hard verdicts."""
    agree = sum(1 for v in verdicts if v.agrees_with_inherited)
    hard = sum(1 for v in verdicts if v.llm_label == "hard")
    disagree = len(verdicts) - agree - hard
    return {"total": len(verdicts), "agree": agree,
            "disagree": disagree, "hard": hard}
