"""Prompt construction, MFT case generation, structured-output parsing,
paraphrasing, and deduplication.

Generation is few-shot: a one-time LLM call produces a worked example per
polarity, and every representative document is then prompted together with
the same-polarity example. Answers arrive as "Test Case N / Customer
Review" blocks; see templates/mft_block_grammar.md for the accepted
formats.
"""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .corpus import Document
from .llm_gateway import ChatGateway, ChatParams, ChatRequest
from .topics import RepresentativeSet

log = logging.getLogger(__name__)

LABEL_NAMES = {0: "negative", 1: "positive"}
CASE_CAP = 6


class CaseParseError(RuntimeError):
    """The LLM answer yielded no parseable test cases after a retry."""


def load_template(name: str) -> str:
    return resources.files("mftsuite").joinpath("templates", name).read_text("utf-8")


@dataclass
class MftCase:
    """One generated behavioral test case."""

    id: str
    text: str
    summary: str
    inherited_label: int
    source_doc_id: str
    cluster: int
    seed: int
    qc_label: str = "unreviewed"
    paraphrase_of: str | None = None
    mft_topic: int | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id, "text": self.text, "summary": self.summary,
            "inherited_label": self.inherited_label, "qc_label": self.qc_label,
            "source_doc_id": self.source_doc_id, "cluster": self.cluster,
            "seed": self.seed, "paraphrase_of": self.paraphrase_of,
            "mft_topic": self.mft_topic,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MftCase":
        return cls(**obj)


@dataclass
class MftSuite:
    name: str
    cases: list[MftCase]
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.cases)

    def case_ids(self) -> set[str]:
        return {c.id for c in self.cases}


@dataclass
class FewShotExample:
    polarity: int
    prompt_used: str
    rendered_example: str
    parsed_cases: list[tuple[str, str]]


@dataclass
class ParseResult:
    cases: list[tuple[str, str]]
    matched: bool


_HEADER_RE = re.compile(
    r"^test\s*case\s*(\d+)?\s*[:\-–—][*_\s]*(.*)$", re.IGNORECASE)
_REVIEW_RE = re.compile(
    r"^customer\s*review\s*[:\-–—][*_\s]*(.*)$", re.IGNORECASE)
_NUMBERED_RE = re.compile(r"^\s*(\d+)\s*[.)]\s*(.+?)\s*$")


def _strip_decoration(line: str) -> str:
    return line.strip().strip("*_#>`").strip()


def _strip_wrapping(text: str) -> str:
    text = text.strip()
    for left, right in (('"', '"'), ("'", "'"), ("[", "]"),
                        ("“", "”"), ("‘", "’")):
        if len(text) >= 2 and text.startswith(left) and text.endswith(right):
            text = text[1:-1].strip()
    return text


def parse_mft_block(text: str) -> ParseResult:
    """Extract (summary, review) pairs from an LLM answer.

    Never raises: unrecognized input yields an empty list with
    matched=False. Pure and order-preserving.
    """
    lines = text.splitlines()
    pairs: list[tuple[str, str]] = []
    pending_summary: str | None = None
    i = 0
    while i < len(lines):
        clean = _strip_decoration(lines[i])
        header = _HEADER_RE.match(clean)
        if header:
            pending_summary = _strip_wrapping(header.group(2))
            i += 1
            continue
        review = _REVIEW_RE.match(clean)
        if review and pending_summary is not None:
            body = _strip_wrapping(review.group(1))
            if not body:
                j = i + 1
                while j < len(lines):
                    nxt = _strip_decoration(lines[j])
                    if not nxt:
                        j += 1
                        continue
                    if _HEADER_RE.match(nxt) or _REVIEW_RE.match(nxt):
                        break
                    body = _strip_wrapping(nxt)
                    i = j
                    break
            if body and pending_summary:
                pairs.append((pending_summary, body))
            pending_summary = None
        i += 1
    return ParseResult(cases=pairs, matched=bool(pairs))


def render_mft_block(pairs: list[tuple[str, str]]) -> str:
    """Canonical rendering of (summary, review) pairs."""
    blocks = [f"Test Case {i}: {summary}\nCustomer Review: {review}"
              for i, (summary, review) in enumerate(pairs, start=1)]
    return "\n\n".join(blocks)


def render_fewshot_example(doc_text: str, pairs: list[tuple[str, str]]) -> str:
    """The Q/A block inserted into later generation prompts."""
    return (
        "Q: Please extract some minimal functional test samples as customer "
        "reviews in one sentence from the following sample:\n"
        f"{doc_text}\n"
        "A: Sure! Here are the minimum functionality test (MFT) samples as "
        "customer reviews in one sentence for the given sample text:\n\n"
        f"{render_mft_block(pairs)}"
    )


def build_fewshot(polarity: int, doc: Document, gateway: ChatGateway,
                  params: ChatParams, tag: str) -> FewShotExample:
    """One-time creation of the worked example for one polarity."""
    if doc.label != polarity:
        raise ValueError(
            f"few-shot source document label {doc.label} != polarity {polarity}")
    prompt = load_template("fewshot_example.txt").format(input_text=doc.text)
    answer = gateway.chat(ChatRequest(prompt=prompt, model_name=params.model_name,
                                      temperature=params.temperature,
                                      max_tokens=params.max_tokens, tag=tag))
    parsed = parse_mft_block(answer)
    if not parsed.matched:
        answer = gateway.chat(ChatRequest(prompt=prompt, model_name=params.model_name,
                                          temperature=params.temperature,
                                          max_tokens=params.max_tokens,
                                          tag=f"{tag}/retry"))
        parsed = parse_mft_block(answer)
    if not parsed.matched:
        raise CaseParseError(f"unparseable few-shot answer for {tag}")
    return FewShotExample(polarity=polarity, prompt_used=prompt,
                          rendered_example=render_fewshot_example(doc.text, parsed.cases),
                          parsed_cases=parsed.cases)


@dataclass
class GenerationResult:
    cases: list[MftCase]
    llm_calls: int
    retried: bool


def generate_cases(doc: Document, fewshot: FewShotExample, gateway: ChatGateway,
                   params: ChatParams, *, cluster: int, seed: int,
                   split: str = "train", case_cap: int = CASE_CAP,
                   tag: str | None = None) -> GenerationResult:
    """Generate MFT cases for one representative document.

    The few-shot example must share the document's polarity. Between 1 and
    case_cap cases are accepted; surplus cases are truncated, and a fully
    unparseable answer is retried once before raising CaseParseError.
    """
    if fewshot.polarity != doc.label:
        raise ValueError(
            f"few-shot polarity {fewshot.polarity} != document label {doc.label}")
    prompt = load_template("generate_cases.txt").format(
        prompt_example=fewshot.rendered_example, input_text=doc.text)
    tag = tag or f"{split}/seed{seed}/gen/{doc.id}"
    calls = 1
    answer = gateway.chat(ChatRequest(prompt=prompt, model_name=params.model_name,
                                      temperature=params.temperature,
                                      max_tokens=params.max_tokens, tag=tag))
    parsed = parse_mft_block(answer)
    retried = False
    if not parsed.matched:
        retried = True
        calls += 1
        answer = gateway.chat(ChatRequest(prompt=prompt, model_name=params.model_name,
                                          temperature=params.temperature,
                                          max_tokens=params.max_tokens,
                                          tag=f"{tag}/retry"))
        parsed = parse_mft_block(answer)
    if not parsed.matched:
        raise CaseParseError(f"no parseable cases for document {doc.id}")

    pairs = parsed.cases
    if len(pairs) > case_cap:
        log.warning("document %s yielded %d cases, truncating to %d",
                    doc.id, len(pairs), case_cap)
        pairs = pairs[:case_cap]
    cases = [MftCase(id=f"{split}-s{seed}-{doc.id}-c{j}", text=review,
                     summary=summary, inherited_label=doc.label,
                     source_doc_id=doc.id, cluster=cluster, seed=seed)
             for j, (summary, review) in enumerate(pairs, start=1)]
    return GenerationResult(cases=cases, llm_calls=calls, retried=retried)


def parse_numbered_list(text: str) -> list[str]:
    """Items of a numbered list, quotes stripped, order preserved."""
    items = []
    for line in text.splitlines():
        m = _NUMBERED_RE.match(_strip_decoration(line))
        if m:
            item = _strip_wrapping(m.group(2))
            if item:
                items.append(item)
    return items


def paraphrase(case: MftCase, gateway: ChatGateway, params: ChatParams,
               n: int = 5, tag: str | None = None) -> list[MftCase]:
    """Sentiment-preserving rephrasings of one case; each inherits its label.

    Returns what parsed (with a warning if fewer than n). Duplicates of the
    original survive here and are removed by dedup downstream.
    """
    if case.paraphrase_of is not None:
        raise ValueError(f"case {case.id} is itself a paraphrase")
    prompt = load_template("paraphrase.txt").format(n=n, input_text=case.text)
    tag = tag or f"para/{case.id}"
    answer = gateway.chat(ChatRequest(prompt=prompt, model_name=params.model_name,
                                      temperature=params.temperature,
                                      max_tokens=params.max_tokens, tag=tag))
    items = parse_numbered_list(answer)[:n]
    if len(items) < n:
        log.warning("case %s: %d of %d paraphrases parsed", case.id, len(items), n)
    return [MftCase(id=f"{case.id}-p{j}", text=item, summary=case.summary,
                    inherited_label=case.inherited_label,
                    source_doc_id=case.source_doc_id, cluster=case.cluster,
                    seed=case.seed, paraphrase_of=case.id)
            for j, item in enumerate(items, start=1)]


def normalize_case_text(text: str) -> str:
    """Dedup key: casefold, collapse whitespace, strip terminal punctuation."""
    collapsed = " ".join(text.split()).casefold()
    return collapsed.rstrip(" .!?,;:'\"”’")


def dedup(cases: list[MftCase]) -> list[MftCase]:
    """Drop later cases whose normalized text was already seen. Idempotent."""
    seen: set[str] = set()
    kept = []
    for case in cases:
        key = normalize_case_text(case.text)
        if key in seen:
            continue
        seen.add(key)
        kept.append(case)
    return kept


@dataclass
class GenerationLogRow:
    seed: int
    cluster: int
    doc_id: str
    llm_calls: int
    cases_produced: int
    parse_retried: bool
    failed: bool


def run_generation(docs: list[Document],
                   representatives: dict[int, list[RepresentativeSet]],
                   seeds: list[int], gateway: ChatGateway, params: ChatParams,
                   *, split: str = "train", case_cap: int = CASE_CAP,
                   failure_tolerance: float = 0.2,
                   ) -> tuple[list[MftSuite], list[GenerationLogRow]]:
    """Produce one deduplicated suite per seed.

    Per seed, few-shot source documents are re-sampled from the split and
    the seed's own representative sets are walked cluster by cluster in
    rank order. A document whose answer stays unparseable is skipped; the
    run fails only if more than failure_tolerance of documents fail.
    """
    if not seeds:
        raise ValueError("at least one seed required")
    doc_index = {d.id: d for d in docs}
    positives = [d for d in docs if d.label == 1]
    negatives = [d for d in docs if d.label == 0]
    if not positives or not negatives:
        raise ValueError("split must contain both labels for few-shot sampling")

    suites: list[MftSuite] = []
    log_rows: list[GenerationLogRow] = []
    for i, seed in enumerate(seeds, start=1):
        rng = random.Random(seed)
        fewshots = {
            1: build_fewshot(1, rng.choice(positives), gateway, params,
                             tag=f"{split}/seed{seed}/fewshot/positive"),
            0: build_fewshot(0, rng.choice(negatives), gateway, params,
                             tag=f"{split}/seed{seed}/fewshot/negative"),
        }
        cases: list[MftCase] = []
        failed = 0
        total = 0
        for rep_set in sorted(representatives[seed], key=lambda r: r.cluster):
            for doc_id in rep_set.doc_ids:
                doc = doc_index[doc_id]
                total += 1
                try:
                    result = generate_cases(doc, fewshots[doc.label], gateway,
                                            params, cluster=rep_set.cluster,
                                            seed=seed, split=split,
                                            case_cap=case_cap)
                except CaseParseError:
                    failed += 1
                    log_rows.append(GenerationLogRow(
                        seed=seed, cluster=rep_set.cluster, doc_id=doc_id,
                        llm_calls=2, cases_produced=0, parse_retried=True,
                        failed=True))
                    continue
                cases.extend(result.cases)
                log_rows.append(GenerationLogRow(
                    seed=seed, cluster=rep_set.cluster, doc_id=doc_id,
                    llm_calls=result.llm_calls,
                    cases_produced=len(result.cases),
                    parse_retried=result.retried, failed=False))
        if total and failed > failure_tolerance * total:
            raise RuntimeError(
                f"seed {seed}: {failed}/{total} documents failed generation")
        suites.append(MftSuite(name=f"MFT {i}", cases=dedup(cases),
                               provenance={"split": split, "seed": seed,
                                           "seeds": list(seeds)}))
    return suites, log_rows


def save_suite(suite: MftSuite, path: str | Path) -> None:
    import json

    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for case in suite.cases:
            fh.write(json.dumps(case.to_dict(), ensure_ascii=False) + "\n")
    meta = Path(str(path) + ".meta.json")
    meta.write_text(json.dumps({"name": suite.name, "provenance": suite.provenance},
                               ensure_ascii=False, sort_keys=True) + "\n",
                    encoding="utf-8")


def load_suite(path: str | Path, name: str | None = None) -> MftSuite:
    import json

    path = Path(path)
    cases = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                cases.append(MftCase.from_dict(json.loads(line)))
    meta_path = Path(str(path) + ".meta.json")
    provenance: dict = {}
    suite_name = name or path.stem
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        provenance = meta.get("provenance", {})
        suite_name = name or meta.get("name", suite_name)
    return MftSuite(name=suite_name, cases=cases, provenance=provenance)
