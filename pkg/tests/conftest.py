"""Shared fixtures: scripted mock provider servers and corpus builders."""

from __future__ import annotations

import hashlib
import json
import threading
import time
from datetime import date, timedelta
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from mftsuite.corpus import Document, LabeledCorpus


def hash_unit_vector(text: str, dim: int = 16) -> list[float]:
    """Deterministic pseudo-embedding derived from the text content."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
    v = rng.standard_normal(dim)
    return (v / np.linalg.norm(v)).tolist()


CATEGORY_KEYWORDS = ("book", "song", "game", "movie", "lego")


def keyword_embed_fn(dim: int = 16, scale: float = 8.0):
    """Embedding function that places texts near a per-keyword anchor.

    Texts containing one of the five category keywords cluster tightly
    around that keyword's axis; everything else is hash noise.
    """

    def embed(text: str) -> list[float]:
        noise = np.asarray(hash_unit_vector(text, dim))
        lowered = text.lower()
        for i, kw in enumerate(CATEGORY_KEYWORDS):
            if kw in lowered:
                base = np.zeros(dim)
                base[i] = scale
                return (base + noise).tolist()
        return noise.tolist()

    return embed


class ScriptedServer:
    """Mock OpenAI-compatible provider for embeddings and chat completions.

    Chat responses are scripted per request tag (the request's "user"
    field): a plain string answers every call, a list is consumed step by
    step where an int step responds with that HTTP status and a str step
    answers 200. A chat_fn fallback computes answers for unscripted tags.
    """

    def __init__(self, embed_fn=None, chat_fn=None, delay: float = 0.0):
        self.embed_fn = embed_fn or hash_unit_vector
        self.chat_fn = chat_fn
        self.delay = delay
        self.chat_script: dict[str, object] = {}
        self.requests: list[tuple[str, dict]] = []
        self.embed_calls = 0
        self.chat_calls = 0
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()

        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with server._lock:
                    server.requests.append((self.path, body))
                    server.in_flight += 1
                    server.max_in_flight = max(server.max_in_flight,
                                               server.in_flight)
                try:
                    if server.delay:
                        time.sleep(server.delay)
                    if self.path.endswith("/embeddings"):
                        status, payload = server._handle_embeddings(body)
                    elif self.path.endswith("/chat/completions"):
                        status, payload = server._handle_chat(body)
                    else:
                        status, payload = 404, {"error": "unknown path"}
                finally:
                    with server._lock:
                        server.in_flight -= 1
                raw = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        daemon=True)
        self._thread.start()

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def _handle_embeddings(self, body: dict):
        with self._lock:
            self.embed_calls += 1
        texts = body.get("input", [])
        data = [{"object": "embedding", "index": i, "embedding": self.embed_fn(t)}
                for i, t in enumerate(texts)]
        return 200, {"object": "list", "data": data,
                     "model": body.get("model", "")}

    def _handle_chat(self, body: dict):
        with self._lock:
            self.chat_calls += 1
        tag = body.get("user", "")
        script = self.chat_script.get(tag)
        if isinstance(script, list):
            step = script.pop(0) if script else 500
            if isinstance(step, int):
                return step, {"error": {"message": f"scripted status {step}"}}
            text = step
        elif isinstance(script, str):
            text = script
        elif self.chat_fn is not None:
            text = self.chat_fn(tag, body)
        else:
            text = ""
        return 200, {
            "id": "mock",
            "object": "chat.completion",
            "choices": [{"index": 0, "finish_reason": "stop",
                         "message": {"role": "assistant", "content": text}}],
        }


@pytest.fixture
def mock_server():
    server = ScriptedServer()
    yield server
    server.stop()


# ---------------------------------------------------------------------------
# End-to-end scripted plan: deterministic chat answers keyed by request tag.
#
# Documents are named "<keyword>-<index>" with label = index % 2. The plan:
#   index % 10 == 0  -> 4th generated case is a constant text per
#                       (keyword, label), planting dedup collisions
#   index % 10 == 3  -> 1st case says "mixed feelings" (QC: hard, removed)
#   index % 10 == 7  -> 2nd case uses the opposite sentiment word
#                       (QC disagreement, relabeled at triage)
# ---------------------------------------------------------------------------

import re as _re


def sentiment_word(label: int) -> str:
    return "delightful" if label else "disappointing"


def scripted_case_pairs(doc_id: str, seed: int) -> list[tuple[str, str]]:
    kw, idx_str = doc_id.rsplit("-", 1)
    idx = int(idx_str)
    label = idx % 2
    word = sentiment_word(label)
    if idx % 10 == 3:
        first = f"The {kw} from {doc_id} gives mixed feelings in way 1 (s{seed})"
    else:
        first = f"The {kw} from {doc_id} feels {word} in way 1 (s{seed})"
    second_word = sentiment_word(1 - label) if idx % 10 == 7 else word
    second = f"The {kw} from {doc_id} feels {second_word} in way 2 (s{seed})"
    third = f"The {kw} from {doc_id} feels {word} in way 3 (s{seed})"
    if idx % 10 == 0:
        fourth = f"Classic {kw} {word} pick"
    else:
        fourth = f"The {kw} from {doc_id} feels {word} in way 4 (s{seed})"
    return [(f"Aspect {j}", f"{text}.") for j, text in
            enumerate((first, second, third, fourth), start=1)]


def scripted_paraphrases(text: str, n: int = 5) -> list[str]:
    """Variant n collides with the original by plan."""
    return [f"{text} (variant {v})" for v in range(1, n)] + [text]


def render_pairs(pairs) -> str:
    return "\n\n".join(f"Test Case {j}: {s}\nCustomer Review: {r}"
                       for j, (s, r) in enumerate(pairs, start=1))


def e2e_chat_fn(tag: str, body: dict) -> str:
    prompt = body["messages"][0]["content"]
    if "/fewshot/" in tag:
        polarity = tag.rsplit("/", 1)[-1]
        word = "delightful" if polarity == "positive" else "disappointing"
        pairs = [(f"Sample {j}", f"A {word} worked example sentence number {j}.")
                 for j in range(1, 5)]
        return render_pairs(pairs)
    if "/gen/" in tag:
        seed = int(tag.split("/")[1].removeprefix("seed"))
        doc_id = tag.split("/gen/")[-1].removesuffix("/retry")
        return render_pairs(scripted_case_pairs(doc_id, seed))
    if tag.startswith("qc/"):
        if "mixed feelings" in prompt:
            return "Label: Hard to Decide\nReason: both sentiments present"
        if "disappointing" in prompt:
            return "Label: Negative\nReason: negative wording"
        return "Label: Positive\nReason: positive wording"
    if "/para/" in tag:
        m = _re.search(r"same sentiment: (.*?) by filling", prompt, _re.DOTALL)
        text = m.group(1).strip()
        items = scripted_paraphrases(text)
        return "\n".join(f'{v}. "{t}"' for v, t in enumerate(items, start=1))
    raise AssertionError(f"unscripted tag: {tag}")


def write_reviews_csv(path, n_per_category: int = 40,
                      start: date = date(2010, 1, 1)) -> None:
    """Raw five-category review CSV in the default column layout."""
    import csv

    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["review_id", "review_headline", "review_body",
                         "star_rating", "product_category", "review_date"])
        adjectives_pos = ("great", "wonderful", "fantastic", "lovely")
        adjectives_neg = ("awful", "terrible", "boring", "broken")
        for kw in CATEGORY_KEYWORDS:
            for i in range(n_per_category):
                label = i % 2
                adj = (adjectives_pos if label else adjectives_neg)[i % 4]
                when = start + timedelta(days=(i * 7) % 1500)
                writer.writerow([
                    f"{kw}-{i}", f"{adj} {kw} number {i}",
                    f"This {kw} is {adj}, honestly a {adj} {kw} "
                    f"experience number {i}",
                    5 if label else 1, kw.capitalize(), when.isoformat()])


def write_pipeline_config(path, *, corpus, workdir, cache_dir, transcript,
                          embed_url, chat_url, mode,
                          predictions_dir=None, **param_overrides) -> None:
    import yaml

    params = {"split": "train", "corpus_k": 5, "mft_k": 4, "lambda": 0.5,
              "pool_size": 500, "n_representatives": 10, "seeds": [1, 2, 3],
              "paraphrase_n": 5, "reduce_dims": 5, "balance_seed": 13}
    params.update(param_overrides)
    config = {
        "paths": {"corpus": str(corpus), "corpus_format": "csv",
                  "workdir": str(workdir), "cache_dir": str(cache_dir),
                  "transcript": str(transcript)},
        "embedding": {"base_url": embed_url, "model": "test-embed",
                      "batch_size": 32, "timeout": 10, "max_retries": 3},
        "chat": {"base_url": chat_url, "model": "mock-chat", "timeout": 10,
                 "max_retries": 3, "concurrency": 4},
        "params": params,
        "mode": mode,
    }
    if predictions_dir is not None:
        config["paths"]["predictions_dir"] = str(predictions_dir)
    path.write_text(yaml.safe_dump(config), encoding="utf-8")


def make_corpus(n_per_category: int = 40, start: date = date(2010, 1, 1)) -> LabeledCorpus:
    """Synthetic labeled corpus with five keyword-separable categories."""
    adjectives_pos = ("great", "wonderful", "fantastic", "lovely")
    adjectives_neg = ("awful", "terrible", "boring", "broken")
    docs = []
    for c, kw in enumerate(CATEGORY_KEYWORDS):
        for i in range(n_per_category):
            label = i % 2
            adj = (adjectives_pos if label else adjectives_neg)[i % 4]
            text = (f"This {kw} is {adj}, honestly a {adj} {kw} "
                    f"experience number {i}")
            docs.append(Document(
                id=f"{kw}-{i}", text=text, label=label,
                category=kw.capitalize(),
                date=start + timedelta(days=(i * 7) % 1500), split="train"))
    return LabeledCorpus(documents=docs)
