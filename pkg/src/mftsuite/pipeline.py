"""Pipeline stages over on-disk artifacts.

Each stage reads the previous stage's files from the working directory and
writes its own, so any stage can be rerun in isolation. Stages are
content-addressed: a stamp records the config-slice hash and input hashes,
and an unchanged stage is skipped as a no-op.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import embedding as emb_mod
from . import eval_report as eval_mod
from . import geometry as geo_mod
from . import mft_gen
from . import qc as qc_mod
from . import suite as suite_mod
from . import topics as topics_mod
from .config import PipelineConfig
from .llm_gateway import ChatGateway, ChatParams, GatewayConfig

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A stage cannot run: missing upstream artifact or bad state."""


class Artifacts:
    """Well-known artifact paths inside the working directory."""

    def __init__(self, workdir: str | Path, split: str):
        self.workdir = Path(workdir)
        self.split = split

    @property
    def corpus(self) -> Path:
        return self.workdir / "corpus.jsonl"

    @property
    def embeddings(self) -> Path:
        return self.workdir / f"embeddings_{self.split}.emb"

    @property
    def reduced(self) -> Path:
        return self.workdir / f"reduced_{self.split}.csv"

    @property
    def coords2d(self) -> Path:
        return self.workdir / f"coords2d_{self.split}.csv"

    @property
    def clusters(self) -> Path:
        return self.workdir / f"clusters_{self.split}.json"

    @property
    def cluster_stats(self) -> Path:
        return self.workdir / f"cluster_stats_{self.split}.json"

    @property
    def signatures_csv(self) -> Path:
        return self.workdir / f"signatures_{self.split}.csv"

    @property
    def signatures(self) -> Path:
        return self.workdir / f"signatures_{self.split}.json"

    def representatives(self, seed: int, cluster: int | None = None) -> Path:
        suffix = f"_cluster{cluster}" if cluster is not None else ""
        return self.workdir / f"representatives_{self.split}_seed{seed}{suffix}.jsonl"

    def seed_suite(self, seed: int, qc: bool = False) -> Path:
        suffix = "_qc" if qc else ""
        return self.workdir / f"mft_{self.split}_seed{seed}{suffix}.jsonl"

    @property
    def generation_log(self) -> Path:
        return self.workdir / f"generation_log_{self.split}.csv"

    @property
    def qc_verdicts(self) -> Path:
        return self.workdir / f"qc_verdicts_{self.split}.jsonl"

    @property
    def qc_summary(self) -> Path:
        return self.workdir / f"qc_summary_{self.split}.json"

    @property
    def triage(self) -> Path:
        return self.workdir / f"triage_{self.split}.csv"

    @property
    def original(self) -> Path:
        return self.workdir / f"mft_{self.split}_original.jsonl"

    @property
    def extended(self) -> Path:
        return self.workdir / f"mft_{self.split}_extended.jsonl"

    @property
    def paraphrases(self) -> Path:
        return self.workdir / f"paraphrases_{self.split}.jsonl"

    @property
    def sizes(self) -> Path:
        return self.workdir / f"sizes_{self.split}.csv"

    @property
    def mft_topics(self) -> Path:
        return self.workdir / f"mft_topics_{self.split}.json"

    @property
    def mft_embeddings(self) -> Path:
        return self.workdir / f"embeddings_mft_{self.split}.emb"

    @property
    def mft_coords2d(self) -> Path:
        return self.workdir / f"coords2d_mft_{self.split}.csv"

    def eval_json(self, model_name: str) -> Path:
        return self.workdir / f"eval_{self.split}_{model_name}.json"

    @property
    def report_dir(self) -> Path:
        return self.workdir / "report"

    @property
    def stamps_dir(self) -> Path:
        return self.workdir / ".stamps"


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise StageError(f"missing upstream artifact {path.name} "
                         f"(run the {produced_by!r} stage first)")
    return path


def _file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage_stamp(art: Artifacts, stage: str) -> Path:
    art.stamps_dir.mkdir(parents=True, exist_ok=True)
    return art.stamps_dir / f"{stage}_{art.split}.json"


def stage_is_current(art: Artifacts, stage: str, config_hash: str,
                     inputs: list[Path], outputs: list[Path]) -> bool:
    stamp = _stage_stamp(art, stage)
    if not stamp.exists() or not all(p.exists() for p in outputs):
        return False
    try:
        data = json.loads(stamp.read_text(encoding="utf-8"))
    except ValueError:
        return False
    if data.get("config_hash") != config_hash:
        return False
    recorded = data.get("inputs", {})
    current = {p.name: _file_hash(p) for p in inputs if p.exists()}
    return recorded == current and set(data.get("outputs", [])) == \
        {p.name for p in outputs}


def mark_stage(art: Artifacts, stage: str, config_hash: str,
               inputs: list[Path], outputs: list[Path]) -> None:
    stamp = _stage_stamp(art, stage)
    stamp.write_text(json.dumps({
        "config_hash": config_hash,
        "inputs": {p.name: _file_hash(p) for p in inputs},
        "outputs": sorted(p.name for p in outputs),
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@contextmanager
def pipeline_lock(workdir: str | Path):
    """One pipeline invocation at a time per output directory."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    lock = workdir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StageError(
            f"output directory is locked by another invocation ({lock}); "
            "remove the lock file if that run is dead") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _embedding_client(cfg: PipelineConfig) -> emb_mod.EmbeddingClient:
    provider = emb_mod.ProviderConfig(
        base_url=cfg.embedding.base_url, model_name=cfg.embedding.model,
        batch_size=cfg.embedding.batch_size, timeout=cfg.embedding.timeout,
        max_retries=cfg.embedding.max_retries,
        api_key_env=cfg.embedding.api_key_env,
        concurrency=cfg.embedding.concurrency)
    cache = emb_mod.EmbeddingCache(cfg.paths.cache_dir)
    return emb_mod.EmbeddingClient(provider, cache)


def _gateway(cfg: PipelineConfig) -> ChatGateway:
    return ChatGateway(GatewayConfig(
        base_url=cfg.chat.base_url, api_key_env=cfg.chat.api_key_env,
        timeout=cfg.chat.timeout, concurrency=cfg.chat.concurrency,
        mode=cfg.mode, transcript_path=cfg.paths.transcript))


def _gen_params(cfg: PipelineConfig) -> ChatParams:
    return ChatParams(model_name=cfg.chat.model,
                      temperature=cfg.chat.gen_temperature,
                      max_tokens=cfg.chat.max_tokens)


def _qc_params(cfg: PipelineConfig) -> ChatParams:
    return ChatParams(model_name=cfg.chat.model,
                      temperature=cfg.chat.qc_temperature,
                      max_tokens=cfg.chat.max_tokens)


def _tokenizer(cfg: PipelineConfig) -> topics_mod.TokenizerConfig:
    return topics_mod.TokenizerConfig(stopwords=frozenset(cfg.params.stopwords))


def _art(cfg: PipelineConfig) -> Artifacts:
    return Artifacts(cfg.paths.workdir, cfg.params.split)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def run_ingest(cfg: PipelineConfig, force: bool = False) -> dict:
    art = _art(cfg)
    art.workdir.mkdir(parents=True, exist_ok=True)
    source = Path(cfg.paths.corpus)
    config_hash = cfg.section_hash("params") + cfg.paths.corpus_format
    inputs = [source] if source.exists() else []
    outputs = [art.corpus]
    if not force and stage_is_current(art, "ingest", config_hash, inputs, outputs):
        return {"stage": "ingest", "skipped": True}

    raw = corpus_mod.ingest(source, cfg.paths.corpus_format,
                            cfg.paths.column_map or None)
    prepped = corpus_mod.preprocess(raw, cfg.params.balance_seed,
                                    balance=cfg.params.balance)
    spec = corpus_mod.SplitSpec(cfg.params.train_end, cfg.params.validation_end)
    final = corpus_mod.split_by_date(prepped, spec)
    corpus_mod.save_jsonl(final, art.corpus)
    mark_stage(art, "ingest", config_hash, inputs, outputs)
    counts = final.class_counts()
    return {"stage": "ingest", "documents": len(final), "skipped_rows": raw.skipped,
            "positive": counts.get(1, 0), "negative": counts.get(0, 0),
            "splits": {s: len(final.by_split(s)) for s in corpus_mod.SPLITS}}


def run_embed(cfg: PipelineConfig, force: bool = False) -> dict:
    art = _art(cfg)
    _require(art.corpus, "ingest")
    config_hash = cfg.section_hash("params", "embedding")
    inputs = [art.corpus]
    outputs = [art.embeddings]
    if not force and stage_is_current(art, "embed", config_hash, inputs, outputs):
        return {"stage": "embed", "skipped": True}

    docs = corpus_mod.load_jsonl(art.corpus).by_split(cfg.params.split)
    if not docs:
        raise StageError(f"no documents in split {cfg.params.split!r}")
    client = _embedding_client(cfg)
    matrix = client.embed([d.text for d in docs], ids=[d.id for d in docs])
    emb_mod.save_matrix(matrix, art.embeddings)
    mark_stage(art, "embed", config_hash, inputs, outputs)
    return {"stage": "embed", "rows": len(matrix), "dim": matrix.dim,
            "remote_calls": client.remote_calls}


def _load_split_embeddings(cfg: PipelineConfig, art: Artifacts) -> emb_mod.EmbeddingMatrix:
    matrix = emb_mod.load_matrix(_require(art.embeddings, "embed"))
    if cfg.embedding.normalize:
        matrix = emb_mod.normalize(matrix)
    return matrix


def run_cluster(cfg: PipelineConfig, force: bool = False) -> dict:
    art = _art(cfg)
    _require(art.corpus, "ingest")
    config_hash = cfg.section_hash("params", "embedding")
    inputs = [art.corpus, art.embeddings]
    outputs = [art.reduced, art.coords2d, art.clusters, art.cluster_stats]
    if not force and stage_is_current(art, "cluster", config_hash, inputs, outputs):
        return {"stage": "cluster", "skipped": True}

    matrix = _load_split_embeddings(cfg, art)
    seed = cfg.params.seeds[0]
    reduced = geo_mod.reduce(matrix, cfg.params.reduce_dims,
                             method=cfg.params.reduction, seed=seed,
                             source=cfg.paths.external_coords)
    geo_mod.export_coords(reduced, art.reduced)
    if reduced.r >= cfg.params.plot_dims:
        plot = geo_mod.ReducedMatrix(ids=reduced.ids,
                                     coords=reduced.coords[:, :cfg.params.plot_dims],
                                     method=reduced.method, seed=seed)
    else:
        plot = geo_mod.reduce(matrix, cfg.params.plot_dims, method="pca", seed=seed)
    geo_mod.export_coords(plot, art.coords2d)

    model = geo_mod.kmeans(reduced, cfg.params.corpus_k, seed)
    _save_cluster_model(model, art.clusters)
    docs = corpus_mod.load_jsonl(art.corpus).by_split(cfg.params.split)
    stats = geo_mod.cluster_stats(model, corpus_mod.LabeledCorpus(docs))
    art.cluster_stats.write_text(json.dumps(
        [asdict(s) for s in stats.clusters], indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    mark_stage(art, "cluster", config_hash, inputs, outputs)
    return {"stage": "cluster", "k": model.k, "inertia": model.inertia,
            "iterations": model.iterations_run,
            "sizes": [s.size for s in stats.clusters]}


def _save_cluster_model(model: geo_mod.ClusterModel, path: Path) -> None:
    path.write_text(json.dumps({
        "k": model.k, "seed": model.seed, "inertia": model.inertia,
        "iterations_run": model.iterations_run,
        "inertia_trace": model.inertia_trace,
        "centroids": model.centroids.tolist(),
        "assignments": model.assignments,
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_cluster_model(path: Path) -> geo_mod.ClusterModel:
    data = json.loads(path.read_text(encoding="utf-8"))
    return geo_mod.ClusterModel(
        k=data["k"], centroids=np.asarray(data["centroids"], dtype=np.float64),
        assignments={k: int(v) for k, v in data["assignments"].items()},
        inertia=data["inertia"], seed=data["seed"],
        iterations_run=data["iterations_run"],
        inertia_trace=list(data.get("inertia_trace", [])))


def run_represent(cfg: PipelineConfig, force: bool = False,
                  only_cluster: int | None = None) -> dict:
    art = _art(cfg)
    _require(art.corpus, "ingest")
    _require(art.clusters, "cluster")
    config_hash = cfg.section_hash("params", "embedding")
    inputs = [art.corpus, art.clusters, art.embeddings]
    outputs = [art.signatures, art.signatures_csv] + \
        [art.representatives(s, only_cluster) for s in cfg.params.seeds]
    if only_cluster is None and not force and \
            stage_is_current(art, "represent", config_hash, inputs, outputs):
        return {"stage": "represent", "skipped": True}

    docs = corpus_mod.load_jsonl(art.corpus).by_split(cfg.params.split)
    model = _load_cluster_model(art.clusters)
    tokenizer = _tokenizer(cfg)
    stats = topics_mod.class_term_stats(docs, model, tokenizer)
    signatures = topics_mod.ctfidf(stats)

    by_cluster: dict[int, list] = {c: [] for c in range(model.k)}
    for doc in docs:
        by_cluster[model.assignments[doc.id]].append(doc)

    embeddings = None
    if cfg.params.mmr_space == "embedding":
        embeddings = _load_split_embeddings(cfg, art)

    clusters = [only_cluster] if only_cluster is not None else list(range(model.k))
    rep_sets: dict[int, list[topics_mod.RepresentativeSet]] = {}
    for seed in cfg.params.seeds:
        rep_sets[seed] = [
            topics_mod.select_representatives(
                by_cluster[c], stats, signatures[c],
                n=cfg.params.n_representatives, lam=cfg.params.lambda_,
                pool_size=cfg.params.pool_size, seed=seed,
                space=cfg.params.mmr_space, embeddings=embeddings,
                tokenizer=tokenizer)
            for c in clusters]
        _save_representatives(rep_sets[seed], art.representatives(seed, only_cluster))

    if only_cluster is None:
        # Keywords re-ranked against the first seed's representative docs.
        doc_matrix = _load_split_embeddings(cfg, art)
        client = _embedding_client(cfg)
        for sig, rep_set in zip(signatures, rep_sets[cfg.params.seeds[0]]):
            rep_docs = doc_matrix.take(rep_set.doc_ids)
            topics_mod.topic_keywords(sig, rep_docs, client,
                                      top_n=cfg.params.keyword_top_n)
        _save_signatures(signatures, art.signatures, art.signatures_csv)
        mark_stage(art, "represent", config_hash, inputs, outputs)
    return {"stage": "represent",
            "clusters": clusters,
            "topic_names": [s.topic_name for s in signatures]}


def _save_representatives(rep_sets: list[topics_mod.RepresentativeSet],
                          path: Path) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for rep_set in rep_sets:
            for rank, doc_id in enumerate(rep_set.doc_ids, start=1):
                fh.write(json.dumps({
                    "cluster": rep_set.cluster, "rank": rank, "doc_id": doc_id,
                    "label": rep_set.labels.get(doc_id),
                    "selection_score": rep_set.scores.get(doc_id),
                }, ensure_ascii=False) + "\n")


def _load_representatives(path: Path) -> list[topics_mod.RepresentativeSet]:
    rows_by_cluster: dict[int, list[dict]] = {}
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            rows_by_cluster.setdefault(int(row["cluster"]), []).append(row)
    rep_sets = []
    for cluster in sorted(rows_by_cluster):
        rows = sorted(rows_by_cluster[cluster], key=lambda r: r["rank"])
        rep_sets.append(topics_mod.RepresentativeSet(
            cluster=cluster, doc_ids=[r["doc_id"] for r in rows],
            lam=0.0, candidate_pool_size=0, per_label_quota={},
            labels={r["doc_id"]: r["label"] for r in rows},
            scores={r["doc_id"]: r["selection_score"] or 0.0 for r in rows}))
    return rep_sets


def _save_signatures(signatures, json_path: Path, csv_path: Path) -> None:
    json_path.write_text(json.dumps([{
        "cluster": s.cluster, "topic_name": s.topic_name,
        "raw_keywords": s.raw_keywords, "reranked_keywords": s.reranked_keywords,
    } for s in signatures], indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "term", "weight"])
        for s in signatures:
            for term, weight in sorted(s.weights.items(),
                                       key=lambda kv: (-kv[1], kv[0])):
                writer.writerow([s.cluster, term, repr(weight)])


def run_generate(cfg: PipelineConfig, force: bool = False) -> dict:
    art = _art(cfg)
    _require(art.corpus, "ingest")
    config_hash = cfg.section_hash("params", "chat")
    rep_files = [_require(art.representatives(s), "represent")
                 for s in cfg.params.seeds]
    inputs = [art.corpus] + rep_files
    outputs = [art.seed_suite(s) for s in cfg.params.seeds] + [art.generation_log]
    if not force and stage_is_current(art, "generate", config_hash, inputs, outputs):
        return {"stage": "generate", "skipped": True}

    docs = corpus_mod.load_jsonl(art.corpus).by_split(cfg.params.split)
    representatives = {s: _load_representatives(art.representatives(s))
                       for s in cfg.params.seeds}
    gateway = _gateway(cfg)
    suites, log_rows = mft_gen.run_generation(
        docs, representatives, cfg.params.seeds, gateway, _gen_params(cfg),
        split=cfg.params.split, case_cap=cfg.params.case_cap)
    for seed, suite in zip(cfg.params.seeds, suites):
        mft_gen.save_suite(suite, art.seed_suite(seed))
    with art.generation_log.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "cluster", "doc_id", "llm_calls",
                         "cases_produced", "parse_retried", "failed"])
        for row in log_rows:
            writer.writerow([row.seed, row.cluster, row.doc_id, row.llm_calls,
                             row.cases_produced, row.parse_retried, row.failed])
    mark_stage(art, "generate", config_hash, inputs, outputs)
    return {"stage": "generate",
            "suite_sizes": {s.name: len(s) for s in suites}}


def run_qc_label(cfg: PipelineConfig, force: bool = False) -> dict:
    art = _art(cfg)
    config_hash = cfg.section_hash("params", "chat")
    suite_files = [_require(art.seed_suite(s), "generate")
                   for s in cfg.params.seeds]
    outputs = [art.qc_verdicts, art.qc_summary, art.triage]
    if not force and stage_is_current(art, "qc-label", config_hash,
                                      suite_files, outputs):
        return {"stage": "qc-label", "skipped": True}

    gateway = _gateway(cfg)
    params = _qc_params(cfg)
    all_cases = []
    all_verdicts = []
    for seed in cfg.params.seeds:
        suite = mft_gen.load_suite(art.seed_suite(seed))
        verdicts = qc_mod.auto_label_suite(suite, gateway, params)
        all_cases.extend(suite.cases)
        all_verdicts.extend(verdicts)
    combined = mft_gen.MftSuite(name="all_seeds", cases=all_cases)
    flagged = qc_mod.triage_export(combined, all_verdicts, art.triage)
    with art.qc_verdicts.open("w", encoding="utf-8") as fh:
        for v in all_verdicts:
            fh.write(json.dumps(asdict(v), ensure_ascii=False) + "\n")
    summary = qc_mod.qc_summary(all_verdicts)
    art.qc_summary.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")
    mark_stage(art, "qc-label", config_hash, suite_files, outputs)
    return {"stage": "qc-label", "flagged": flagged, **summary}


def run_triage_apply(cfg: PipelineConfig, force: bool = False) -> dict:
    art = _art(cfg)
    config_hash = cfg.section_hash("params")
    suite_files = [_require(art.seed_suite(s), "generate")
                   for s in cfg.params.seeds]
    triage_file = _require(art.triage, "qc-label")
    inputs = suite_files + [triage_file]
    outputs = [art.seed_suite(s, qc=True) for s in cfg.params.seeds]
    if not force and stage_is_current(art, "triage-apply", config_hash,
                                      inputs, outputs):
        return {"stage": "triage-apply", "skipped": True}

    records = qc_mod.load_triage(triage_file)
    suites = {s: mft_gen.load_suite(art.seed_suite(s)) for s in cfg.params.seeds}
    known_ids = set()
    for suite in suites.values():
        known_ids |= suite.case_ids()
    unknown = [r.case_id for r in records if r.case_id not in known_ids]
    if unknown:
        raise StageError(f"triage rows reference unknown cases: {unknown[:5]}")

    sizes = {}
    for seed, suite in suites.items():
        ids = suite.case_ids()
        suite_records = [r for r in records if r.case_id in ids]
        cleaned = qc_mod.apply_triage_records(suite, suite_records)
        mft_gen.save_suite(cleaned, art.seed_suite(seed, qc=True))
        sizes[cleaned.name] = len(cleaned)
    mark_stage(art, "triage-apply", config_hash, inputs, outputs)
    return {"stage": "triage-apply", "rows_applied": len(records), "sizes": sizes}


def run_assemble(cfg: PipelineConfig, force: bool = False) -> dict:
    art = _art(cfg)
    config_hash = cfg.section_hash("params", "chat")
    suite_files = [_require(art.seed_suite(s, qc=True), "triage-apply")
                   for s in cfg.params.seeds]
    outputs = [art.original, art.extended, art.paraphrases, art.sizes]
    if not force and stage_is_current(art, "assemble", config_hash,
                                      suite_files, outputs):
        return {"stage": "assemble", "skipped": True}

    seed_suites = [mft_gen.load_suite(art.seed_suite(s, qc=True), name=f"MFT {i}")
                   for i, s in enumerate(cfg.params.seeds, start=1)]
    original = suite_mod.build_original(seed_suites, cfg.params.split)
    gateway = _gateway(cfg)
    params = _gen_params(cfg)
    paraphrases = []
    for case in original.cases:
        paraphrases.extend(mft_gen.paraphrase(
            case, gateway, params, n=cfg.params.paraphrase_n,
            tag=f"{cfg.params.split}/para/{case.id}"))
    variant_set = suite_mod.assemble_variants(seed_suites, paraphrases,
                                              cfg.params.split)
    mft_gen.save_suite(variant_set.original, art.original)
    mft_gen.save_suite(variant_set.extended, art.extended)
    with art.paraphrases.open("w", encoding="utf-8") as fh:
        for case in paraphrases:
            fh.write(json.dumps(case.to_dict(), ensure_ascii=False) + "\n")
    pre_qc = {}
    for i, s in enumerate(cfg.params.seeds, start=1):
        pre = mft_gen.load_suite(art.seed_suite(s), name=f"MFT {i}")
        pre_qc[f"MFT {i}"] = len(pre)
    suite_mod.save_size_table(variant_set, art.sizes, pre_qc_sizes=pre_qc)
    mark_stage(art, "assemble", config_hash, suite_files, outputs)
    return {"stage": "assemble",
            "sizes": dict(variant_set.size_table())}


def run_mft_topics(cfg: PipelineConfig, force: bool = False) -> dict:
    art = _art(cfg)
    config_hash = cfg.section_hash("params", "embedding")
    original_file = _require(art.original, "assemble")
    outputs = [art.mft_topics, art.mft_embeddings, art.mft_coords2d]
    if not force and stage_is_current(art, "mft-topics", config_hash,
                                      [original_file], outputs):
        return {"stage": "mft-topics", "skipped": True}

    original = mft_gen.load_suite(original_file, name="MFT (Original)")
    if not original.cases:
        raise StageError("original suite is empty")
    client = _embedding_client(cfg)
    matrix = client.embed([c.text for c in original.cases],
                          ids=[c.id for c in original.cases])
    emb_mod.save_matrix(matrix, art.mft_embeddings)
    if cfg.embedding.normalize:
        matrix = emb_mod.normalize(matrix)
    topic_model = suite_mod.cluster_mft_topics(
        original, matrix, k=cfg.params.mft_k, seed=cfg.params.seeds[0],
        reduce_dims=cfg.params.reduce_dims, tokenizer=_tokenizer(cfg))
    art.mft_topics.write_text(json.dumps({
        "k": topic_model.k, "topic_names": topic_model.topic_names,
        "assignments": topic_model.assignments,
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    plot_dims = min(cfg.params.plot_dims, matrix.dim, max(len(matrix) - 1, 1))
    coords = geo_mod.reduce(matrix, plot_dims, method="pca",
                            seed=cfg.params.seeds[0])
    geo_mod.export_coords(coords, art.mft_coords2d)
    mark_stage(art, "mft-topics", config_hash, [original_file], outputs)
    return {"stage": "mft-topics", "topic_names": topic_model.topic_names}


def _load_topic_model(path: Path) -> suite_mod.MftTopicModel:
    data = json.loads(path.read_text(encoding="utf-8"))
    return suite_mod.MftTopicModel(
        k=data["k"], topic_names=list(data["topic_names"]),
        assignments={k: int(v) for k, v in data["assignments"].items()})


def _load_variant_set(cfg: PipelineConfig, art: Artifacts) -> suite_mod.SuiteVariantSet:
    seed_suites = [mft_gen.load_suite(
        _require(art.seed_suite(s, qc=True), "triage-apply"), name=f"MFT {i}")
        for i, s in enumerate(cfg.params.seeds, start=1)]
    original = mft_gen.load_suite(_require(art.original, "assemble"),
                                  name="MFT (Original)")
    extended = mft_gen.load_suite(_require(art.extended, "assemble"),
                                  name="MFT (Extended)")
    return suite_mod.SuiteVariantSet(split=cfg.params.split,
                                     seed_suites=seed_suites,
                                     original=original, extended=extended)


def run_evaluate(cfg: PipelineConfig, predictions_dir: str | Path | None = None,
                 model_name: str = "model", allow_partial: bool = False,
                 force: bool = False) -> dict:
    art = _art(cfg)
    variant_set = _load_variant_set(cfg, art)
    pred_dir = Path(predictions_dir or cfg.paths.predictions_dir or "")
    if not str(pred_dir) or not pred_dir.exists():
        raise StageError("missing predictions directory (pass --predictions "
                         "or set paths.predictions_dir)")

    predictions = {}
    for slug, suite in variant_set.variants().items():
        source = pred_dir / f"predictions_{slug}.csv"
        if source.exists():
            predictions[slug] = eval_mod.ingest_predictions(
                source, suite, allow_partial=allow_partial)
    if not predictions:
        raise StageError(f"no predictions_*.csv files found in {pred_dir}")

    topic_model = None
    if art.mft_topics.exists() and "original" in predictions:
        topic_model = _load_topic_model(art.mft_topics)
    report = eval_mod.score(variant_set, predictions, topic_model,
                            model_name=model_name)
    eval_mod.save_report_json(report, art.eval_json(model_name))
    return {"stage": "evaluate",
            "variants": {k: v.pct for k, v in report.variants.items()},
            "stability": report.stability_pct}


def run_report(cfg: PipelineConfig, model_name: str = "model",
               force: bool = False) -> dict:
    art = _art(cfg)
    eval_file = _require(art.eval_json(model_name), "evaluate")
    report = eval_mod.load_report_json(eval_file)
    suite = None
    coords = None
    topic_model = None
    if art.original.exists():
        suite = mft_gen.load_suite(art.original, name="MFT (Original)")
    if art.mft_coords2d.exists():
        coords = geo_mod.import_coords(art.mft_coords2d)
    if art.mft_topics.exists():
        topic_model = _load_topic_model(art.mft_topics)
    written = eval_mod.render(report, art.report_dir, split=cfg.params.split,
                              suite=suite, coords=coords, topic_model=topic_model)
    return {"stage": "report", "files": [str(p) for p in written]}


STAGE_ORDER = ("ingest", "embed", "cluster", "represent", "generate",
               "qc-label", "triage-apply", "assemble", "mft-topics")


def run_all(cfg: PipelineConfig, predictions_dir: str | Path | None = None,
            model_name: str = "model", force: bool = False) -> list[dict]:
    """Run every stage in order; evaluate/report only when predictions exist."""
    results = [
        run_ingest(cfg, force), run_embed(cfg, force), run_cluster(cfg, force),
        run_represent(cfg, force), run_generate(cfg, force),
        run_qc_label(cfg, force), run_triage_apply(cfg, force),
        run_assemble(cfg, force), run_mft_topics(cfg, force),
    ]
    pred_dir = Path(predictions_dir or cfg.paths.predictions_dir or "")
    if str(pred_dir) and pred_dir.exists():
        results.append(run_evaluate(cfg, pred_dir, model_name, force=force))
        results.append(run_report(cfg, model_name, force=force))
    else:
        log.info("run-all: no predictions directory, skipping evaluate/report")
    return results
