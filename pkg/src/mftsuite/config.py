"""Pipeline configuration: a single YAML file, validated and normalized.

Every knob has a default, so an empty file yields a fully usable config;
secrets (API keys) come from environment variables only.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path

import yaml

MODES = ("live", "record", "replay")
REDUCTIONS = ("pca", "external_import")
MMR_SPACES = ("ctfidf", "embedding")
INPUT_FORMATS = ("csv", "tsv", "jsonl")


class ConfigError(Exception):
    """Invalid configuration; .errors lists one message per violation."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


@dataclass
class PathsConfig:
    corpus: str = "data/reviews.csv"
    corpus_format: str = "csv"
    column_map: dict = field(default_factory=dict)
    workdir: str = "out"
    cache_dir: str = "out/cache"
    transcript: str = "out/transcript.jsonl"
    predictions_dir: str | None = None
    external_coords: str | None = None


@dataclass
class EmbeddingConfig:
    base_url: str = "http://localhost:8080"
    model: str = "gtr-t5-large"
    batch_size: int = 32
    timeout: float = 30.0
    max_retries: int = 5
    api_key_env: str = "EMBEDDINGS_API_KEY"
    concurrency: int = 2
    normalize: bool = True


@dataclass
class ChatConfig:
    base_url: str = "http://localhost:8081"
    model: str = "llama-2-7b-chat"
    max_tokens: int = 512
    timeout: float = 60.0
    max_retries: int = 5
    api_key_env: str = "CHAT_API_KEY"
    concurrency: int = 4
    gen_temperature: float = 0.7
    qc_temperature: float = 0.0


@dataclass
class StageParams:
    split: str = "train"
    corpus_k: int = 5
    mft_k: int = 4
    lambda_: float = 0.5
    pool_size: int = 500
    n_representatives: int = 10
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    paraphrase_n: int = 5
    reduce_dims: int = 5
    plot_dims: int = 2
    balance_seed: int = 13
    balance: bool = True
    train_end: date = date(2014, 4, 13)
    validation_end: date = date(2014, 12, 31)
    reduction: str = "pca"
    mmr_space: str = "ctfidf"
    keyword_top_n: int = 10
    case_cap: int = 6
    stopwords: list[str] = field(default_factory=list)


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    chat: ChatConfig = field(default_factory=ChatConfig)
    params: StageParams = field(default_factory=StageParams)
    mode: str = "live"

    def section_hash(self, *sections: str) -> str:
        """Stable hash over the named config sections, for stage stamps."""
        payload = {}
        whole = asdict(self)
        whole["params"]["train_end"] = self.params.train_end.isoformat()
        whole["params"]["validation_end"] = self.params.validation_end.isoformat()
        for s in sections:
            payload[s] = whole[s] if s != "mode" else self.mode
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


_KEY_ALIASES = {"lambda": "lambda_"}


def _coerce_date(value, path: str, errors: list[str]) -> date:
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError:
        errors.append(f"{path}: not a valid ISO date: {value!r}")
        return date(1970, 1, 1)


def _apply_section(target, data: dict, prefix: str, errors: list[str]) -> None:
    for key, value in data.items():
        attr = _KEY_ALIASES.get(key, key)
        if not hasattr(target, attr):
            errors.append(f"{prefix}.{key}: unknown key")
            continue
        if attr in ("train_end", "validation_end"):
            value = _coerce_date(value, f"{prefix}.{key}", errors)
        setattr(target, attr, value)


def validate_config(path: str | Path | None = None,
                    overrides: dict | None = None) -> PipelineConfig:
    """Load, default-fill, and validate a config file.

    Raises ConfigError listing every violation with its path into the
    config. An empty or missing-keys file yields the full defaults.
    """
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError([f"config file not found: {p}"])
        loaded = yaml.safe_load(p.read_text(encoding="utf-8"))
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(["config root must be a mapping"])
        raw = loaded
    if overrides:
        raw = _deep_merge(raw, overrides)

    errors: list[str] = []
    cfg = PipelineConfig()
    for section_name, target in (("paths", cfg.paths), ("embedding", cfg.embedding),
                                 ("chat", cfg.chat), ("params", cfg.params)):
        section = raw.get(section_name, {})
        if section is None:
            section = {}
        if not isinstance(section, dict):
            errors.append(f"{section_name}: must be a mapping")
            continue
        _apply_section(target, section, section_name, errors)
    if "mode" in raw:
        cfg.mode = str(raw["mode"])
    unknown = set(raw) - {"paths", "embedding", "chat", "params", "mode"}
    for key in sorted(unknown):
        errors.append(f"{key}: unknown key")

    _check(cfg, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def _check(cfg: PipelineConfig, errors: list[str]) -> None:
    p = cfg.params
    if not (0.0 <= p.lambda_ <= 1.0):
        errors.append("params.lambda: lambda out of range [0, 1]")
    if not p.seeds:
        errors.append("params.seeds: must be non-empty")
    elif not all(isinstance(s, int) for s in p.seeds):
        errors.append("params.seeds: must be integers")
    if p.pool_size < 1:
        errors.append("params.pool_size: must be >= 1")
    if p.n_representatives < 1:
        errors.append("params.n_representatives: must be >= 1")
    if p.corpus_k < 1:
        errors.append("params.corpus_k: must be >= 1")
    if p.mft_k < 1:
        errors.append("params.mft_k: must be >= 1")
    if p.paraphrase_n < 1:
        errors.append("params.paraphrase_n: must be >= 1")
    if p.reduce_dims < 1:
        errors.append("params.reduce_dims: must be >= 1")
    if p.plot_dims < 2:
        errors.append("params.plot_dims: must be >= 2")
    if p.split not in ("train", "validation", "test"):
        errors.append(f"params.split: unknown split {p.split!r}")
    if p.reduction not in REDUCTIONS:
        errors.append(f"params.reduction: must be one of {REDUCTIONS}")
    if p.mmr_space not in MMR_SPACES:
        errors.append(f"params.mmr_space: must be one of {MMR_SPACES}")
    if p.train_end >= p.validation_end:
        errors.append("params.train_end: must precede params.validation_end")
    if cfg.mode not in MODES:
        errors.append(f"mode: must be one of {MODES}")
    if cfg.paths.corpus_format not in INPUT_FORMATS:
        errors.append(f"paths.corpus_format: must be one of {INPUT_FORMATS}")
    if cfg.embedding.batch_size < 1:
        errors.append("embedding.batch_size: must be >= 1")
    if cfg.embedding.concurrency < 1:
        errors.append("embedding.concurrency: must be >= 1")
    if cfg.chat.concurrency < 1:
        errors.append("chat.concurrency: must be >= 1")
    if cfg.chat.gen_temperature < 0:
        errors.append("chat.gen_temperature: must be >= 0")
    if cfg.chat.qc_temperature < 0:
        errors.append("chat.qc_temperature: must be >= 0")


def _deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def dump_config(cfg: PipelineConfig) -> str:
    """Normalized YAML echo of a config (defaults filled in)."""
    data = asdict(cfg)
    data["params"]["lambda"] = data["params"].pop("lambda_")
    data["params"]["train_end"] = cfg.params.train_end.isoformat()
    data["params"]["validation_end"] = cfg.params.validation_end.isoformat()
    return yaml.safe_dump(data, sort_keys=True, default_flow_style=False)
