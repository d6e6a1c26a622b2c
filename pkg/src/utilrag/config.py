"""Run configuration: a YAML file, ``${VAR}`` interpolation, flag overrides.

Unset paths fall back to the bundled toy data, so an empty config runs the
whole pipeline offline.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
import re
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from . import __version__
from .errors import ConfigError, InputError
from .oracle import OracleConfig, canonical_json
from .pipeline import KnowledgeKind, PipelineConfig
from .textcore import DEFAULT_IN_DIM, DEFAULT_OUT_DIM
from .utility import UtilityTrainConfig

TOY_CORPUS = "toy_corpus.jsonl"
TOY_QUERIES = "toy_queries.jsonl"
TOY_PARAMETRIC = "toy_parametric.json"

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("utilrag") / "data" / name))


def interpolate(value: Any, env: Mapping[str, str] | None = None) -> Any:
    """Replace ``${VAR}`` and ``${VAR:-default}`` in every string, recursively."""
    env = os.environ if env is None else env
    if isinstance(value, str):
        def sub(m: re.Match) -> str:
            name, default = m.group(1), m.group(2)
            if name in env:
                return env[name]
            if default is not None:
                return default
            raise ConfigError(f"environment variable {name} is not set")

        return _ENV_RE.sub(sub, value)
    if isinstance(value, dict):
        return {k: interpolate(v, env) for k, v in value.items()}
    if isinstance(value, list):
        return [interpolate(v, env) for v in value]
    return value


@dataclass
class EncoderConfig:
    in_dim: int = DEFAULT_IN_DIM
    out_dim: int = DEFAULT_OUT_DIM
    # "spectral" fits the similarity encoder to the corpus; "random" is a
    # Gaussian projection. Ignored when a checkpoint is given.
    init: str = "spectral"
    fit_questions: bool = True
    checkpoint: str | None = None

    def __post_init__(self) -> None:
        if self.init not in ("spectral", "random"):
            raise ConfigError(f"encoder.init must be 'spectral' or 'random', got {self.init!r}")
        if self.in_dim < 2 or self.out_dim < 1:
            raise ConfigError("encoder dims must be positive (in_dim >= 2)")


@dataclass
class FusionSection:
    enabled: bool = True
    total_k: int = 5
    k_sim: int | None = None
    k_util: int | None = None
    pool_size: int = 10
    selective: bool = True


@dataclass
class SummarizeSection:
    enabled: bool = True
    max_chars: int = 200


def _toy_utility() -> UtilityTrainConfig:
    return UtilityTrainConfig(learning_rate=0.2, epochs=100, window_size=10)


@dataclass
class RunConfig:
    corpus_path: str | None = None
    dataset_path: str | None = None
    # evaluation datasets, name -> path; empty means just the main dataset
    eval_datasets: dict[str, str] = field(default_factory=dict)
    output_dir: str = "runs/default"
    seed: int = 0
    knowledge: str = "summary"
    oracle: OracleConfig = field(default_factory=OracleConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    utility: UtilityTrainConfig = field(default_factory=_toy_utility)
    fusion: FusionSection = field(default_factory=FusionSection)
    summarize: SummarizeSection = field(default_factory=SummarizeSection)

    def __post_init__(self) -> None:
        if self.knowledge not in ("raw", "summary", "none"):
            raise ConfigError(f"knowledge must be raw, summary or none, got {self.knowledge!r}")
        self.utility.seed = self.seed

    # -- construction ----------------------------------------------------

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: Path | None = None) -> RunConfig:
        data = dict(data)
        sections = {
            "oracle": OracleConfig,
            "encoder": EncoderConfig,
            "utility": UtilityTrainConfig,
            "fusion": FusionSection,
            "summarize": SummarizeSection,
        }
        kwargs: dict[str, Any] = {}
        for key, value in data.items():
            if key in sections:
                if not isinstance(value, dict):
                    raise ConfigError(f"section {key!r} must be a mapping")
                kwargs[key] = _build(sections[key], value, key)
            else:
                kwargs[key] = value
        try:
            cfg = _build(cls, kwargs, "config")
        except InputError as exc:
            raise ConfigError(str(exc)) from exc
        if base_dir is not None:
            cfg._resolve_relative(base_dir)
        return cfg

    @classmethod
    def load(cls, path: str | Path, env: Mapping[str, str] | None = None) -> RunConfig:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(str(path))
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(interpolate(data, env), base_dir=path.parent)

    def _resolve_relative(self, base: Path) -> None:
        def fix(p: str | None) -> str | None:
            if p is None or Path(p).is_absolute():
                return p
            return str(base / p)

        self.corpus_path = fix(self.corpus_path)
        self.dataset_path = fix(self.dataset_path)
        self.eval_datasets = {k: fix(v) for k, v in self.eval_datasets.items()}
        self.output_dir = fix(self.output_dir)
        self.encoder.checkpoint = fix(self.encoder.checkpoint)
        self.oracle.parametric_answers_path = fix(self.oracle.parametric_answers_path)
        self.oracle.cache_dir = fix(self.oracle.cache_dir)

    def with_overrides(self, overrides: Mapping[str, Any]) -> RunConfig:
        """Copy with dotted keys (``"utility.epochs"``) replaced; ``None`` values are ignored."""
        data = self.to_json()
        for dotted, value in overrides.items():
            if value is None:
                continue
            node = data
            *parents, leaf = dotted.split(".")
            for part in parents:
                if not isinstance(node.get(part), dict):
                    raise ConfigError(f"unknown config section {part!r} in {dotted!r}")
                node = node[part]
            if leaf not in node:
                raise ConfigError(f"unknown config key {dotted!r}")
            node[leaf] = value
        return RunConfig.from_dict(data)

    # -- resolved views --------------------------------------------------

    def corpus_file(self) -> Path:
        return Path(self.corpus_path) if self.corpus_path else bundled_path(TOY_CORPUS)

    def dataset_file(self) -> Path:
        return Path(self.dataset_path) if self.dataset_path else bundled_path(TOY_QUERIES)

    def datasets(self) -> dict[str, Path]:
        if self.eval_datasets:
            return {name: Path(p) for name, p in self.eval_datasets.items()}
        main = self.dataset_file()
        return {main.stem: main}

    def oracle_config(self) -> OracleConfig:
        """Oracle settings; the mock gets the bundled parametric answers by default."""
        oc = dataclasses.replace(self.oracle)
        if oc.kind == "mock" and not oc.parametric_answers and not oc.parametric_answers_path:
            oc.parametric_answers_path = str(bundled_path(TOY_PARAMETRIC))
        return oc

    def pipeline_config(self) -> PipelineConfig:
        if self.knowledge == "none":
            kind = KnowledgeKind.NONE
        elif self.knowledge == "summary" and self.summarize.enabled:
            kind = KnowledgeKind.SUMMARY
        else:
            kind = KnowledgeKind.RAW_DOCS
        f = self.fusion
        return PipelineConfig(
            total_k=f.total_k,
            k_sim=f.k_sim,
            k_util=f.k_util,
            pool_size=f.pool_size,
            use_fusion=f.enabled,
            selective=f.selective,
            knowledge=kind.value,
            max_chars=self.summarize.max_chars,
        )

    def input_files(self) -> dict[str, Path]:
        files = {"corpus": self.corpus_file(), "dataset": self.dataset_file()}
        oc = self.oracle_config()
        if oc.kind == "mock" and oc.parametric_answers_path:
            files["parametric_answers"] = Path(oc.parametric_answers_path)
        return files

    def check_inputs(self) -> None:
        files = self.input_files()
        files.update({f"eval dataset {name!r}": p for name, p in self.datasets().items()})
        for label, p in files.items():
            if not p.is_file():
                raise FileNotFoundError(f"{label} file not found: {p}")
        if self.encoder.checkpoint and not Path(self.encoder.checkpoint).is_file():
            raise FileNotFoundError(f"encoder checkpoint not found: {self.encoder.checkpoint}")

    def to_json(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        """SHA-256 over the settings that affect results and the input file contents.

        File locations, the output directory and the evaluation datasets are
        left out: the same run fingerprints identically wherever it is placed,
        and evaluating on another dataset does not invalidate trained artifacts.
        """
        data = self.to_json()
        for key in ("corpus_path", "dataset_path", "eval_datasets", "output_dir"):
            data.pop(key)
        data["encoder"].pop("checkpoint")
        for key in ("parametric_answers_path", "cache_dir", "max_parallel", "timeout"):
            data["oracle"].pop(key)
        data["utility"].pop("max_parallel")
        digests = {}
        for label, p in sorted(self.input_files().items()):
            digests[label] = _file_digest(p) if p.is_file() else None
        if self.encoder.checkpoint:
            p = Path(self.encoder.checkpoint)
            digests["encoder_checkpoint"] = _file_digest(p) if p.is_file() else None
        payload = {"config": data, "inputs": digests, "tool_version": __version__}
        return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _build(cls, values: Mapping[str, Any], where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"bad {where}: {exc}") from None
