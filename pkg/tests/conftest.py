from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import pytest

from utilrag.config import RunConfig, bundled_path
from utilrag.oracle import MockOracle, load_parametric_answers
from utilrag.records import Document, Query, load_corpus, load_dataset
from utilrag.retriever import Index, build_index, document_features, query_features
from utilrag.textcore import EncoderParams
from utilrag.utility import TrainResult, UtilityTrainConfig, train_utility

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def toy_corpus() -> list[Document]:
    return load_corpus(bundled_path("toy_corpus.jsonl"))


@pytest.fixture(scope="session")
def toy_queries() -> list[Query]:
    return load_dataset(bundled_path("toy_queries.jsonl"))


@pytest.fixture(scope="session")
def mock_oracle() -> MockOracle:
    return MockOracle(load_parametric_answers(bundled_path("toy_parametric.json")))


def spectral_params(docs, queries, dim: int = 4096, out_dim: int = 64) -> EncoderParams:
    feats = [document_features(d, dim) for d in docs] + [query_features(q.text, dim) for q in queries]
    return EncoderParams.spectral(feats, out_dim, seed=0)


@dataclass
class ToyModel:
    sim_params: EncoderParams
    index: Index
    result: TrainResult
    config: UtilityTrainConfig


def train_toy(docs, queries, oracle, **overrides) -> ToyModel:
    params = spectral_params(docs, queries)
    index = build_index(docs, params)
    cfg = RunConfig().utility
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return ToyModel(params, index, train_utility(cfg, queries, index, params, oracle), cfg)


@pytest.fixture(scope="session")
def toy_model(toy_corpus, toy_queries, mock_oracle) -> ToyModel:
    """The bundled toy configuration, trained once per test session."""
    return train_toy(toy_corpus, toy_queries, mock_oracle)


# criterion id -> (title, passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {cid:>2} {title}: {detail}")
