import csv
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import FIXTURES
from utilrag.errors import EmptyDataset, EmptyGolds, InputError, ParseError, RemoteUnavailable
from utilrag.evalgen import (
    CSV_COLUMNS,
    EvalRecord,
    EvalResult,
    Knowledge,
    KnowledgeKind,
    answer,
    evaluate,
    exact_match,
    format_grid,
    load_dataset,
    normalize_answer,
    render_qa_prompt,
    render_summary_instruction,
    render_utility_prompt,
    token_f1,
)
from utilrag.errors import OracleFailure
from utilrag.oracle import MockOracle
from utilrag.pipeline import Pipeline, PipelineConfig
from utilrag.records import EMPTY_STRING_DOC, Document, Query

TEMPLATES = FIXTURES / "templates"
Q = Query("q", "Which series did George RR Martin write?", ("A Song of Ice and Fire",))
DOC = Document("m", "George RR Martin", "George RR Martin wrote the fantasy series A Song of Ice and Fire")
BAYONNE = Document("b", "Bayonne", "Bayonne is a city in Hudson County, New Jersey.")


def golden(name: str) -> str:
    return (TEMPLATES / name).read_text(encoding="utf-8")


class TestTemplates:
    def test_utility_with_doc(self):
        assert render_utility_prompt(Q, DOC, Q.gold_answers[0]) == golden("utility_with_doc.txt")

    def test_utility_no_doc(self):
        assert render_utility_prompt(Q, None, Q.gold_answers[0]) == golden("utility_no_doc.txt")
        assert render_utility_prompt(Q, EMPTY_STRING_DOC, Q.gold_answers[0]) == golden("utility_no_doc.txt")

    def test_summary(self):
        assert render_summary_instruction(Q, [DOC, BAYONNE]).rendered_text == golden("summary.txt")

    def test_qa_with_summary(self):
        assert render_qa_prompt(Q, Knowledge(KnowledgeKind.SUMMARY, DOC.text)) == golden("qa_summary.txt")

    def test_qa_without_knowledge(self):
        assert render_qa_prompt(Q, Knowledge(KnowledgeKind.NONE)) == golden("qa_none.txt")

    def test_none_knowledge_must_be_empty(self):
        with pytest.raises(InputError):
            Knowledge(KnowledgeKind.NONE, "text")


# (prediction, golds, em, f1); hand-computed
METRIC_CASES = [
    ("Paris", ["paris"], 1, 1.0),
    ("The Eiffel Tower.", ["eiffel tower"], 1, 1.0),
    ("It is in Paris, France", ["Paris"], 1, 1 / 3),
    ("Lyon", ["Paris"], 0, 0.0),
    ("new york", ["NYC", "New York"], 1, 1.0),
    ("cat dog", ["dog fox"], 0, 0.5),
    ("blue whale", ["whale", "blue whale shark"], 1, 0.8),
    ("“Paris”", ["Paris"], 1, 1.0),
    ("the", ["a"], 1, 1.0),
    ("", ["Paris"], 0, 0.0),
]


class TestMetrics:
    @pytest.mark.parametrize("pred,golds,em,f1", METRIC_CASES)
    def test_cases(self, pred, golds, em, f1):
        assert exact_match(pred, golds) == em
        assert token_f1(pred, golds) == pytest.approx(f1, abs=1e-12)

    def test_normalize(self):
        assert normalize_answer("  The  Quick, brown FOX!  ") == "quick brown fox"
        assert normalize_answer("t.h.e end") == "end"

    @given(st.text(max_size=40))
    def test_normalize_idempotent(self, s):
        once = normalize_answer(s)
        assert normalize_answer(once) == once

    @given(st.text(max_size=30), st.text(min_size=1, max_size=30))
    def test_ranges(self, pred, gold):
        assert exact_match(pred, [gold]) in (0, 1)
        assert 0.0 <= token_f1(pred, [gold]) <= 1.0

    @given(st.text(max_size=30))
    def test_self_match(self, s):
        assert exact_match(s, [s]) == 1
        assert token_f1(s, [s]) == 1.0

    def test_empty_golds(self):
        with pytest.raises(EmptyGolds):
            exact_match("x", [])
        with pytest.raises(EmptyGolds):
            token_f1("x", [])

    def test_string_golds_rejected(self):
        with pytest.raises(TypeError):
            exact_match("x", "x")


class Scripted(MockOracle):
    def __init__(self, reply="  Paris \n", fail_on=()):
        super().__init__()
        self.reply = reply
        self.fail_on = fail_on

    def generate(self, req):
        if any(s in req.prompt for s in self.fail_on):
            raise RemoteUnavailable("endpoint down")
        return self.reply


class TestAnswer:
    def test_trailing_whitespace_only(self):
        assert answer(Scripted(), Q, Knowledge(KnowledgeKind.NONE)) == "  Paris"

    def test_failure_wrapped(self):
        with pytest.raises(OracleFailure, match="'q'"):
            answer(Scripted(fail_on=("Question",)), Q, Knowledge(KnowledgeKind.NONE))

    def test_mock_reads_knowledge(self):
        k = Knowledge(KnowledgeKind.SUMMARY, DOC.text)
        assert answer(MockOracle(), Q, k) == "A Song of Ice and Fire"
        assert answer(MockOracle(), Q, Knowledge(KnowledgeKind.NONE)) == "unknown"


@pytest.fixture(scope="module")
def toy_pipeline(toy_model):
    return Pipeline(toy_model.index, toy_model.result.params, PipelineConfig())


class TestEvaluate:
    def test_aggregates(self, toy_pipeline, toy_queries, mock_oracle):
        res = evaluate(toy_queries, toy_pipeline, mock_oracle)
        assert len(res.records) == len(toy_queries)
        assert res.em_mean == sum(r.em for r in res.records) / len(res.records)
        assert res.f1_mean == sum(r.f1 for r in res.records) / len(res.records)
        assert [r.query_id for r in res.records] == [q.id for q in toy_queries]

    def test_deterministic_and_parallel_safe(self, toy_pipeline, toy_queries, mock_oracle):
        a = evaluate(toy_queries, toy_pipeline, mock_oracle).to_json()
        b = evaluate(toy_queries, toy_pipeline, mock_oracle).to_json()
        c = evaluate(toy_queries, toy_pipeline, mock_oracle, max_parallel=4).to_json()
        assert a == b == c

    def test_empty_dataset(self, toy_pipeline, mock_oracle):
        with pytest.raises(EmptyDataset):
            evaluate([], toy_pipeline, mock_oracle)

    def test_failure_scores_zero(self, toy_pipeline, toy_queries):
        target = toy_queries[0]
        res = evaluate(toy_queries[:3], toy_pipeline, Scripted(reply="x", fail_on=(target.text,)))
        first = res.records[0]
        assert (first.em, first.f1, first.prediction) == (0, 0.0, "")
        assert "endpoint down" in first.error
        assert res.failures == 1
        assert all(r.error is None for r in res.records[1:])

    def test_similarity_only_pipeline(self, toy_model, toy_queries, mock_oracle):
        p = Pipeline(toy_model.index, None, PipelineConfig(use_fusion=False))
        res = evaluate(toy_queries, p, mock_oracle)
        assert not any(r.selective_fired for r in res.records)
        assert all(r.n_docs_admitted == 5 for r in res.records)

    def test_fusion_needs_utility(self, toy_model):
        with pytest.raises(InputError):
            Pipeline(toy_model.index, None, PipelineConfig())


class TestOutputs:
    def result(self):
        recs = [EvalRecord("a", "x", 1, 1.0, False, 2, 0.125), EvalRecord("b", "", 0, 0.0, True, 0, None)]
        return EvalResult.from_records(recs, "abc")

    def test_csv(self, tmp_path):
        path = tmp_path / "e.csv"
        self.result().write_csv(path, header_comment="seed=0")
        lines = path.read_text().splitlines()
        assert lines[0] == "# seed=0"
        rows = list(csv.reader(lines[1:]))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert rows[1] == ["a", "1", "1.0", "0", "2", "0.125"]
        assert rows[2] == ["b", "0", "0.0", "1", "0", ""]

    def test_json(self, tmp_path):
        path = tmp_path / "e.json"
        self.result().write_json(path)
        obj = json.loads(path.read_text())
        assert obj["em_mean"] == 0.5 and obj["n_queries"] == 2 and obj["config_fingerprint"] == "abc"

    def test_empty_aggregate(self):
        with pytest.raises(EmptyDataset):
            EvalResult.from_records([], "x")

    def test_grid(self):
        text = format_grid([("toy", self.result())])
        assert text.splitlines() == ["dataset      EM      F1", "toy       50.00   50.00"]


class TestLoadDataset:
    @pytest.mark.parametrize(
        "line,match",
        [
            ('{"id": "q", "question": "x"}', "answers"),
            ('{"id": "q", "question": "x", "answers": []}', "non-empty"),
            ('{"id": "q", "answers": ["a"]}', "question"),
        ],
    )
    def test_bad_records(self, tmp_path, line, match):
        path = tmp_path / "d.jsonl"
        path.write_text(line + "\n", encoding="utf-8")
        with pytest.raises(ParseError, match=match):
            load_dataset(path)

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "none.jsonl")

    def test_toy(self, toy_queries):
        assert len(toy_queries) == 20
        assert all(q.gold_answers for q in toy_queries)
