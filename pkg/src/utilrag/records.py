"""Corpus and dataset records plus their JSONL readers/writers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DuplicateId, ParseError

SENTINEL_ID = "__ES__"
# A line holding only this key carries provenance and is skipped by readers.
META_KEY = "_meta"


@dataclass(frozen=True)
class Document:
    id: str
    title: str = ""
    text: str = ""

    @property
    def is_sentinel(self) -> bool:
        return self.id == SENTINEL_ID

    def rendered(self) -> str:
        """Document as shown to a reader: ``title  text`` (two spaces)."""
        if self.title:
            return f"{self.title}  {self.text}"
        return self.text

    def to_json(self) -> dict:
        return {"id": self.id, "title": self.title, "text": self.text}


EMPTY_STRING_DOC = Document(SENTINEL_ID, "", "")


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    gold_answers: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))

    @property
    def answer(self) -> str:
        return self.gold_answers[0] if self.gold_answers else ""

    def to_json(self) -> dict:
        return {"id": self.id, "question": self.text, "answers": list(self.gold_answers)}


def _iter_json_lines(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=lineno, path=str(path)) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", line=lineno, path=str(path))
            if set(obj) == {META_KEY}:
                continue
            yield lineno, obj


def _require_str(obj: dict, key: str, lineno: int, path: Path) -> str:
    if key not in obj:
        raise ParseError(f"missing field {key!r}", line=lineno, path=str(path))
    value = obj[key]
    if not isinstance(value, str):
        raise ParseError(f"field {key!r} must be a string", line=lineno, path=str(path))
    return value


def load_corpus(path: str | Path) -> list[Document]:
    """Read ``{"id","title","text"}`` records, one per line."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    docs: list[Document] = []
    seen: set[str] = set()
    for lineno, obj in _iter_json_lines(path):
        doc_id = _require_str(obj, "id", lineno, path)
        if doc_id in seen:
            raise DuplicateId(f"{path}:{lineno}: duplicate document id {doc_id!r}")
        if doc_id == SENTINEL_ID:
            raise ParseError(f"id {SENTINEL_ID!r} is reserved", line=lineno, path=str(path))
        seen.add(doc_id)
        text = _require_str(obj, "text", lineno, path)
        if not text:
            raise ParseError("document text must be non-empty", line=lineno, path=str(path))
        docs.append(Document(doc_id, _require_str(obj, "title", lineno, path), text))
    return docs


def load_dataset(path: str | Path) -> list[Query]:
    """Read ``{"id","question","answers":[...]}`` records, one per line."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    queries: list[Query] = []
    seen: set[str] = set()
    for lineno, obj in _iter_json_lines(path):
        qid = _require_str(obj, "id", lineno, path)
        question = _require_str(obj, "question", lineno, path)
        if "answers" not in obj:
            raise ParseError("missing field 'answers'", line=lineno, path=str(path))
        answers = obj["answers"]
        if not isinstance(answers, list) or not answers or not all(isinstance(a, str) for a in answers):
            raise ParseError("'answers' must be a non-empty list of strings", line=lineno, path=str(path))
        if qid in seen:
            raise DuplicateId(f"{path}:{lineno}: duplicate query id {qid!r}")
        seen.add(qid)
        queries.append(Query(qid, question, tuple(answers)))
    return queries


def write_jsonl(path: str | Path, records: Iterable[dict], meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if meta is not None:
            fh.write(json.dumps({META_KEY: meta}, ensure_ascii=False, sort_keys=True))
            fh.write("\n")
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def read_jsonl(path: str | Path) -> list[dict]:
    return [obj for _, obj in _iter_json_lines(Path(path))]


def read_jsonl_meta(path: str | Path) -> dict | None:
    """The provenance record of a JSONL artifact, if its first line is one."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    try:
        obj = json.loads(first)
    except json.JSONDecodeError:
        return None
    if isinstance(obj, dict) and set(obj) == {META_KEY}:
        return obj[META_KEY]
    return None
