"""Prompt templates for utility scoring, summarization and answering.

Each template is instantiated by plain slot substitution. The parsers at the
bottom recover slot contents from a rendered prompt; the mock oracle uses
them to find the context it is allowed to read.
"""

from __future__ import annotations

from typing import Sequence

from .records import Document

UTILITY_WITH_DOC = (
    "Please answer the question based on the given context. Question: {question} "
    "The context related to the question is as follows: {document}. Answer: {answer}"
)
UTILITY_NO_DOC = "Please answer the question. Question: {question} Answer: {answer}"

SUMMARY_TEMPLATE = (
    "Instruction:\n"
    "You are an excellent summary generation robot. Given the following question (Question) "
    "and texts (Docs), you need to summarize these texts (Docs) into a concise abstract to "
    "adequately address the corresponding question.\n"
    "Question:\n"
    "{question}\n"
    "Docs:\n"
    "{docs}\n"
    "Summary:"
)

QA_TEMPLATE = (
    "Instruction:\n"
    "You are an AI assistant for answering questions. Based on the given question (Question) "
    "and the corresponding information (Info), please provide the correct answer as concise "
    "as possible according to the info and your commonsense.\n"
    "Info:\n"
    "{info}\n"
    "Question:\n"
    "{question}\n"
    "Answer:\n"
    "Please answer the question in the form of 2 or 3 words."
)

_UTIL_DOC_HEAD = "Please answer the question based on the given context. Question: "
_UTIL_DOC_MID = " The context related to the question is as follows: "
_UTIL_NODOC_HEAD = "Please answer the question. Question: "
_ANSWER_MARK = " Answer: "
_ANSWER_MARK_DOC = ". Answer: "


def utility_prompt_prefix(question: str, document: Document | None) -> str:
    """Prompt up to and including ``Answer: ``; the answer is scored after it.

    ``document=None`` or the empty-string sentinel selects the no-context variant.
    """
    if document is None or document.is_sentinel:
        return UTILITY_NO_DOC.format(question=question, answer="")
    return UTILITY_WITH_DOC.format(question=question, document=document.rendered(), answer="")


def render_utility(question: str, document: Document | None, answer: str) -> str:
    return utility_prompt_prefix(question, document) + answer


def join_docs(docs: Sequence[Document]) -> str:
    return "\n".join(d.rendered() for d in docs)


def render_summary(question: str, docs: Sequence[Document]) -> str:
    return SUMMARY_TEMPLATE.format(question=question, docs=join_docs(docs))


def render_qa(question: str, info: str) -> str:
    return QA_TEMPLATE.format(info=info, question=question)


# -- parsing -----------------------------------------------------------------

_QA_HEAD = QA_TEMPLATE.split("{info}")[0]
_QA_TAIL = "\nQuestion:\n"
_SUM_HEAD = SUMMARY_TEMPLATE.split("{question}")[0]


def parse_prompt(prompt: str) -> dict:
    """Identify which template produced ``prompt`` and pull out its slots.

    Returns a dict with ``kind`` in {"utility", "utility_no_doc", "summary",
    "qa", "unknown"}, plus ``question`` and ``context`` where applicable.
    ``context`` is None for the no-context utility variant.
    """
    if prompt.startswith(_UTIL_DOC_HEAD) and _UTIL_DOC_MID in prompt:
        body = prompt[len(_UTIL_DOC_HEAD):]
        question, _, rest = body.partition(_UTIL_DOC_MID)
        context, sep, _ = rest.rpartition(_ANSWER_MARK_DOC)
        if not sep:
            context = rest
        return {"kind": "utility", "question": question, "context": context}
    if prompt.startswith(_UTIL_NODOC_HEAD):
        body = prompt[len(_UTIL_NODOC_HEAD):]
        question, sep, _ = body.rpartition(_ANSWER_MARK)
        if not sep:
            question = body
        return {"kind": "utility_no_doc", "question": question, "context": None}
    if prompt.startswith(_QA_HEAD):
        body = prompt[len(_QA_HEAD):]
        info, _, rest = body.rpartition(_QA_TAIL)
        question = rest.split("\nAnswer:\n")[0]
        return {"kind": "qa", "question": question, "context": info}
    if prompt.startswith(_SUM_HEAD):
        body = prompt[len(_SUM_HEAD):]
        question, _, rest = body.partition("\nDocs:\n")
        docs = rest[: -len("\nSummary:")] if rest.endswith("\nSummary:") else rest
        return {"kind": "summary", "question": question, "context": docs}
    return {"kind": "unknown", "question": None, "context": prompt}
