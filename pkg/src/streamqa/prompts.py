"""Prompt assembly and answer parsing for the generation backends.

One structural template serves every generation path; the context sections
differ per path (reference passages, prior answered questions, low-rated
answers) and empty sections are omitted. The template is plain text with
stable markers so deterministic test doubles can pick it apart.
"""

from __future__ import annotations

import json

DEFAULT_ROLE = (
    "You are a careful assistant answering community questions strictly from "
    "the provided context."
)

# Exact sentence the model must emit when the context cannot support an answer.
INSUFFICIENT_CONTEXT_REPLY = "Unable to answer based on available knowledge"

KB_MARKER = "### Reference passages"
GOOD_QA_MARKER = "### Prior answered questions"
BAD_QA_MARKER = "### Low-rated answers, do not repeat their mistakes"
QUESTION_MARKER = "### Question"

_INSTRUCTIONS = (
    "Instructions:\n"
    "1. Answer using only the context sections below.\n"
    "2. Prefer reference passages over prior answers when they disagree.\n"
    "3. Treat low-rated answers as examples of what to avoid.\n"
    "4. If the context is insufficient, reply exactly: "
    f"\"{INSUFFICIENT_CONTEXT_REPLY}\".\n"
    "5. Respond with a JSON object of the form {\"answer\": \"...\"} and "
    "nothing else."
)


def format_qa_entry(question: str, answer: str, score: float) -> str:
    return f"question: {question}\nanswer: {answer}\nscore: {score:.4f}"


def format_doc_entry(doc_id: int, text: str) -> str:
    return f"[doc {doc_id}] {text}"


def render_prompt(
    question: str,
    *,
    knowledge_base_context: list[str] | None = None,
    previous_relevant_qa: list[str] | None = None,
    bad_cqa_contexts: list[str] | None = None,
    role: str = DEFAULT_ROLE,
) -> str:
    """Assemble the full generation prompt.

    Context arguments are pre-formatted entry strings (see format_qa_entry
    and format_doc_entry); sections with no entries are left out entirely.
    """
    parts = [role, "", _INSTRUCTIONS]
    for marker, entries in (
        (KB_MARKER, knowledge_base_context),
        (GOOD_QA_MARKER, previous_relevant_qa),
        (BAD_QA_MARKER, bad_cqa_contexts),
    ):
        if entries:
            parts.append("")
            parts.append(marker)
            parts.extend(entries)
    parts.extend(["", QUESTION_MARKER, question])
    return "\n".join(parts)


def parse_answer(text: str) -> tuple[str, bool]:
    """Extract the answer from a model reply.

    Returns (answer, fallback_used). The happy path is a bare JSON object
    with a string "answer" field; anything else falls back to the stripped
    raw text so a misbehaving model still produces a usable reply.
    """
    try:
        parsed = json.loads(text)
    except (json.JSONDecodeError, TypeError):
        return text.strip(), True
    if isinstance(parsed, dict) and isinstance(parsed.get("answer"), str):
        return parsed["answer"], False
    return text.strip(), True


def extract_question(prompt: str) -> str:
    """First non-empty line after the final question marker.

    Deterministic generators use this to echo the question back; it is not
    part of the serving path.
    """
    lines = prompt.splitlines()
    for i in range(len(lines) - 1, -1, -1):
        if lines[i].strip() == QUESTION_MARKER:
            for line in lines[i + 1:]:
                if line.strip():
                    return line.strip()
            break
    return ""
