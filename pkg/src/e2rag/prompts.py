"""Prompt templates, versioned as text assets.

The query-cue, judge, and answer templates are fixed wire contracts: the mock
backends classify prompts by their marker phrases and the benchmark's judge
parsing depends on the JSON shapes they request. Bump PROMPT_VERSION when any
template changes; the version participates in the index config hash.
"""

from __future__ import annotations

import json
from typing import Any

PROMPT_VERSION = "1"

# Marker phrases used by the offline mock backends to classify prompts.
MARK_ENTITY_EXTRACTION = "identifying the named entities that appear in a passage"
MARK_EVENT_EXTRACTION = "identifying the events that take place in a passage"
MARK_QUERY_CUES = "identifying entities and events in the user's query"
MARK_HYPOTHETICAL = "Draft a plausible, detailed response to the question below"
MARK_JUDGE = "expert evaluator of retrieval-augmented generation"
MARK_ANSWER = "responding to questions about documents provided"

ENTITY_EXTRACTION_TEMPLATE = """---Role---

You are a helpful assistant tasked with identifying the named entities that appear in a passage of text.

---Goal---

Given the passage, list every person, place, organization, or object it mentions. For each entity give a one-sentence description grounded in what this passage (and only this passage) says about it. Also list the relations between entities that the passage states directly.

---Instructions---

- Output JSON with two keys:
  - "entities": array of objects {{"name": ..., "type": ..., "description": ...}}
  - "relations": array of objects {{"src": ..., "dst": ..., "description": ..., "keywords": ..., "weight": ...}}
- Descriptions must be specific to this passage, not general knowledge.
- "src" and "dst" must be names from the "entities" array.

---Passage---
{chunk}

---Output---
"""

EVENT_EXTRACTION_TEMPLATE = """---Role---

You are a helpful assistant tasked with identifying the events that take place in a passage of text.

---Goal---

Given the passage, list the actions, occurrences, or happenings it describes. For each event give a short name and a one-sentence description grounded in this passage; name the participants inside the description. Also list relations between events (sequence, cause) that the passage states directly.

---Instructions---

- Output JSON with two keys:
  - "events": array of objects {{"name": ..., "description": ...}}
  - "relations": array of objects {{"src": ..., "dst": ..., "description": ..., "keywords": ..., "weight": ...}}
- "src" and "dst" must be names from the "events" array.

---Passage---
{chunk}

---Output---
"""

QUERY_CUES_TEMPLATE = """---Role---

You are a helpful assistant tasked with identifying entities and events in the user's query.

---Goal---

Given the query, list both entities and events. Entities are people, places, organizations, or objects mentioned in the query, while events are actions, occurrences, or happenings that take place.

---Instructions---

- Output the entities and events in JSON format.
- The JSON should have two keys:
  - "entities" for people, places, organizations, or objects.
  - "events" for actions, occurrences, or happenings.

######################
-Examples-
######################
Example 1:

Query: "How did Napoleon's invasion of Russia affect his empire's strength?"
################
Output:
{{
  "entities": ["Napoleon", "Russia", "Napoleon's empire"],
  "events": ["invasion of Russia", "empire's decline"]
}}
#############################
Example 2:

Query: "What role did MIT scientists play in the Manhattan Project?"
################
Output:
{{
  "entities": ["MIT", "MIT scientists", "Manhattan Project"],
  "events": ["scientific research", "atomic bomb development"]
}}
#############################
Example 3:

Query: "How did the Industrial Revolution change London's population?"
################
Output:
{{
  "entities": ["London", "London's population", "Industrial Revolution"],
  "events": ["population growth", "urbanization", "industrial development"]
}}
#############################
-Real Data-
######################
Query: {query}
######################
Output:

"""

HYPOTHETICAL_TEMPLATE = """You are a knowledgeable assistant. Draft a plausible, detailed response to the question below from memory alone, without consulting any documents. Write as if you had the source material at hand; it is acceptable for some details to be imperfect.

---Question---
{query}

---Response---
"""

JUDGE_RUBRIC = """You are an expert evaluator of retrieval-augmented generation (RAG) answers.

Scoring rubric (10-point scale):
10 - Matches ground truth exactly or with faithful paraphrase.
7  - Mostly correct; minor omissions or wording differences.
5  - Partially correct; major missing points or inaccuracies.
3  - Mostly incorrect; small overlap.
1  - Off-topic or hallucinated.

Return **only** a valid JSON array, no markdown fences, in this exact shape:
[
  {"mode": "mode_name", "reason": "short rationale", "score": 9},
  ...
]

If you cannot produce the JSON array, return an object like:
{"error": "description"}.
"""

JUDGE_DATA_MARKER = "---Evaluation Data---"

ANSWER_TEMPLATE = """---Role---

You are a helpful assistant responding to questions about documents provided.


---Goal---

Generate a response of the target length and format that responds to the user's question, summarizing all information in the input data tables appropriate for the response length and format, and incorporating any relevant general knowledge.
If you don't know the answer, just say so. Do not make anything up.
Do not include information where the supporting evidence for it is not provided.

---Target response length and format---

{response_type}

---Documents---

{content_data}

Add sections and commentary to the response as appropriate for the length and format. Style the response in markdown.
"""

ANSWER_QUESTION_MARKER = "---Question---"

REPROMPT_SUFFIX = (
    "\n\nYour previous reply could not be parsed as JSON. "
    "Return only the requested JSON, with no surrounding text or code fences."
)


def entity_extraction_prompt(chunk_text: str) -> str:
    return ENTITY_EXTRACTION_TEMPLATE.format(chunk=chunk_text)


def event_extraction_prompt(chunk_text: str) -> str:
    return EVENT_EXTRACTION_TEMPLATE.format(chunk=chunk_text)


def query_cues_prompt(query: str) -> str:
    return QUERY_CUES_TEMPLATE.format(query=query)


def hypothetical_prompt(query: str) -> str:
    return HYPOTHETICAL_TEMPLATE.format(query=query)


def judge_prompt(question: str, ground_truth: str, answers: list[dict[str, Any]]) -> str:
    """Judge input: rubric plus the evaluation payload, nothing else.

    The payload deliberately contains only the question, the ground truth, and
    the candidate answers; retrieval traces must never reach a judge.
    """
    payload = {"question": question, "ground_truth": ground_truth, "answers": answers}
    return JUDGE_RUBRIC + "\n" + JUDGE_DATA_MARKER + "\n" + json.dumps(payload, ensure_ascii=False, indent=2)


def answer_prompt(response_type: str, content_data: str, question: str) -> str:
    body = ANSWER_TEMPLATE.format(response_type=response_type, content_data=content_data)
    return body + "\n" + ANSWER_QUESTION_MARKER + "\n" + question + "\n"
