"""Narrative QA benchmark: loading, byte-offset validation, judged scoring.

The dataset is JSON lines; each record carries a question, its ground truth,
a reasoning category, and passage evidence with exact byte offsets into the
source story. Benchmark runs answer every question with every system under
test (answers cached to disk), have each judge grade all answers for a
sample in a single call, and aggregate as the mean of per-judge means.
"""

from __future__ import annotations

import json
import logging
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from . import prompts
from .extraction import JsonRecoveryError, parse_model_json

logger = logging.getLogger(__name__)

CATEGORIES = (
    "Character Consistency",
    "Causal Consistency",
    "Symbolism, Imagery & Motifs",
    "Thematic, Philosophical & Moral",
    "Narrative & Plot Structure",
    "Setting, Environment & Atmosphere",
    "Social, Cultural & Political",
    "Emotional & Psychological",
)

# Published tables and the generation-prompt "type" strings phrase the eight
# facets differently; the leading keyword is stable across phrasings.
_CATEGORY_BY_KEYWORD = {
    "character": "Character Consistency",
    "causal": "Causal Consistency",
    "symbolism": "Symbolism, Imagery & Motifs",
    "thematic": "Thematic, Philosophical & Moral",
    "narrative": "Narrative & Plot Structure",
    "setting": "Setting, Environment & Atmosphere",
    "social": "Social, Cultural & Political",
    "emotional": "Emotional & Psychological",
}

UNSTABLE_CATEGORY_THRESHOLD = 5


class DatasetError(ValueError):
    """Schema violation; message names the offending line and field."""


@dataclass(frozen=True)
class PassageEvidence:
    start_sentence: str
    end_sentence: str
    start_byte: int
    end_byte: int
    excerpt: str


@dataclass(frozen=True)
class QARecord:
    story_id: str
    story_title: str
    question_id: str
    category: str
    question: str
    ground_truth: str
    passages: tuple[PassageEvidence, ...]


def normalize_category(raw: str) -> str:
    token = re.split(r"[\s,&]+", raw.strip().lower(), maxsplit=1)[0]
    try:
        return _CATEGORY_BY_KEYWORD[token]
    except KeyError:
        raise DatasetError(f"unknown category {raw!r}") from None


def _parse_record(obj: dict, lineno: int) -> QARecord:
    def need(fname: str) -> Any:
        if fname not in obj:
            raise DatasetError(f"line {lineno}: missing field {fname!r}")
        return obj[fname]

    raw_passages = need("passages")
    if isinstance(raw_passages, dict):
        raw_passages = [raw_passages]
    if not isinstance(raw_passages, list):
        raise DatasetError(f"line {lineno}: field 'passages' must be a list")
    passages = []
    for i, p in enumerate(raw_passages):
        if not isinstance(p, dict):
            raise DatasetError(f"line {lineno}: passages[{i}] must be an object")
        for fname in ("start_sentence", "end_sentence", "start_byte", "end_byte", "excerpt"):
            if fname not in p:
                raise DatasetError(f"line {lineno}: passages[{i}] missing field {fname!r}")
        try:
            start_byte, end_byte = int(p["start_byte"]), int(p["end_byte"])
        except (TypeError, ValueError):
            raise DatasetError(f"line {lineno}: passages[{i}] byte offsets must be integers") from None
        if start_byte >= end_byte:
            raise DatasetError(f"line {lineno}: passages[{i}] start_byte >= end_byte")
        if start_byte < 0:
            raise DatasetError(f"line {lineno}: passages[{i}] start_byte is negative")
        passages.append(PassageEvidence(
            start_sentence=str(p["start_sentence"]),
            end_sentence=str(p["end_sentence"]),
            start_byte=start_byte,
            end_byte=end_byte,
            excerpt=str(p["excerpt"]),
        ))
    try:
        category = normalize_category(str(need("category")))
    except DatasetError as exc:
        raise DatasetError(f"line {lineno}: {exc}") from None
    return QARecord(
        story_id=str(need("story_id")),
        story_title=str(need("story_title")),
        question_id=str(need("question_id")),
        category=category,
        question=str(need("question")),
        ground_truth=str(need("ground_truth")),
        passages=tuple(passages),
    )


def load_dataset(path: str | Path) -> list[QARecord]:
    """Parse and schema-validate a JSONL dataset file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON ({exc})") from exc
            if not isinstance(obj, dict):
                raise DatasetError(f"line {lineno}: record must be an object")
            records.append(_parse_record(obj, lineno))
    seen = Counter(r.question_id for r in records)
    dupes = [qid for qid, n in seen.items() if n > 1]
    if dupes:
        raise DatasetError(f"duplicate question_id values: {dupes[:5]}")
    return records


def dataset_summary(records: Sequence[QARecord]) -> dict:
    return {
        "total": len(records),
        "stories": dict(Counter(r.story_id for r in records)),
        "categories": dict(Counter(r.category for r in records)),
    }


@dataclass
class OffsetCheck:
    question_id: str
    passage_index: int
    status: str  # pass | fail | unverifiable
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[OffsetCheck] = field(default_factory=list)

    def counts(self) -> dict[str, int]:
        counter = Counter(c.status for c in self.checks)
        return {status: counter.get(status, 0) for status in ("pass", "fail", "unverifiable")}


def validate_offsets(records: Sequence[QARecord], story_texts: Mapping[str, str | bytes]) -> ValidationReport:
    """Check excerpt == story bytes[start:end) for every passage.

    Records whose story text is not supplied are marked unverifiable, not
    failed: the stories are public-domain sources the user provides.
    """
    story_bytes = {
        sid: text.encode("utf-8") if isinstance(text, str) else bytes(text)
        for sid, text in story_texts.items()
    }
    report = ValidationReport()
    for record in records:
        blob = story_bytes.get(record.story_id)
        for i, passage in enumerate(record.passages):
            if blob is None:
                report.checks.append(OffsetCheck(record.question_id, i, "unverifiable",
                                                 f"no story text for {record.story_id!r}"))
                continue
            actual = blob[passage.start_byte:passage.end_byte]
            expected = passage.excerpt.encode("utf-8")
            if actual == expected:
                report.checks.append(OffsetCheck(record.question_id, i, "pass"))
            else:
                snippet_got = actual[:60].decode("utf-8", "replace")
                snippet_want = expected[:60].decode("utf-8", "replace")
                report.checks.append(OffsetCheck(
                    record.question_id, i, "fail",
                    f"bytes[{passage.start_byte}:{passage.end_byte}) = {snippet_got!r} != excerpt {snippet_want!r}",
                ))
    return report


@dataclass(frozen=True)
class JudgeScore:
    judge_id: str
    sample_index: str
    mode: str
    score: int
    reason: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.score, int) or not 1 <= self.score <= 10:
            raise ValueError(f"score must be an integer in 1..10, got {self.score!r}")


@dataclass
class ScoreTable:
    modes: dict[str, dict] = field(default_factory=dict)
    categories: dict[str, dict[str, dict]] = field(default_factory=dict)
    ranking: list[str] = field(default_factory=list)
    n_samples: int = 0
    n_judges: int = 0

    def as_dict(self) -> dict:
        return {
            "modes": self.modes,
            "categories": self.categories,
            "ranking": self.ranking,
            "n_samples": self.n_samples,
            "n_judges": self.n_judges,
        }


def _double_mean(cells: dict[tuple[str, str], int]) -> Optional[float]:
    """Mean over judges of each judge's mean over its present samples."""
    by_judge: dict[str, list[int]] = {}
    for (judge_id, _), score in cells.items():
        by_judge.setdefault(judge_id, []).append(score)
    if not by_judge:
        return None
    judge_means = [sum(v) / len(v) for v in by_judge.values()]
    return sum(judge_means) / len(judge_means)


def score_aggregate(
    scores: Iterable[JudgeScore],
    sample_categories: Optional[Mapping[str, str]] = None,
) -> ScoreTable:
    """Aggregate judge scores into overall and per-category mode tables.

    Missing cells are excluded pairwise: a judge's mean runs over the samples
    it actually scored, and the overall score is the mean of those per-judge
    means. Duplicate (judge, sample, mode) cells are rejected.
    """
    cells: dict[str, dict[tuple[str, str], int]] = {}
    for s in scores:
        key = (s.judge_id, s.sample_index)
        mode_cells = cells.setdefault(s.mode, {})
        if key in mode_cells:
            raise ValueError(f"duplicate score cell for mode={s.mode} judge={s.judge_id} sample={s.sample_index}")
        mode_cells[key] = s.score

    all_samples = sorted({k[1] for m in cells.values() for k in m})
    all_judges = sorted({k[0] for m in cells.values() for k in m})

    table = ScoreTable(n_samples=len(all_samples), n_judges=len(all_judges))
    for mode in sorted(cells):
        mode_cells = cells[mode]
        avg = _double_mean(mode_cells)
        table.modes[mode] = {
            "avg_score": avg,
            "total": sum(mode_cells.values()),
            "cells": len(mode_cells),
            "effective_n": len({k[1] for k in mode_cells}),
        }

    if sample_categories:
        category_samples: dict[str, set[str]] = {}
        for sample_id, category in sample_categories.items():
            category_samples.setdefault(category, set()).add(sample_id)
        for category in sorted(category_samples):
            members = category_samples[category]
            per_mode = {}
            for mode in sorted(cells):
                sub = {k: v for k, v in cells[mode].items() if k[1] in members}
                if not sub:
                    continue
                per_mode[mode] = {
                    "avg_score": _double_mean(sub),
                    "total": sum(sub.values()),
                    "cells": len(sub),
                    "effective_n": len({k[1] for k in sub}),
                    "unstable": len(members) < UNSTABLE_CATEGORY_THRESHOLD,
                }
            if per_mode:
                table.categories[category] = per_mode

    table.ranking = sorted(
        table.modes,
        key=lambda m: (-(table.modes[m]["avg_score"] or 0.0), m),
    )
    return table


# --- benchmark orchestration ------------------------------------------------

def _safe_name(name: str) -> str:
    cleaned = re.sub(r"[^A-Za-z0-9._-]+", "_", name)
    return cleaned or "unnamed"


@dataclass
class Judge:
    """One LLM judge: grades all mode answers for a sample in a single call."""

    judge_id: str
    chat: Any
    max_tokens: int = 2048

    def grade(self, question: str, ground_truth: str,
              answers: Sequence[tuple[str, str]]) -> tuple[list[dict], str]:
        """Returns (parsed verdicts, raw response). Malformed output gets one
        reprompt; a second failure returns no verdicts (cells go missing)."""
        payload = [{"mode": mode, "answer": answer} for mode, answer in answers]
        prompt = prompts.judge_prompt(question, ground_truth, payload)
        expected = {mode for mode, _ in answers}
        raw = self.chat.complete(prompt, self.max_tokens, purpose="judge")
        verdicts = self._parse(raw, expected)
        if verdicts is None:
            raw = self.chat.complete(prompt + prompts.REPROMPT_SUFFIX, self.max_tokens, purpose="judge")
            verdicts = self._parse(raw, expected)
        return (verdicts if verdicts is not None else []), raw

    @staticmethod
    def _parse(raw: str, expected_modes: set[str]) -> Optional[list[dict]]:
        try:
            value, _ = parse_model_json(raw)
        except JsonRecoveryError:
            return None
        if isinstance(value, dict):
            # The rubric's documented failure shape: {"error": "..."}.
            return None
        if not isinstance(value, list):
            return None
        verdicts = []
        for item in value:
            if not isinstance(item, dict):
                continue
            mode = item.get("mode")
            score = item.get("score")
            if mode not in expected_modes:
                continue
            if not isinstance(score, int) or not 1 <= score <= 10:
                continue
            verdicts.append({"mode": mode, "score": score, "reason": str(item.get("reason", ""))})
        return verdicts


@dataclass
class BenchmarkResult:
    table: ScoreTable
    scores: list[JudgeScore]
    excluded_samples: list[str]
    answer_calls: int
    report_json: Path
    report_md: Path


def run_benchmark(
    records: Sequence[QARecord],
    answerers: Sequence[Any],
    judges: Sequence[Judge],
    out_dir: str | Path,
    seed: int = 0,
) -> BenchmarkResult:
    """Answer every question with every mode, judge, aggregate, and report.

    Answers and judgments are cached under out_dir; a warm rerun issues zero
    generation calls. Mode answers are presented to each judge in an order
    shuffled per sample with the fixed seed (position-bias mitigation); the
    seed is logged in the report.
    """
    if not answerers or not judges:
        raise ValueError("need at least one answerer and one judge")
    out_dir = Path(out_dir)
    answers_dir = out_dir / "answers"
    judgments_dir = out_dir / "judgments"
    answers_dir.mkdir(parents=True, exist_ok=True)
    judgments_dir.mkdir(parents=True, exist_ok=True)

    mode_names = [a.name for a in answerers]
    if len(set(mode_names)) != len(mode_names):
        raise ValueError("answerer names must be unique")

    answer_calls = 0
    answers: dict[tuple[str, str], str] = {}
    for answerer in answerers:
        mode_dir = answers_dir / _safe_name(answerer.name)
        mode_dir.mkdir(parents=True, exist_ok=True)
        for record in records:
            cache_path = mode_dir / f"{_safe_name(record.question_id)}.json"
            if cache_path.exists():
                cached = json.loads(cache_path.read_text(encoding="utf-8"))
                answers[(answerer.name, record.question_id)] = cached["answer"]
                continue
            text = answerer.answer(record.question)
            answer_calls += 1
            cache_path.write_text(
                json.dumps({"mode": answerer.name, "question_id": record.question_id, "answer": text},
                           ensure_ascii=False, sort_keys=True, indent=2) + "\n",
                encoding="utf-8",
            )
            answers[(answerer.name, record.question_id)] = text

    scores: list[JudgeScore] = []
    excluded: list[str] = []
    for record in records:
        rng = random.Random(f"{seed}:{record.question_id}")
        order = list(mode_names)
        rng.shuffle(order)
        presented = [(m, answers[(m, record.question_id)]) for m in order]
        sample_scored = False
        for judge in judges:
            judge_dir = judgments_dir / _safe_name(judge.judge_id)
            judge_dir.mkdir(parents=True, exist_ok=True)
            cache_path = judge_dir / f"{_safe_name(record.question_id)}.json"
            if cache_path.exists():
                cached = json.loads(cache_path.read_text(encoding="utf-8"))
                verdicts = cached["verdicts"]
            else:
                verdicts, raw = judge.grade(record.question, record.ground_truth, presented)
                cache_path.write_text(
                    json.dumps({
                        "judge": judge.judge_id, "question_id": record.question_id,
                        "order": order, "verdicts": verdicts, "raw": raw,
                    }, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8",
                )
            if verdicts:
                sample_scored = True
            for verdict in verdicts:
                scores.append(JudgeScore(
                    judge_id=judge.judge_id,
                    sample_index=record.question_id,
                    mode=verdict["mode"],
                    score=verdict["score"],
                    reason=verdict.get("reason", ""),
                ))
        if not sample_scored:
            excluded.append(record.question_id)
            logger.warning("sample %s excluded: every judge failed", record.question_id)

    sample_categories = {r.question_id: r.category for r in records if r.question_id not in excluded}
    table = score_aggregate(scores, sample_categories)

    report = {
        "seed": seed,
        "modes": table.modes,
        "categories": table.categories,
        "ranking": table.ranking,
        "n_samples": table.n_samples,
        "n_judges": table.n_judges,
        "judges": sorted(j.judge_id for j in judges),
        "excluded_samples": sorted(excluded),
        "unstable_threshold": UNSTABLE_CATEGORY_THRESHOLD,
    }
    report_json = out_dir / "report.json"
    report_json.write_text(
        json.dumps(report, ensure_ascii=False, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    report_md = out_dir / "report.md"
    report_md.write_text(_render_report_md(report), encoding="utf-8")

    return BenchmarkResult(
        table=table,
        scores=scores,
        excluded_samples=excluded,
        answer_calls=answer_calls,
        report_json=report_json,
        report_md=report_md,
    )


def _render_report_md(report: dict) -> str:
    lines = [
        "# Benchmark report",
        "",
        f"- Samples: {report['n_samples']}",
        f"- Judges ({report['n_judges']}): {', '.join(report['judges'])}",
        f"- Answer order seed: {report['seed']}",
        f"- Excluded samples: {report['excluded_samples'] or 'none'}",
        "",
        "## Overall",
        "",
        "| Rank | Mode | Avg Score | Total | Effective N |",
        "|-----:|------|----------:|------:|------------:|",
    ]
    for rank, mode in enumerate(report["ranking"], start=1):
        row = report["modes"][mode]
        avg = f"{row['avg_score']:.4f}" if row["avg_score"] is not None else "-"
        lines.append(f"| {rank} | {mode} | {avg} | {row['total']} | {row['effective_n']} |")
    for category in sorted(report["categories"]):
        per_mode = report["categories"][category]
        unstable = any(row.get("unstable") for row in per_mode.values())
        suffix = " (unstable: too few samples)" if unstable else ""
        lines += ["", f"## Category: {category}{suffix}", "",
                  "| Rank | Mode | Avg Score | Total | Effective N |",
                  "|-----:|------|----------:|------:|------------:|"]
        ordered = sorted(per_mode, key=lambda m: (-(per_mode[m]["avg_score"] or 0.0), m))
        for rank, mode in enumerate(ordered, start=1):
            row = per_mode[mode]
            avg = f"{row['avg_score']:.4f}" if row["avg_score"] is not None else "-"
            lines.append(f"| {rank} | {mode} | {avg} | {row['total']} | {row['effective_n']} |")
    lines.append("")
    return "\n".join(lines)
