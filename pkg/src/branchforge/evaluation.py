"""Judge-model scoring of story chunks on five linguistic aspects.

Each chunk is scored per aspect by a chat model at temperature 0, using a
two-step prompt: the judge first articulates its criteria for the aspect,
then scores the passage against them. Per-chunk scores persist in the store
so a game is evaluated once; the report is always recomputed from the
persisted scores, never cached.
"""

from __future__ import annotations

import enum
import hashlib
import statistics
from dataclasses import dataclass
from typing import Optional

from .errors import (EmptyGame, JudgeMalformed, NoObjectFound, ParseError,
                     SchemaViolation)
from .gateway import ChatParams, ProviderResponse, extract_structured
from .models import (NARRATOR, ConversationHistory, Message, StoryChunk,
                     StoryData)
from .prompts import PromptKit
from .schemas import JUDGE_SCORE_SCHEMA
from .store import GraphStore

SCORE_MIN, SCORE_MAX = 0.0, 10.0


class Aspect(enum.Enum):
    COHERENCE = "coherence"
    INSPIRATION = "inspiration"
    NARRATIVE_FLUENCY = "narrative_fluency"
    READABILITY = "readability"
    WORD_COMPLEXITY = "word_complexity"


ASPECT_DESCRIPTIONS = {
    Aspect.COHERENCE: ("Judge whether events, characters and references "
                       "stay consistent and connected across the passage."),
    Aspect.INSPIRATION: ("Judge how strongly the passage draws on and stays "
                         "true to the story's stated themes."),
    Aspect.NARRATIVE_FLUENCY: ("Judge how smoothly the narration flows from "
                               "line to line, with natural transitions."),
    Aspect.READABILITY: ("Judge how clear and easy to follow the prose is."),
    Aspect.WORD_COMPLEXITY: ("Judge the sophistication and variety of the "
                             "vocabulary used."),
}


@dataclass(frozen=True)
class ChunkScores:
    chunk_id: str
    scores: dict  # Aspect value -> float
    judge_failures: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"chunk_id": self.chunk_id, "scores": dict(self.scores),
                "judge_failures": list(self.judge_failures)}

    @classmethod
    def from_dict(cls, d: dict) -> "ChunkScores":
        return cls(chunk_id=d["chunk_id"], scores=dict(d["scores"]),
                   judge_failures=tuple(d.get("judge_failures", [])))


@dataclass(frozen=True)
class GameReport:
    story_id: str
    per_aspect: dict  # aspect value -> {"mean", "sd", "count"}
    overall_mean: Optional[float]
    overall_sd: Optional[float]
    coverage: float
    chunk_count: int

    def to_dict(self) -> dict:
        return {
            "story_id": self.story_id,
            "per_aspect": {k: dict(v) for k, v in self.per_aspect.items()},
            "overall_mean": self.overall_mean,
            "overall_sd": self.overall_sd,
            "coverage": self.coverage,
            "chunk_count": self.chunk_count,
        }


def chunk_judge_text(chunk: StoryChunk, sd: Optional[StoryData] = None) -> str:
    """Flatten a chunk into the passage the judge reads."""
    def speaker_name(entry):
        if entry.speaker == NARRATOR:
            return "Narrator"
        if sd is not None and not entry.unknown_speaker:
            match = next((c for c in sd.main_characters
                          if c.id == entry.speaker), None)
            if match:
                return match.name
        return entry.speaker

    lines = [f"Story so far: {chunk.story_so_far}", ""]
    lines += [f"{speaker_name(n)}: {n.text}" for n in chunk.narratives]
    if chunk.choices:
        lines.append("")
        lines.append("Choices offered:")
        lines += [f"- {c.text}" for c in chunk.choices]
    return "\n".join(lines)


class Evaluator:
    """Scores games with a judge provider and aggregates the results."""

    def __init__(self, store: GraphStore, judge_provider,
                 params: Optional[ChatParams] = None,
                 prompt_kit: Optional[PromptKit] = None):
        params = params or ChatParams(temperature=0.0, model_id="judge")
        if params.temperature != 0:
            raise ValueError("judge calls must run at temperature 0")
        self.store = store
        self.judge = judge_provider
        self.params = params
        self.kit = prompt_kit or PromptKit()
        self._criteria: dict[Aspect, str] = {}

    def _criteria_for(self, aspect: Aspect) -> str:
        if aspect not in self._criteria:
            prompt = self.kit.render_judge_criteria(
                aspect.value, ASPECT_DESCRIPTIONS[aspect])
            response = self.judge.complete(_user_history(prompt), self.params)
            self._criteria[aspect] = response.text.strip()
        return self._criteria[aspect]

    def score_chunk(self, chunk: StoryChunk, aspect: Aspect,
                    sd: Optional[StoryData] = None) -> float:
        """One aspect score in [0, 10]; malformed judge output raises."""
        criteria = self._criteria_for(aspect)
        prompt = self.kit.render_judge_score(
            aspect.value, criteria, chunk_judge_text(chunk, sd))
        response = self.judge.complete(_user_history(prompt), self.params)
        try:
            obj = extract_structured(response.text, JUDGE_SCORE_SCHEMA)
        except (NoObjectFound, ParseError, SchemaViolation) as e:
            raise JudgeMalformed(str(e)) from e
        score = float(obj["score"])
        if not SCORE_MIN <= score <= SCORE_MAX:
            raise JudgeMalformed(f"score {score} outside [0, 10]")
        return score

    def evaluate_game(self, story_id: str) -> GameReport:
        """Score every chunk once and aggregate; reuses persisted scores."""
        sd = self.store.get_story(story_id)
        chunks = self.store.story_chunks(story_id)
        if not chunks:
            raise EmptyGame(story_id)

        existing = self.store.chunk_scores(story_id)
        for chunk_id, chunk in sorted(chunks.items()):
            if chunk_id in existing:
                continue
            scores: dict[str, float] = {}
            failures: list[str] = []
            for aspect in Aspect:
                try:
                    scores[aspect.value] = self.score_chunk(chunk, aspect, sd)
                except JudgeMalformed:
                    failures.append(aspect.value)
            record = ChunkScores(chunk_id, scores, tuple(failures))
            self.store.put_chunk_scores(story_id, chunk_id, record.to_dict())
        return compute_report(
            story_id,
            [ChunkScores.from_dict(d)
             for d in self.store.chunk_scores(story_id).values()])


def compute_report(story_id: str,
                   chunk_scores: list[ChunkScores]) -> GameReport:
    """Aggregate per-chunk scores into the per-aspect and overall figures.

    Aspects a chunk failed are excluded from that aspect's mean rather than
    zero-filled. The overall mean is the mean of the aspect means; the
    overall sd pools every per-chunk per-aspect score. Standard deviations
    are population sds.
    """
    per_aspect = {}
    pooled: list[float] = []
    for aspect in Aspect:
        values = [cs.scores[aspect.value] for cs in chunk_scores
                  if aspect.value in cs.scores]
        pooled.extend(values)
        per_aspect[aspect.value] = {
            "mean": statistics.fmean(values) if values else None,
            "sd": statistics.pstdev(values) if values else None,
            "count": len(values),
        }
    aspect_means = [v["mean"] for v in per_aspect.values()
                    if v["mean"] is not None]
    fully_scored = sum(1 for cs in chunk_scores if not cs.judge_failures)
    return GameReport(
        story_id=story_id,
        per_aspect=per_aspect,
        overall_mean=statistics.fmean(aspect_means) if aspect_means else None,
        overall_sd=statistics.pstdev(pooled) if pooled else None,
        coverage=fully_scored / len(chunk_scores) if chunk_scores else 0.0,
        chunk_count=len(chunk_scores),
    )


_COLUMNS = ("ID", "Approach", "Avg. Score", "Cohe.", "Insp.", "Narr.",
            "Read.", "Word.")


def render_report_table(rows: list[tuple[str, str, GameReport]]) -> str:
    """Plain-text table: one line per (story_id, approach, report)."""
    def cell(mean, sd):
        if mean is None:
            return "-"
        return f"{mean:.2f} ± {sd:.2f}"

    lines = ["\t".join(_COLUMNS)]
    for story_id, approach, report in rows:
        cells = [story_id[:4], approach,
                 cell(report.overall_mean, report.overall_sd)]
        for aspect in Aspect:
            stats = report.per_aspect[aspect.value]
            cells.append(cell(stats["mean"], stats["sd"]))
        lines.append("\t".join(cells))
    return "\n".join(lines)


class MockJudgeProvider:
    """Deterministic judge: criteria are fixed, scores derive from the
    prompt hash so repeated evaluations agree."""

    def complete(self, history, params):
        text = history.messages[-1].content
        if "Fill in this output template" in text:
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            score = 4.0 + (int.from_bytes(digest[:4], "big") % 500) / 100.0
            body = f'```\n{{"score": {score:.2f}}}\n```'
        else:
            body = "1. Be consistent.\n2. Stay on theme.\n3. Read well."
        return ProviderResponse(text=body, input_tokens=0, output_tokens=0)


def _user_history(text: str) -> ConversationHistory:
    return ConversationHistory((Message("user", text),))
