"""Corpus analyses over generated games: word frequencies and sentiment.

Text is lowercased, split on non-alphanumeric boundaries, and stripped of
single-character tokens and stop words before any counting. Counts cover
everything the player reads: narration and dialogue, choices and the
story-so-far summaries. Percent figures are always recomputed from the raw
counts.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import LexiconOverlap
from .store import GraphStore

DATA_DIR = Path(__file__).parent / "data"
_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


def load_wordlist(path) -> frozenset[str]:
    """One word per line; blank lines and ``;`` comment lines are skipped."""
    words = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip().lower()
        if line and not line.startswith(";"):
            words.add(line)
    return frozenset(words)


DEFAULT_STOPWORDS = load_wordlist(DATA_DIR / "stopwords.txt")


def fixture_lexicon() -> "Lexicon":
    return Lexicon(load_wordlist(DATA_DIR / "fixture_positive.txt"),
                   load_wordlist(DATA_DIR / "fixture_negative.txt"))


@dataclass(frozen=True)
class Lexicon:
    positive: frozenset[str]
    negative: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "positive", frozenset(self.positive))
        object.__setattr__(self, "negative", frozenset(self.negative))
        overlap = self.positive & self.negative
        if overlap:
            raise LexiconOverlap(
                f"lexicon sets share words: {', '.join(sorted(overlap)[:5])}")

    @classmethod
    def from_files(cls, positive_path, negative_path) -> "Lexicon":
        return cls(load_wordlist(positive_path), load_wordlist(negative_path))


@dataclass(frozen=True)
class SentimentSummary:
    n_pos: int
    n_neg: int
    n_total: int
    pct_pos: float
    pct_neg: float
    empty_corpus: bool = False

    def to_dict(self) -> dict:
        return {"n_pos": self.n_pos, "n_neg": self.n_neg,
                "n_total": self.n_total, "pct_pos": self.pct_pos,
                "pct_neg": self.pct_neg, "empty_corpus": self.empty_corpus}


def preprocess(text: str,
               stopwords: frozenset[str] = DEFAULT_STOPWORDS) -> list[str]:
    """Lowercase, split, and drop punctuation, single chars and stop words."""
    tokens = _TOKEN_SPLIT.split(text.lower())
    return [t for t in tokens if len(t) > 1 and t not in stopwords]


def game_texts(store: GraphStore, story_id: str) -> Iterable[str]:
    """Every player-facing text of one game."""
    for chunk in store.story_chunks(story_id).values():
        yield chunk.story_so_far
        for n in chunk.narratives:
            yield n.text
        for c in chunk.choices:
            yield c.text


def word_frequencies(store: GraphStore, story_ids: Iterable[str],
                     stopwords: frozenset[str] = DEFAULT_STOPWORDS,
                     ) -> Counter:
    freqs: Counter = Counter()
    for story_id in story_ids:
        for text in game_texts(store, story_id):
            freqs.update(preprocess(text, stopwords))
    return freqs


def top_n(freqs: Counter, n: int) -> list[tuple[str, int]]:
    """Highest counts first; ties broken alphabetically."""
    return sorted(freqs.items(), key=lambda kv: (-kv[1], kv[0]))[:n]


def sentiment_percentages(n_pos: int, n_neg: int,
                          n_total: int) -> tuple[float, float]:
    """Percent of total tokens, rounded to two decimals; 0.00 on empty."""
    if n_total == 0:
        return 0.0, 0.0
    return (round(100.0 * n_pos / n_total, 2),
            round(100.0 * n_neg / n_total, 2))


def sentiment_counts(store: GraphStore, story_ids: Iterable[str],
                     lexicon: Lexicon,
                     stopwords: frozenset[str] = DEFAULT_STOPWORDS,
                     ) -> SentimentSummary:
    n_pos = n_neg = n_total = 0
    for story_id in story_ids:
        for text in game_texts(store, story_id):
            for token in preprocess(text, stopwords):
                n_total += 1
                if token in lexicon.positive:
                    n_pos += 1
                elif token in lexicon.negative:
                    n_neg += 1
    pct_pos, pct_neg = sentiment_percentages(n_pos, n_neg, n_total)
    return SentimentSummary(n_pos, n_neg, n_total, pct_pos, pct_neg,
                            empty_corpus=n_total == 0)


def format_frequency_table(entries: list[tuple[str, int]]) -> str:
    return "\n".join(f"{word}\t{count}" for word, count in entries)


def format_sentiment_table(rows: list[tuple[str, SentimentSummary]]) -> str:
    """Rows of (label, summary) in the #Positive / #Negative / #Total shape."""
    lines = ["Approach\t#Positive\t#Negative\t#Total"]
    for label, s in rows:
        lines.append(
            f"{label}\t{s.n_pos:,} ({s.pct_pos:.2f}%)"
            f"\t{s.n_neg:,} ({s.pct_neg:.2f}%)\t{s.n_total:,}")
    return "\n".join(lines)
