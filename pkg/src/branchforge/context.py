"""Rolling-history overflow policy for per-branch conversation histories.

A history overflows once its token count exceeds 80% of the budget; it is
then cut back to at most 60%. Truncation keeps the pinned story-data prefix
verbatim and retains the longest possible contiguous suffix of the remaining
messages that starts on a user message, so role alternation survives and no
message is ever rewritten or reordered.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .errors import LatestUserMessageOverflow, PinnedPrefixOverflow
from .gateway import count_tokens, heuristic_message_tokens
from .models import ConversationHistory, Message


@dataclass(frozen=True)
class OverflowPolicy:
    max_tokens: int
    trigger_fraction: float = 0.8
    target_fraction: float = 0.6
    pinned_prefix_len: int = 2

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if not 0 < self.target_fraction < self.trigger_fraction <= 1:
            raise ValueError("need 0 < target < trigger <= 1")
        if self.pinned_prefix_len < 0:
            raise ValueError("pinned_prefix_len must be >= 0")

    @property
    def trigger_tokens(self) -> float:
        return self.trigger_fraction * self.max_tokens

    @property
    def target_tokens(self) -> float:
        return self.target_fraction * self.max_tokens


TokenCounter = Callable[[Message], int]


def needs_truncation(history: ConversationHistory, policy: OverflowPolicy,
                     counter: TokenCounter = heuristic_message_tokens,
                     ) -> bool:
    """True iff the history strictly exceeds the trigger threshold."""
    return count_tokens(history, counter) > policy.trigger_tokens


def truncate(history: ConversationHistory, policy: OverflowPolicy,
             counter: TokenCounter = heuristic_message_tokens,
             ) -> ConversationHistory:
    """Drop the oldest unpinned messages until the target budget fits.

    The result is always ``pinned prefix ++ suffix`` where the suffix is the
    longest user-led suffix of the input whose tokens, together with the
    prefix, fit within ``target_fraction * max_tokens``. Messages are kept
    verbatim and in order.
    """
    pinned = history.pinned_prefix
    tail = history.messages[len(pinned):]
    pinned_tokens = sum(counter(m) for m in pinned)
    if pinned_tokens > policy.target_tokens:
        raise PinnedPrefixOverflow(
            f"pinned prefix is {pinned_tokens} tokens; target is "
            f"{policy.target_tokens:.0f}")

    # Longest admissible suffix = the earliest user-led start that fits.
    suffix_tokens = 0
    cut = None
    candidates = []
    for i in range(len(tail) - 1, -1, -1):
        suffix_tokens += counter(tail[i])
        if tail[i].role == "user":
            candidates.append((i, suffix_tokens))
    for i, tokens in reversed(candidates):
        if pinned_tokens + tokens <= policy.target_tokens:
            cut = i
            break
    if cut is None:
        raise LatestUserMessageOverflow(
            "no user-led suffix fits within the target budget")
    return ConversationHistory(pinned + tail[cut:])


def prepare_history(parent_history: ConversationHistory, new_prompt: Message,
                    policy: OverflowPolicy,
                    counter: TokenCounter = heuristic_message_tokens,
                    ) -> ConversationHistory:
    """Append the new user prompt, truncating first if that overflows."""
    if new_prompt.role != "user":
        raise ValueError("new_prompt must have role user")
    appended = parent_history.append(new_prompt)
    if needs_truncation(appended, policy, counter):
        return truncate(appended, policy, counter)
    return appended
