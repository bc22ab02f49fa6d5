"""Core domain types for branching story generation.

Every type here is an immutable value (frozen dataclass, list fields
normalised to tuples) so instances can be shared freely between workers.
Encoding is plain dicts of JSON-compatible values; ``to_dict``/``from_dict``
round-trip field-for-field. Validators return violations as data instead of
raising, because invalid model output is an expected, recoverable event.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields
from typing import Optional

NARRATOR = "NARRATOR"


class BranchingStatus(enum.Enum):
    BRANCHING_WITHOUT_CHOICE = "BRANCHING_WITHOUT_CHOICE"
    BRANCHING_WITH_CHOICE = "BRANCHING_WITH_CHOICE"
    CHAPTER_END = "CHAPTER_END"
    GAME_END = "GAME_END"

    @property
    def bears_choices(self) -> bool:
        return self in (BranchingStatus.BRANCHING_WITHOUT_CHOICE,
                        BranchingStatus.BRANCHING_WITH_CHOICE)


class Mode(enum.Enum):
    DCPP = "dcpp"
    BASELINE = "baseline"


@dataclass(frozen=True)
class Violation:
    """One broken rule, named by the offending field."""

    field: str
    rule: str

    def __str__(self) -> str:
        return f"{self.field}: {self.rule}"


def _freeze(obj, name, converter=tuple):
    object.__setattr__(obj, name, converter(getattr(obj, name)))


@dataclass(frozen=True)
class GenerationConfig:
    """User-facing knobs controlling the size and shape of a generated game."""

    themes: tuple[str, ...] = ()
    game_genre: str = "visual novel"
    num_chapters: int = 3
    num_endings: int = 3
    num_main_characters: int = 5
    num_main_scenes: int = 5
    min_choice_opportunities: int = 1
    max_choice_opportunities: int = 2
    min_choices: int = 2
    max_choices: int = 3
    mode: Mode = Mode.DCPP
    seed: int = 0
    max_context_tokens: int = 16000
    max_retries: int = 5
    # Off reproduces the lenient behaviour where under-generated choice lists
    # are accepted instead of retried.
    strict_choices: bool = True

    def __post_init__(self):
        _freeze(self, "themes")
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", Mode(self.mode))
        for name in ("num_chapters", "num_endings", "num_main_characters",
                     "num_main_scenes", "min_choice_opportunities",
                     "max_choice_opportunities", "min_choices", "max_choices",
                     "max_context_tokens", "max_retries"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.min_choice_opportunities > self.max_choice_opportunities:
            raise ValueError("min_choice_opportunities exceeds max")
        if self.min_choices > self.max_choices:
            raise ValueError("min_choices exceeds max_choices")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["themes"] = list(self.themes)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationConfig":
        return cls(**d)


@dataclass(frozen=True)
class CharacterProfile:
    id: str
    name: str
    age: str = ""
    gender: str = ""
    species: str = ""
    physical_appearance: str = ""
    role_description: str = ""
    asset_ref: Optional[str] = None

    def to_dict(self) -> dict:
        return _strip_nones({
            "id": self.id, "name": self.name, "age": self.age,
            "gender": self.gender, "species": self.species,
            "physical_appearance": self.physical_appearance,
            "role_description": self.role_description,
            "asset_ref": self.asset_ref,
        })

    @classmethod
    def from_dict(cls, d: dict) -> "CharacterProfile":
        return cls(**d)


@dataclass(frozen=True)
class SceneSpec:
    id: str
    name: str
    location: str = ""
    description: str = ""
    asset_ref: Optional[str] = None

    def to_dict(self) -> dict:
        return _strip_nones({
            "id": self.id, "name": self.name, "location": self.location,
            "description": self.description, "asset_ref": self.asset_ref,
        })

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(**d)


@dataclass(frozen=True)
class EndingSpec:
    id: str
    label: str
    description: str = ""

    def to_dict(self) -> dict:
        return {"id": self.id, "label": self.label,
                "description": self.description}

    @classmethod
    def from_dict(cls, d: dict) -> "EndingSpec":
        return cls(**d)


@dataclass(frozen=True)
class StoryData:
    """The root narrative elements every chunk of a game builds on."""

    id: str
    title: str
    genre: str
    themes: tuple[str, ...]
    main_scenes: tuple[SceneSpec, ...]
    main_characters: tuple[CharacterProfile, ...]
    synopsis: str
    chapter_synopses: tuple[str, ...]
    beginning: str
    endings: tuple[EndingSpec, ...]

    def __post_init__(self):
        for name in ("themes", "main_scenes", "main_characters",
                     "chapter_synopses", "endings"):
            _freeze(self, name)

    def character_by_name(self, name: str) -> Optional[CharacterProfile]:
        wanted = name.strip().lower()
        for c in self.main_characters:
            if c.name.strip().lower() == wanted:
                return c
        return None

    def scene_by_name(self, name: str) -> Optional[SceneSpec]:
        wanted = name.strip().lower()
        for s in self.main_scenes:
            if s.name.strip().lower() == wanted:
                return s
        return None

    def ending_by_id(self, ending_id: str) -> Optional[EndingSpec]:
        for e in self.endings:
            if e.id == ending_id:
                return e
        return None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "genre": self.genre,
            "themes": list(self.themes),
            "main_scenes": [s.to_dict() for s in self.main_scenes],
            "main_characters": [c.to_dict() for c in self.main_characters],
            "synopsis": self.synopsis,
            "chapter_synopses": list(self.chapter_synopses),
            "beginning": self.beginning,
            "endings": [e.to_dict() for e in self.endings],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StoryData":
        return cls(
            id=d["id"],
            title=d["title"],
            genre=d["genre"],
            themes=tuple(d["themes"]),
            main_scenes=tuple(SceneSpec.from_dict(s) for s in d["main_scenes"]),
            main_characters=tuple(
                CharacterProfile.from_dict(c) for c in d["main_characters"]),
            synopsis=d["synopsis"],
            chapter_synopses=tuple(d["chapter_synopses"]),
            beginning=d["beginning"],
            endings=tuple(EndingSpec.from_dict(e) for e in d["endings"]),
        )


@dataclass(frozen=True)
class NarrativeEntry:
    """One line of narration or dialogue.

    ``speaker`` is :data:`NARRATOR` or a character id. Speakers the model
    invented are kept verbatim with ``unknown_speaker`` set, never rejected:
    the player needs a fallback path, not a generation abort.
    """

    speaker: str
    text: str
    scene_id: Optional[str] = None
    unknown_speaker: bool = False

    def to_dict(self) -> dict:
        return _strip_nones({
            "speaker": self.speaker, "text": self.text,
            "scene_id": self.scene_id,
            "unknown_speaker": self.unknown_speaker,
        })

    @classmethod
    def from_dict(cls, d: dict) -> "NarrativeEntry":
        return cls(speaker=d["speaker"], text=d["text"],
                   scene_id=d.get("scene_id"),
                   unknown_speaker=d.get("unknown_speaker", False))


@dataclass(frozen=True)
class Choice:
    index: int
    text: str

    def to_dict(self) -> dict:
        return {"index": self.index, "text": self.text}

    @classmethod
    def from_dict(cls, d: dict) -> "Choice":
        return cls(**d)


@dataclass(frozen=True)
class StoryChunk:
    """One generated story segment: a node of the game graph."""

    id: str
    story_id: str
    chapter: int
    status: BranchingStatus
    story_so_far: str
    narratives: tuple[NarrativeEntry, ...]
    choices: tuple[Choice, ...] = ()
    selected_ending_id: Optional[str] = None
    history_ref: str = ""
    parent_id: Optional[str] = None
    parent_choice_index: Optional[int] = None

    def __post_init__(self):
        _freeze(self, "narratives")
        _freeze(self, "choices")
        if isinstance(self.status, str):
            object.__setattr__(self, "status", BranchingStatus(self.status))

    def to_dict(self) -> dict:
        return _strip_nones({
            "id": self.id,
            "story_id": self.story_id,
            "chapter": self.chapter,
            "status": self.status.value,
            "story_so_far": self.story_so_far,
            "narratives": [n.to_dict() for n in self.narratives],
            "choices": [c.to_dict() for c in self.choices],
            "selected_ending_id": self.selected_ending_id,
            "history_ref": self.history_ref,
            "parent_id": self.parent_id,
            "parent_choice_index": self.parent_choice_index,
        })

    @classmethod
    def from_dict(cls, d: dict) -> "StoryChunk":
        return cls(
            id=d["id"],
            story_id=d["story_id"],
            chapter=d["chapter"],
            status=BranchingStatus(d["status"]),
            story_so_far=d["story_so_far"],
            narratives=tuple(
                NarrativeEntry.from_dict(n) for n in d["narratives"]),
            choices=tuple(Choice.from_dict(c) for c in d.get("choices", [])),
            selected_ending_id=d.get("selected_ending_id"),
            history_ref=d.get("history_ref", ""),
            parent_id=d.get("parent_id"),
            parent_choice_index=d.get("parent_choice_index"),
        )


@dataclass(frozen=True)
class Message:
    role: str  # system | user | assistant
    content: str
    pinned: bool = False

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content,
                "pinned": self.pinned}

    @classmethod
    def from_dict(cls, d: dict) -> "Message":
        return cls(role=d["role"], content=d["content"],
                   pinned=d.get("pinned", False))


@dataclass(frozen=True)
class ConversationHistory:
    """Ordered messages with pinned ones forming a contiguous prefix."""

    messages: tuple[Message, ...] = ()

    def __post_init__(self):
        _freeze(self, "messages")
        seen_unpinned = False
        for m in self.messages:
            if m.pinned and seen_unpinned:
                raise ValueError("pinned messages must form a contiguous prefix")
            seen_unpinned = seen_unpinned or not m.pinned

    @property
    def pinned_prefix(self) -> tuple[Message, ...]:
        n = 0
        for m in self.messages:
            if not m.pinned:
                break
            n += 1
        return self.messages[:n]

    def append(self, message: Message) -> "ConversationHistory":
        return ConversationHistory(self.messages + (message,))

    def extend(self, other: "ConversationHistory") -> "ConversationHistory":
        return ConversationHistory(self.messages + other.messages)

    def __len__(self) -> int:
        return len(self.messages)

    def to_dict(self) -> dict:
        return {"messages": [m.to_dict() for m in self.messages]}

    @classmethod
    def from_dict(cls, d: dict) -> "ConversationHistory":
        return cls(tuple(Message.from_dict(m) for m in d["messages"]))


@dataclass(frozen=True)
class FrontierItem:
    """A pending chunk-generation work item.

    All random draws an expansion depends on (the chunk id, the ending pick,
    the next chapter's opportunity budget) happen at item-creation time and
    are stored here, so that parallel workers cannot perturb them.
    ``remaining_choice_opportunities`` counts the opportunities still owed to
    the chapter after this item's own chunk.
    """

    target_status: BranchingStatus
    chapter: int
    remaining_choice_opportunities: int
    chunk_id: str
    parent_chunk_id: Optional[str] = None
    selected_choice: Optional[Choice] = None
    selected_ending_id: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.target_status, str):
            object.__setattr__(
                self, "target_status", BranchingStatus(self.target_status))
        if (self.target_status is BranchingStatus.BRANCHING_WITH_CHOICE
                and self.selected_choice is None):
            raise ValueError("BRANCHING_WITH_CHOICE items need a selected choice")
        if self.remaining_choice_opportunities < 0:
            raise ValueError("remaining_choice_opportunities must be >= 0")

    def to_dict(self) -> dict:
        return _strip_nones({
            "target_status": self.target_status.value,
            "chapter": self.chapter,
            "remaining_choice_opportunities": self.remaining_choice_opportunities,
            "chunk_id": self.chunk_id,
            "parent_chunk_id": self.parent_chunk_id,
            "selected_choice": (self.selected_choice.to_dict()
                                if self.selected_choice else None),
            "selected_ending_id": self.selected_ending_id,
        })

    @classmethod
    def from_dict(cls, d: dict) -> "FrontierItem":
        choice = d.get("selected_choice")
        return cls(
            target_status=BranchingStatus(d["target_status"]),
            chapter=d["chapter"],
            remaining_choice_opportunities=d["remaining_choice_opportunities"],
            chunk_id=d["chunk_id"],
            parent_chunk_id=d.get("parent_chunk_id"),
            selected_choice=Choice.from_dict(choice) if choice else None,
            selected_ending_id=d.get("selected_ending_id"),
        )


def _strip_nones(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


# --- validators ----------------------------------------------------------

def validate_story_data(sd: StoryData,
                        cfg: GenerationConfig) -> list[Violation]:
    """Check story data against the configured element counts."""
    out: list[Violation] = []

    def check_len(name, seq, want):
        if len(seq) != want:
            out.append(Violation(name, f"expected {want} entries, got {len(seq)}"))

    check_len("main_characters", sd.main_characters, cfg.num_main_characters)
    check_len("main_scenes", sd.main_scenes, cfg.num_main_scenes)
    check_len("chapter_synopses", sd.chapter_synopses, cfg.num_chapters)
    check_len("endings", sd.endings, cfg.num_endings)

    ids = [sd.id]
    ids += [c.id for c in sd.main_characters]
    ids += [s.id for s in sd.main_scenes]
    ids += [e.id for e in sd.endings]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        out.append(Violation("id", f"duplicate ids: {', '.join(dupes)}"))

    for i, c in enumerate(sd.main_characters):
        if not c.name.strip():
            out.append(Violation(f"main_characters[{i}].name", "must be non-empty"))
    for i, s in enumerate(sd.main_scenes):
        if not s.name.strip():
            out.append(Violation(f"main_scenes[{i}].name", "must be non-empty"))
    for i, e in enumerate(sd.endings):
        if not e.label.strip():
            out.append(Violation(f"endings[{i}].label", "must be non-empty"))
    return out


def validate_chunk(c: StoryChunk, cfg: GenerationConfig) -> list[Violation]:
    """Check a story chunk against its status rules and the config bounds."""
    out: list[Violation] = []

    if not c.narratives:
        out.append(Violation("narratives", "must be non-empty"))
    if not 1 <= c.chapter <= cfg.num_chapters:
        out.append(Violation(
            "chapter", f"must be in [1, {cfg.num_chapters}], got {c.chapter}"))

    if c.status is BranchingStatus.GAME_END:
        if c.choices:
            out.append(Violation("choices", "GAME_END chunks carry no choices"))
        if not c.selected_ending_id:
            out.append(Violation(
                "selected_ending_id", "GAME_END chunks must name an ending"))
    elif c.status is BranchingStatus.CHAPTER_END:
        if c.choices:
            out.append(Violation("choices", "CHAPTER_END chunks carry no choices"))
    else:
        n = len(c.choices)
        if not cfg.min_choices <= n <= cfg.max_choices:
            out.append(Violation(
                "choices",
                f"expected between {cfg.min_choices} and {cfg.max_choices} "
                f"choices, got {n}"))

    if c.selected_ending_id and c.status is not BranchingStatus.GAME_END:
        out.append(Violation(
            "selected_ending_id", "only GAME_END chunks select an ending"))

    indices = [ch.index for ch in c.choices]
    if indices != list(range(len(indices))):
        out.append(Violation("choices", "indices must be contiguous from 0"))
    return out


__all__ = [
    "NARRATOR", "BranchingStatus", "Mode", "Violation", "GenerationConfig",
    "CharacterProfile", "SceneSpec", "EndingSpec", "StoryData",
    "NarrativeEntry", "Choice", "StoryChunk", "Message",
    "ConversationHistory", "FrontierItem", "validate_story_data",
    "validate_chunk",
]
