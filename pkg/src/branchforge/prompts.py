"""Prompt rendering for the chat and image models.

Wording lives in plain-text template files, one per :class:`PromptKind`, so
prompt engineering never requires a code change. Placeholders use the
``{{name}}`` form and are substituted in a single pass: text coming from
story data or config appears verbatim in the output and is never re-scanned,
which makes rendering total even when inputs contain ``{{`` markers.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .errors import MissingArgument, TemplateError, TypeMismatch
from .models import (CharacterProfile, Choice, EndingSpec, GenerationConfig,
                     SceneSpec, StoryData)
from .schemas import STORY_CHUNK_SCHEMA, STORY_DATA_SCHEMA

DEFAULT_TEMPLATES_DIR = Path(__file__).parent / "templates"

# The instruction that makes models wrap structured output in one fenced
# block; it appears exactly once in every chat template.
MAGIC_PHRASE = ("Respond with a single fenced code block that contains "
                "only the JSON object and nothing else.")


class PromptKind(enum.Enum):
    PLOT = "plot"
    CHUNK_UNTIL_CHOICE = "chunk_until_choice"
    CHUNK_WITH_CHOICE = "chunk_with_choice"
    CHAPTER_ENDING = "chapter_ending"
    GAME_ENDING = "game_ending"
    CHARACTER_IMAGE = "character_image"
    SCENE_IMAGE = "scene_image"

    @property
    def is_chat(self) -> bool:
        return self not in (PromptKind.CHARACTER_IMAGE, PromptKind.SCENE_IMAGE)


CHUNK_KINDS = (PromptKind.CHUNK_UNTIL_CHOICE, PromptKind.CHUNK_WITH_CHOICE,
               PromptKind.CHAPTER_ENDING, PromptKind.GAME_ENDING)

# Phrases unique to each default chat template; the scripted mock provider
# uses them to recognise what kind of request it received.
KIND_MARKERS = {
    PromptKind.PLOT: "Design the story data for a brand new game",
    PromptKind.CHUNK_UNTIL_CHOICE:
        "Continue the story from where it left off",
    PromptKind.CHUNK_WITH_CHOICE: "The player selected the choice",
    PromptKind.CHAPTER_ENDING: "Bring the current chapter to a close",
    PromptKind.GAME_ENDING: "Bring the story to its final conclusion",
}


@dataclass(frozen=True)
class RenderedPrompt:
    kind: PromptKind
    text: str
    expected_schema: Optional[str] = None


_PLACEHOLDER = re.compile(r"\{\{(\w+)\}\}")


def render_template(template: str, values: dict) -> str:
    """Substitute ``{{name}}`` markers in one pass; values appear verbatim."""
    def sub(match: re.Match) -> str:
        key = match.group(1)
        if key not in values:
            raise TemplateError(f"template references unknown placeholder "
                                f"{{{{{key}}}}}")
        return str(values[key])

    return _PLACEHOLDER.sub(sub, template)


class PromptKit:
    """Loads and renders the prompt templates from one directory."""

    def __init__(self, templates_dir: Optional[Path] = None):
        self.templates_dir = Path(templates_dir or DEFAULT_TEMPLATES_DIR)
        self._cache: dict[str, str] = {}

    def template(self, name: str) -> str:
        if name not in self._cache:
            path = self.templates_dir / f"{name}.txt"
            try:
                self._cache[name] = path.read_text(encoding="utf-8")
            except FileNotFoundError:
                raise TemplateError(f"missing template file {path}") from None
        return self._cache[name]

    def render_plot_prompt(self, cfg: GenerationConfig) -> RenderedPrompt:
        theme_clause = ""
        if cfg.themes:
            theme_clause = (" The story explores the themes: "
                            + ", ".join(cfg.themes) + ".")
        text = render_template(self.template("plot"), {
            "game_genre": cfg.game_genre,
            "theme_clause": theme_clause,
            "num_chapters": cfg.num_chapters,
            "num_endings": cfg.num_endings,
            "num_main_characters": cfg.num_main_characters,
            "num_main_scenes": cfg.num_main_scenes,
            "min_choice_opportunities": cfg.min_choice_opportunities,
            "max_choice_opportunities": cfg.max_choice_opportunities,
            "min_choices": cfg.min_choices,
            "max_choices": cfg.max_choices,
        })
        return RenderedPrompt(PromptKind.PLOT, text, STORY_DATA_SCHEMA)

    def render_chunk_prompt(self, kind: PromptKind, sd: StoryData,
                            chapter: int, cfg: GenerationConfig,
                            selected_choice: Optional[Choice] = None,
                            next_chapter_synopsis: Optional[str] = None,
                            ending: Optional[EndingSpec] = None,
                            ) -> RenderedPrompt:
        if kind not in CHUNK_KINDS:
            raise TypeMismatch(f"{kind} is not a chunk prompt kind")
        num_chapters = len(sd.chapter_synopses)
        if kind is PromptKind.CHUNK_WITH_CHOICE and selected_choice is None:
            raise MissingArgument("CHUNK_WITH_CHOICE requires selected_choice")
        if (kind is PromptKind.CHAPTER_ENDING and chapter < num_chapters
                and next_chapter_synopsis is None):
            raise MissingArgument(
                "CHAPTER_ENDING before the last chapter requires "
                "next_chapter_synopsis")
        if kind is PromptKind.GAME_ENDING and ending is None:
            raise MissingArgument("GAME_ENDING requires ending")

        values = {
            "chapter": chapter,
            "num_chapters": num_chapters,
            "chapter_synopsis": sd.chapter_synopses[chapter - 1],
            "min_choices": cfg.min_choices,
            "max_choices": cfg.max_choices,
        }
        if kind is PromptKind.CHUNK_WITH_CHOICE:
            values["selected_choice"] = selected_choice.text
        if kind in (PromptKind.CHAPTER_ENDING, PromptKind.GAME_ENDING):
            # Worded differently from the with-choice template so each
            # rendered prompt matches exactly one kind marker.
            values["selected_choice_clause"] = (
                f'\nFollowing the player\'s choice: "{selected_choice.text}"\n'
                if selected_choice else "")
        if kind is PromptKind.CHAPTER_ENDING:
            values["next_chapter_clause"] = (
                "\nThe synopsis of the next chapter, which this ending "
                f"should lead into, is:\n{next_chapter_synopsis}\n"
                if next_chapter_synopsis else "")
        if kind is PromptKind.GAME_ENDING:
            values["ending_label"] = ending.label
            values["ending_description"] = ending.description

        text = render_template(self.template(kind.value), values)
        return RenderedPrompt(kind, text, STORY_CHUNK_SCHEMA)

    def render_image_prompt(self, kind: PromptKind,
                            subject: Union[CharacterProfile, SceneSpec],
                            ) -> RenderedPrompt:
        if kind is PromptKind.CHARACTER_IMAGE:
            if not isinstance(subject, CharacterProfile):
                raise TypeMismatch("CHARACTER_IMAGE requires a CharacterProfile")
            values = {
                "name_clause": _clause("The character is named", subject.name),
                "age_clause": _clause("Age:", subject.age),
                "gender_clause": _clause("Gender:", subject.gender),
                "species_clause": _clause("Species:", subject.species),
                "appearance_clause": _clause("Physical appearance:",
                                             subject.physical_appearance),
            }
        elif kind is PromptKind.SCENE_IMAGE:
            if not isinstance(subject, SceneSpec):
                raise TypeMismatch("SCENE_IMAGE requires a SceneSpec")
            values = {
                "name_clause": _clause("The scene is called", subject.name),
                "location_clause": _clause("Location:", subject.location),
                "description_clause": _clause("Description:",
                                              subject.description),
            }
        else:
            raise TypeMismatch(f"{kind} is not an image prompt kind")
        text = render_template(self.template(kind.value), values)
        return RenderedPrompt(kind, text, None)

    def render_judge_criteria(self, aspect: str, description: str) -> str:
        return render_template(self.template("judge_criteria"), {
            "aspect": aspect, "aspect_description": description})

    def render_judge_score(self, aspect: str, criteria: str,
                           chunk_text: str) -> str:
        return render_template(self.template("judge_score"), {
            "aspect": aspect, "criteria": criteria, "chunk_text": chunk_text})


def _clause(lead: str, value) -> str:
    value = str(value).strip() if value is not None else ""
    if not value:
        return ""
    return f" {lead} {value}."
