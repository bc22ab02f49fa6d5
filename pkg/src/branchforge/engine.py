"""Breadth-first generation of a branching game.

The run starts by generating the story data, whose prompt/response exchange
is pinned as the head of every later history. A FIFO frontier of work items
is then drained: each expansion picks the prompt for the item's target
status, builds the request history (the parent chunk's saved history in
dcpp mode; only the pinned exchange in baseline mode), obtains a validated
chunk and enqueues its children. Every random draw a child depends on (its
chunk id, the chapter's opportunity budget, the ending pick) happens when
the child item is created, so multi-worker scheduling cannot change what is
generated.
"""

from __future__ import annotations

import datetime
import json
import logging
import random
import threading
import uuid
from collections import deque
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, replace
from typing import Optional

from .context import OverflowPolicy, prepare_history
from .errors import RetriesExhausted, ValidationFailed
from .gateway import ChatParams, generate_validated
from .models import (NARRATOR, BranchingStatus, CharacterProfile, Choice,
                     ConversationHistory, EndingSpec, FrontierItem,
                     GenerationConfig, Message, Mode, NarrativeEntry,
                     SceneSpec, StoryChunk, StoryData, validate_chunk,
                     validate_story_data)
from .prompts import PromptKind, PromptKit
from .schemas import STORY_CHUNK_SCHEMA, STORY_DATA_SCHEMA
from .store import GraphStore

log = logging.getLogger("branchforge.engine")

_STATUS_TO_PROMPT = {
    BranchingStatus.BRANCHING_WITHOUT_CHOICE: PromptKind.CHUNK_UNTIL_CHOICE,
    BranchingStatus.BRANCHING_WITH_CHOICE: PromptKind.CHUNK_WITH_CHOICE,
    BranchingStatus.CHAPTER_END: PromptKind.CHAPTER_ENDING,
    BranchingStatus.GAME_END: PromptKind.GAME_ENDING,
}


_ID_NAMESPACE = uuid.uuid5(uuid.NAMESPACE_URL, "branchforge")


def _story_uuid(name: str) -> str:
    return str(uuid.uuid5(_ID_NAMESPACE, name))


def _node_uuid(story_id: str, name: str) -> str:
    """Ids are name-based UUIDs: pure functions of the story id and the
    node's position in the graph, never rng draws. Two games grown from the
    same story data get distinct story ids (the mode is part of the story
    name), hence distinct chunk ids, while their structure draws - which
    seed only on (seed, source story) - stay identical, keeping dcpp and
    baseline runs shape-comparable."""
    return str(uuid.uuid5(uuid.UUID(story_id), name))


class EngineStats:
    """Thread-safe run counters."""

    def __init__(self):
        self._lock = threading.Lock()
        self.chunks_generated = 0
        self.retries = 0
        self.truncations = 0

    def add(self, name: str, amount: int = 1):
        with self._lock:
            setattr(self, name, getattr(self, name) + amount)

    def to_dict(self) -> dict:
        return {"chunks_generated": self.chunks_generated,
                "retries": self.retries, "truncations": self.truncations}


@dataclass
class EngineState:
    story: StoryData
    frontier: deque
    rng: random.Random  # structure draws only: budgets and ending picks
    mode: Mode
    stats: EngineStats
    pinned: ConversationHistory

    def __post_init__(self):
        self._rng_lock = threading.Lock()

    def chunk_id_for(self, parent_chunk_id: Optional[str],
                     choice_index: Optional[int]) -> str:
        parent = parent_chunk_id or "root"
        slot = "next" if choice_index is None else f"choice{choice_index}"
        return _node_uuid(self.story.id, f"chunk:{parent}:{slot}")

    def draw_int(self, low: int, high: int) -> int:
        with self._rng_lock:
            return self.rng.randint(low, high)


def pinned_history_ref(story_id: str) -> str:
    return f"pinned:{story_id}"


def chunk_history_ref(chunk_id: str) -> str:
    return f"chunk:{chunk_id}"


def story_data_llm_view(sd: StoryData) -> dict:
    """The story data as the model sees it: content only, no ids."""
    return {
        "title": sd.title,
        "genre": sd.genre,
        "themes": list(sd.themes),
        "synopsis": sd.synopsis,
        "chapter_synopses": list(sd.chapter_synopses),
        "beginning": sd.beginning,
        "main_characters": [{
            "name": c.name, "age": c.age, "gender": c.gender,
            "species": c.species,
            "physical_appearance": c.physical_appearance,
            "role_description": c.role_description,
        } for c in sd.main_characters],
        "main_scenes": [{
            "name": s.name, "location": s.location,
            "description": s.description,
        } for s in sd.main_scenes],
        "endings": [{"label": e.label, "description": e.description}
                    for e in sd.endings],
    }


class BranchEngine:
    """Orchestrates one generation run against a chat provider and a store."""

    def __init__(self, cfg: GenerationConfig, provider, store: GraphStore,
                 prompt_kit: Optional[PromptKit] = None,
                 chat_params: Optional[ChatParams] = None,
                 policy: Optional[OverflowPolicy] = None,
                 provider_id: str = "mock"):
        self.cfg = cfg
        self.provider = provider
        self.store = store
        self.kit = prompt_kit or PromptKit()
        self.chat_params = chat_params or ChatParams()
        self.policy = policy or OverflowPolicy(
            max_tokens=cfg.max_context_tokens)
        self.provider_id = provider_id

    # --- initialisation ----------------------------------------------------

    def initialize_generation(self) -> tuple[StoryData, EngineState]:
        """Generate fresh story data and seed the frontier."""
        prompt = self.kit.render_plot_prompt(self.cfg)
        request = ConversationHistory(
            (self._pin(Message("user", prompt.text), 0),))
        obj, response, report = generate_validated(
            self.provider, request, self.chat_params, STORY_DATA_SCHEMA,
            lambda o: self._story_data_violations(o), self.cfg.max_retries)

        # The response text makes the id distinct per actual generation even
        # when seeds repeat against a live provider.
        story_id = _story_uuid(
            f"story:{self.cfg.seed}:{self.cfg.mode.value}:{response.text}")
        sd = self._build_story_data(obj, story_id)
        pinned = ConversationHistory((
            self._pin(Message("user", prompt.text), 0),
            self._pin(Message("assistant", response.text), 1),
        ))
        state = self._seed_state(sd, pinned, random.Random(self.cfg.seed))
        state.stats.add("retries", len(report.attempts))
        return sd, state

    def initialize_from_existing(self, sd: StoryData) -> EngineState:
        """Reuse existing story data (cross-initialisation); no model call.

        The clone gets a fresh story id so that two games grown from the
        same story data can live in one store; character, scene and ending
        ids are kept so assets remain shared. Structure draws seed on
        (seed, source story) only, so runs of both modes branch identically.
        """
        violations = validate_story_data(sd, self.cfg)
        if violations:
            raise ValidationFailed(violations)
        clone = replace(sd, id=_story_uuid(
            f"story:{self.cfg.seed}:{self.cfg.mode.value}:from:{sd.id}"))
        prompt = self.kit.render_plot_prompt(self.cfg)
        canonical = json.dumps(story_data_llm_view(sd), sort_keys=True,
                               indent=2, ensure_ascii=False)
        pinned = ConversationHistory((
            self._pin(Message("user", prompt.text), 0),
            self._pin(Message("assistant", f"```\n{canonical}\n```"), 1),
        ))
        return self._seed_state(
            clone, pinned, random.Random(f"{self.cfg.seed}:{sd.id}"))

    def _pin(self, message: Message, position: int) -> Message:
        pin = position < self.policy.pinned_prefix_len
        return replace(message, pinned=pin)

    def _seed_state(self, sd: StoryData, pinned: ConversationHistory,
                    rng: random.Random) -> EngineState:
        state = EngineState(story=sd, frontier=deque(), rng=rng,
                            mode=self.cfg.mode, stats=EngineStats(),
                            pinned=pinned)
        self.store.put_story_data(sd)
        self.store.put_history(pinned_history_ref(sd.id), sd.id, pinned)
        budget = state.draw_int(self.cfg.min_choice_opportunities,
                                self.cfg.max_choice_opportunities)
        state.frontier.append(FrontierItem(
            target_status=BranchingStatus.BRANCHING_WITHOUT_CHOICE,
            chapter=1,
            remaining_choice_opportunities=budget - 1,
            chunk_id=state.chunk_id_for(None, None)))
        return state

    def _story_data_violations(self, obj: dict) -> list:
        scratch_id = _story_uuid("scratch")
        return validate_story_data(self._build_story_data(obj, scratch_id),
                                   self.cfg)

    def _build_story_data(self, obj: dict, story_id: str) -> StoryData:
        characters = tuple(CharacterProfile(
            id=_node_uuid(story_id, f"character:{i}"),
            name=c.get("name", ""), age=str(c.get("age", "")),
            gender=c.get("gender", ""), species=c.get("species", ""),
            physical_appearance=c.get("physical_appearance", ""),
            role_description=c.get("role_description", ""),
        ) for i, c in enumerate(obj["main_characters"]))
        scenes = tuple(SceneSpec(
            id=_node_uuid(story_id, f"scene:{i}"),
            name=s.get("name", ""),
            location=s.get("location", ""),
            description=s.get("description", ""),
        ) for i, s in enumerate(obj["main_scenes"]))
        endings = tuple(EndingSpec(
            id=_node_uuid(story_id, f"ending:{i}"),
            label=e.get("label", ""),
            description=e.get("description", ""),
        ) for i, e in enumerate(obj["endings"]))
        return StoryData(
            id=story_id, title=obj["title"], genre=obj.get("genre", ""),
            themes=tuple(obj.get("themes", [])), main_scenes=scenes,
            main_characters=characters, synopsis=obj.get("synopsis", ""),
            chapter_synopses=tuple(obj["chapter_synopses"]),
            beginning=obj.get("beginning", ""), endings=endings)

    # --- expansion ---------------------------------------------------------

    def expand(self, item: FrontierItem, state: EngineState,
               ) -> tuple[StoryChunk, list[FrontierItem]]:
        """Generate the chunk for one work item and create its children."""
        sd = state.story
        prompt = self._render_item_prompt(item, sd)
        parent_history = self._parent_history(item, state)
        sent = prepare_history(parent_history, Message("user", prompt.text),
                               self.policy)
        if len(sent) != len(parent_history) + 1:
            state.stats.add("truncations")

        obj, response, report = generate_validated(
            self.provider, sent, self.chat_params, STORY_CHUNK_SCHEMA,
            lambda o: self._chunk_violations(o, item, sd),
            self.cfg.max_retries)
        state.stats.add("retries", len(report.attempts))

        chunk = self._build_chunk(obj, item, sd)
        if state.mode is Mode.DCPP:
            full = sent.append(Message("assistant", response.text))
            self.store.put_history(chunk.history_ref, sd.id, full)
        self.store.put_chunk(chunk)
        parent = item.parent_chunk_id or sd.id
        choice_index = (item.selected_choice.index
                        if item.selected_choice else None)
        self.store.link(parent, chunk.id, choice_index)
        state.stats.add("chunks_generated")

        return chunk, self._children(chunk, item, state)

    def _render_item_prompt(self, item: FrontierItem, sd: StoryData):
        kind = _STATUS_TO_PROMPT[item.target_status]
        next_synopsis = None
        if (kind is PromptKind.CHAPTER_ENDING
                and item.chapter < len(sd.chapter_synopses)):
            next_synopsis = sd.chapter_synopses[item.chapter]
        ending = (sd.ending_by_id(item.selected_ending_id)
                  if item.selected_ending_id else None)
        return self.kit.render_chunk_prompt(
            kind, sd, item.chapter, self.cfg,
            selected_choice=item.selected_choice,
            next_chapter_synopsis=next_synopsis, ending=ending)

    def _parent_history(self, item: FrontierItem,
                        state: EngineState) -> ConversationHistory:
        if state.mode is Mode.BASELINE or item.parent_chunk_id is None:
            return state.pinned
        parent = self.store.get_chunk(item.parent_chunk_id)
        if parent.history_ref.startswith("pinned:"):
            return state.pinned
        return self.store.get_history(parent.history_ref)

    def _chunk_violations(self, obj: dict, item: FrontierItem,
                          sd: StoryData) -> list:
        chunk = self._build_chunk(obj, item, sd)
        violations = validate_chunk(chunk, self.cfg)
        if not self.cfg.strict_choices and len(chunk.choices) >= 1:
            # Lenient mode: tolerate models missing the choice-count target.
            violations = [v for v in violations
                          if not (v.field == "choices"
                                  and v.rule.startswith("expected between"))]
        return violations

    def _build_chunk(self, obj: dict, item: FrontierItem,
                     sd: StoryData) -> StoryChunk:
        narratives = []
        for n in obj["narratives"]:
            raw_speaker = n["speaker"].strip()
            if raw_speaker.lower() == "narrator":
                speaker, unknown = NARRATOR, False
            else:
                match = sd.character_by_name(raw_speaker)
                speaker = match.id if match else raw_speaker
                unknown = match is None
            scene_id = None
            raw_scene = (n.get("scene") or "").strip()
            if raw_scene:
                scene = sd.scene_by_name(raw_scene)
                scene_id = scene.id if scene else raw_scene
            narratives.append(NarrativeEntry(
                speaker=speaker, text=n["text"], scene_id=scene_id,
                unknown_speaker=unknown))
        choices = tuple(Choice(i, c["text"])
                        for i, c in enumerate(obj.get("choices", [])))
        if self.cfg.mode is Mode.DCPP:
            ref = chunk_history_ref(item.chunk_id)
        else:
            ref = pinned_history_ref(sd.id)
        return StoryChunk(
            id=item.chunk_id,
            story_id=sd.id,
            chapter=item.chapter,
            status=item.target_status,
            story_so_far=obj["story_so_far"],
            narratives=tuple(narratives),
            choices=choices,
            selected_ending_id=item.selected_ending_id,
            history_ref=ref,
            parent_id=item.parent_chunk_id,
            parent_choice_index=(item.selected_choice.index
                                 if item.selected_choice else None))

    def _children(self, chunk: StoryChunk, item: FrontierItem,
                  state: EngineState) -> list[FrontierItem]:
        children: list[FrontierItem] = []
        last_chapter = item.chapter >= self.cfg.num_chapters
        if chunk.status.bears_choices:
            for choice in chunk.choices:
                child_id = state.chunk_id_for(chunk.id, choice.index)
                if item.remaining_choice_opportunities > 0:
                    children.append(FrontierItem(
                        target_status=BranchingStatus.BRANCHING_WITH_CHOICE,
                        chapter=item.chapter,
                        remaining_choice_opportunities=(
                            item.remaining_choice_opportunities - 1),
                        chunk_id=child_id,
                        parent_chunk_id=chunk.id,
                        selected_choice=choice))
                elif not last_chapter:
                    children.append(FrontierItem(
                        target_status=BranchingStatus.CHAPTER_END,
                        chapter=item.chapter,
                        remaining_choice_opportunities=0,
                        chunk_id=child_id,
                        parent_chunk_id=chunk.id,
                        selected_choice=choice))
                else:
                    children.append(FrontierItem(
                        target_status=BranchingStatus.GAME_END,
                        chapter=item.chapter,
                        remaining_choice_opportunities=0,
                        chunk_id=child_id,
                        parent_chunk_id=chunk.id,
                        selected_choice=choice,
                        selected_ending_id=self.select_ending(state)))
        elif chunk.status is BranchingStatus.CHAPTER_END and not last_chapter:
            budget = state.draw_int(self.cfg.min_choice_opportunities,
                                    self.cfg.max_choice_opportunities)
            children.append(FrontierItem(
                target_status=BranchingStatus.BRANCHING_WITHOUT_CHOICE,
                chapter=item.chapter + 1,
                remaining_choice_opportunities=budget - 1,
                chunk_id=state.chunk_id_for(chunk.id, None),
                parent_chunk_id=chunk.id))
        return children

    def select_ending(self, state: EngineState) -> str:
        """Uniform pick among the configured endings."""
        endings = state.story.endings
        return endings[state.draw_int(0, len(endings) - 1)].id

    # --- run loop ----------------------------------------------------------

    def run(self, from_story: Optional[StoryData] = None,
            workers: int = 1) -> str:
        """Drain the frontier until every branch reaches its ending."""
        started = datetime.datetime.now(datetime.timezone.utc)
        if from_story is not None:
            state = self.initialize_from_existing(from_story)
        else:
            _, state = self.initialize_generation()

        if workers <= 1:
            while state.frontier:
                item = state.frontier.popleft()
                state.frontier.extend(self._expand_or_record(item, state))
        else:
            self._run_parallel(state, workers)

        finished = datetime.datetime.now(datetime.timezone.utc)
        manifest = {
            "config": self.cfg.to_dict(),
            "mode": state.mode.value,
            "seed": self.cfg.seed,
            "provider": self.provider_id,
            "stats": state.stats.to_dict(),
        }
        self.store.put_run_manifest(state.story.id, manifest)
        self.last_run_summary = dict(manifest,
                                     started=started.isoformat(),
                                     finished=finished.isoformat(),
                                     story_id=state.story.id)
        return state.story.id

    def _run_parallel(self, state: EngineState, workers: int):
        pending = set()
        with ThreadPoolExecutor(max_workers=workers) as pool:
            while state.frontier or pending:
                while state.frontier and len(pending) < workers:
                    item = state.frontier.popleft()
                    pending.add(pool.submit(self._expand_or_record,
                                            item, state))
                done, pending = wait(pending, return_when=FIRST_COMPLETED)
                for future in done:
                    state.frontier.extend(future.result())

    def _expand_or_record(self, item: FrontierItem,
                          state: EngineState) -> list[FrontierItem]:
        try:
            _, children = self.expand(item, state)
            return children
        except RetriesExhausted as e:
            log.warning("branch abandoned at chapter %s (%s): %s",
                        item.chapter, item.target_status.value, e)
            self.store.put_failure(state.story.id, {
                "chunk_id": item.chunk_id,
                "parent_chunk_id": item.parent_chunk_id,
                "chapter": item.chapter,
                "target_status": item.target_status.value,
                "report": e.report.to_dict(),
            })
            return []
