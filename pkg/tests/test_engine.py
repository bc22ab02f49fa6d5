import json
import math
from collections import Counter

import pytest

from branchforge.engine import (BranchEngine, pinned_history_ref)
from branchforge.errors import RetriesExhausted, ValidationFailed
from branchforge.gateway import MockChatProvider
from branchforge.models import BranchingStatus, Mode
from branchforge.store import GraphStore, canonical_json

from .conftest import (expected_chunk_count, expected_leaf_count, make_cfg,
                       run_mock_game)


def make_engine(cfg, store=None, choices=2, script=None, filler=0):
    store = store or GraphStore(":memory:")
    provider = MockChatProvider(cfg, script=script,
                                choices_per_opportunity=choices,
                                filler_sentences=filler)
    return BranchEngine(cfg, provider, store), store


# --- initialisation ---------------------------------------------------------

def test_initialize_generation_builds_story_and_seeds_frontier():
    cfg = make_cfg(num_chapters=3)
    engine, store = make_engine(cfg)
    sd, state = engine.initialize_generation()
    assert len(sd.chapter_synopses) == 3
    assert len(sd.endings) == 3
    assert len(state.frontier) == 1
    item = state.frontier[0]
    assert item.target_status is BranchingStatus.BRANCHING_WITHOUT_CHOICE
    assert item.chapter == 1
    assert item.parent_chunk_id is None
    assert store.get_story(sd.id) == sd
    pinned = store.get_history(pinned_history_ref(sd.id))
    assert [m.role for m in pinned.messages] == ["user", "assistant"]
    assert all(m.pinned for m in pinned.messages)


def test_initialize_is_deterministic_per_seed():
    cfg = make_cfg(seed=7)
    sd1, state1 = make_engine(cfg)[0].initialize_generation()
    sd2, state2 = make_engine(cfg)[0].initialize_generation()
    assert sd1 == sd2
    assert state1.frontier[0] == state2.frontier[0]
    sd3, _ = make_engine(make_cfg(seed=8))[0].initialize_generation()
    assert sd3.id != sd1.id


def test_initialize_exhausts_retries_on_bad_story_shape():
    cfg = make_cfg(num_chapters=3, max_retries=3)
    bad = MockChatProvider(make_cfg(num_chapters=2))._plot_payload()
    script = [{"match": "PLOT", "respond": "```\n" + json.dumps(bad) + "\n```"}
              for _ in range(3)]
    engine, _ = make_engine(cfg, script=script)
    with pytest.raises(RetriesExhausted) as exc:
        engine.initialize_generation()
    assert all(a.failure_kind == "validation"
               for a in exc.value.report.attempts)


def test_initialize_from_existing_skips_provider():
    cfg = make_cfg()
    sd, _ = make_engine(cfg)[0].initialize_generation()

    class ExplodingProvider:
        def complete(self, *args):
            raise AssertionError("no provider call expected")

    store = GraphStore(":memory:")
    engine = BranchEngine(cfg, ExplodingProvider(), store)
    state = engine.initialize_from_existing(sd)
    assert state.story.id != sd.id  # fresh game, shared content
    assert state.story.title == sd.title
    assert state.story.main_characters == sd.main_characters


def test_initialize_from_existing_rejects_invalid():
    cfg = make_cfg()
    sd, _ = make_engine(cfg)[0].initialize_generation()
    engine, _ = make_engine(make_cfg(num_chapters=5))
    with pytest.raises(ValidationFailed):
        engine.initialize_from_existing(sd)


def test_same_story_data_gives_identical_pinned_prefix_in_both_modes():
    cfg = make_cfg()
    sd, _ = make_engine(cfg)[0].initialize_generation()
    pinned = {}
    for mode in (Mode.DCPP, Mode.BASELINE):
        mode_cfg = make_cfg(mode=mode)
        engine, _ = make_engine(mode_cfg)
        state = engine.initialize_from_existing(sd)
        pinned[mode] = tuple((m.role, m.content) for m in state.pinned.messages)
    assert pinned[Mode.DCPP] == pinned[Mode.BASELINE]


# --- expansion --------------------------------------------------------------

def test_expand_choice_chunk_spawns_one_child_per_choice():
    cfg = make_cfg(min_choices=2, max_choices=3,
                   min_choice_opportunities=2, max_choice_opportunities=2)
    engine, _ = make_engine(cfg, choices=3)
    sd, state = engine.initialize_generation()
    item = state.frontier.popleft()
    assert item.remaining_choice_opportunities == 1
    chunk, children = engine.expand(item, state)
    assert chunk.status is BranchingStatus.BRANCHING_WITHOUT_CHOICE
    assert len(chunk.choices) == 3
    assert len(children) == 3
    for i, child in enumerate(children):
        assert child.target_status is BranchingStatus.BRANCHING_WITH_CHOICE
        assert child.chapter == 1
        assert child.remaining_choice_opportunities == 0
        assert child.selected_choice == chunk.choices[i]
        assert child.parent_chunk_id == chunk.id


def test_expand_exhausted_budget_targets_chapter_end_then_game_end():
    cfg = make_cfg(num_chapters=2, min_choice_opportunities=1,
                   max_choice_opportunities=1)
    engine, _ = make_engine(cfg)
    sd, state = engine.initialize_generation()
    item = state.frontier.popleft()
    assert item.remaining_choice_opportunities == 0
    chunk, children = engine.expand(item, state)
    assert {c.target_status for c in children} == {BranchingStatus.CHAPTER_END}
    assert all(c.selected_choice is not None for c in children)

    ce_chunk, ce_children = engine.expand(children[0], state)
    assert ce_chunk.status is BranchingStatus.CHAPTER_END
    assert ce_chunk.choices == ()
    assert len(ce_children) == 1
    nxt = ce_children[0]
    assert nxt.target_status is BranchingStatus.BRANCHING_WITHOUT_CHOICE
    assert nxt.chapter == 2

    last_chunk, last_children = engine.expand(nxt, state)
    assert {c.target_status for c in last_children} == {
        BranchingStatus.GAME_END}
    assert all(c.selected_ending_id for c in last_children)

    end_chunk, grandchildren = engine.expand(last_children[0], state)
    assert end_chunk.status is BranchingStatus.GAME_END
    assert end_chunk.selected_ending_id == last_children[0].selected_ending_id
    assert end_chunk.choices == ()
    assert grandchildren == []


def test_select_ending_seeded_and_uniform():
    cfg = make_cfg(num_endings=3)
    engine, _ = make_engine(cfg)
    _, state = engine.initialize_generation()
    first = engine.select_ending(state)

    engine2, _ = make_engine(cfg)
    _, state2 = engine2.initialize_generation()
    assert engine2.select_ending(state2) == first  # reproducible pick

    counts = Counter(engine.select_ending(state) for _ in range(3000))
    sigma = math.sqrt((1 / 3) * (2 / 3) / 3000)
    for ending_id in {e.id for e in state.story.endings}:
        freq = counts[ending_id] / 3000
        assert abs(freq - 1 / 3) <= 3 * sigma


def test_select_ending_singleton():
    cfg = make_cfg(num_endings=1)
    engine, _ = make_engine(cfg)
    _, state = engine.initialize_generation()
    only = state.story.endings[0].id
    assert all(engine.select_ending(state) == only for _ in range(10))


# --- full runs ---------------------------------------------------------------

def leaf_statuses(store, story_id):
    return {c.status for c in store.endings(story_id)}


def test_run_structure_and_termination():
    cfg = make_cfg(num_chapters=2)
    store, story_id = run_mock_game(cfg)
    stats = store.stats(story_id)
    assert stats["chunk_count"] == expected_chunk_count(2, 1, 2)
    assert stats["leaf_count"] == expected_leaf_count(2, 1, 2)
    assert leaf_statuses(store, story_id) == {BranchingStatus.GAME_END}
    sd = store.get_story(story_id)
    ending_ids = {e.id for e in sd.endings}
    assert all(c.selected_ending_id in ending_ids
               for c in store.endings(story_id))


def test_run_paths_visit_chapters_in_order():
    cfg = make_cfg(num_chapters=3, min_choice_opportunities=1,
                   max_choice_opportunities=2)
    store, story_id = run_mock_game(cfg)
    chunks = store.story_chunks(story_id)
    children = {}
    for e in store.story_edges(story_id):
        if e.from_id in chunks:
            children.setdefault(e.from_id, []).append(e.to_id)

    first = store.first_chunk(story_id)

    def walk(cid, chapter, chapter_choices, game_ends):
        chunk = chunks[cid]
        assert chunk.chapter >= chapter
        if chunk.chapter > chapter:
            assert chunk.chapter == chapter + 1
            chapter_choices = 0
        if chunk.status.bears_choices:
            chapter_choices += 1
        if chunk.status is BranchingStatus.GAME_END:
            game_ends += 1
            assert chunk.chapter == cfg.num_chapters
            assert cid not in children
        kids = children.get(cid, [])
        if not kids:
            assert chunk.status is BranchingStatus.GAME_END
            assert game_ends == 1
            assert cfg.min_choice_opportunities <= chapter_choices
            assert chapter_choices <= cfg.max_choice_opportunities
            return
        if chunk.status is BranchingStatus.CHAPTER_END:
            # chapter boundary: per-chapter opportunity bound holds per path
            assert cfg.min_choice_opportunities <= chapter_choices
            assert chapter_choices <= cfg.max_choice_opportunities
        for kid in kids:
            walk(kid, chunk.chapter, chapter_choices, game_ends)

    walk(first.id, 1, 0, 0)


def test_run_in_degree_one_and_root_child():
    cfg = make_cfg()
    store, story_id = run_mock_game(cfg)
    edges = store.story_edges(story_id)
    in_degree = Counter(e.to_id for e in edges)
    assert all(v == 1 for v in in_degree.values())
    root_children = [e for e in edges if e.from_id == story_id]
    assert len(root_children) == 1
    chunks = store.story_chunks(story_id)
    for chunk in chunks.values():
        if chunk.status.bears_choices:
            out = [e for e in edges if e.from_id == chunk.id]
            assert len(out) == len(chunk.choices)


def test_run_determinism_same_seed():
    cfg = make_cfg(num_chapters=2, seed=41)
    s1, id1 = run_mock_game(cfg)
    s2, id2 = run_mock_game(cfg)
    assert canonical_json(s1.export_game(id1)) == canonical_json(
        s2.export_game(id2))


def structural_signature(store, story_id):
    """BFS trace of (chapter, status, choices, ending, summary) per node."""
    sd = store.get_story(story_id)
    ending_labels = {e.id: e.label for e in sd.endings}
    chunks = store.story_chunks(story_id)
    first = store.first_chunk(story_id)
    queue, signature = [first.id], []
    while queue:
        chunk = chunks[queue.pop(0)]
        signature.append((
            chunk.chapter, chunk.status.value,
            tuple(c.text for c in chunk.choices),
            ending_labels.get(chunk.selected_ending_id),
            chunk.story_so_far))
        queue.extend(to for _, to in store.children(chunk.id))
    return signature


def test_dcpp_vs_baseline_identical_shape_different_histories():
    cfg_d = make_cfg(num_chapters=2, mode=Mode.DCPP)
    cfg_b = make_cfg(num_chapters=2, mode=Mode.BASELINE)
    sd, _ = make_engine(cfg_d)[0].initialize_generation()
    store_d, id_d = run_mock_game(cfg_d, from_story=sd)
    store_b, id_b = run_mock_game(cfg_b, from_story=sd)

    assert id_d != id_b  # two games can share one store
    assert structural_signature(store_d, id_d) == structural_signature(
        store_b, id_b)

    # dcpp: every chunk's saved history contains its parent's exchange
    for chunk in store_d.story_chunks(id_d).values():
        history = store_d.get_history(chunk.history_ref)
        assert history.messages[-1].role == "assistant"
        if chunk.parent_id:
            parent = store_d.story_chunks(id_d)[chunk.parent_id]
            parent_history = store_d.get_history(parent.history_ref)
            contents = [m.content for m in history.messages]
            assert parent_history.messages[-1].content in contents
            assert parent_history.messages[-2].content in contents

    # baseline: chunks reference only the shared pinned exchange
    for chunk in store_b.story_chunks(id_b).values():
        assert chunk.history_ref == pinned_history_ref(id_b)
    pinned = store_b.get_history(pinned_history_ref(id_b))
    assert len(pinned.messages) == 2


class RecordingProvider:
    def __init__(self, inner):
        self.inner = inner
        self.requests = []

    def complete(self, history, params):
        self.requests.append(history)
        return self.inner.complete(history, params)


def test_baseline_requests_carry_only_pinned_prefix_plus_prompt():
    cfg = make_cfg(num_chapters=2, mode=Mode.BASELINE)
    provider = RecordingProvider(MockChatProvider(cfg))
    store = GraphStore(":memory:")
    BranchEngine(cfg, provider, store).run()
    chunk_requests = provider.requests[1:]  # first request generated the plot
    for history in chunk_requests:
        assert len(history.messages) == 3
        assert [m.pinned for m in history.messages] == [True, True, False]
        assert history.messages[-1].role == "user"


def test_truncation_happens_on_long_dcpp_runs():
    cfg = make_cfg(num_chapters=3, max_context_tokens=4000,
                   min_choice_opportunities=2, max_choice_opportunities=2)
    store = GraphStore(":memory:")
    provider = MockChatProvider(cfg, filler_sentences=12)
    engine = BranchEngine(cfg, provider, store)
    story_id = engine.run()
    stats = store.run_manifest(story_id)["stats"]
    assert stats["truncations"] > 0
    # pinned prefix survives truncation on every chunk
    for chunk in store.story_chunks(story_id).values():
        history = store.get_history(chunk.history_ref)
        assert [m.pinned for m in history.messages[:2]] == [True, True]


def test_failed_branch_is_recorded_and_run_continues():
    cfg = make_cfg(num_chapters=2, max_retries=2)
    bad = [{"match": "CHAPTER_ENDING", "respond": "FAIL"}
           for _ in range(2)]
    store, story_id = run_mock_game(cfg, script=bad)
    failures = store.failures(story_id)
    assert len(failures) == 1
    assert failures[0]["target_status"] == "CHAPTER_END"
    assert len(failures[0]["report"]["attempts"]) == 2
    # the sibling branch still completed
    assert store.endings(story_id)


def test_parallel_workers_same_shape():
    cfg = make_cfg(num_chapters=2, min_choice_opportunities=2,
                   max_choice_opportunities=2)
    s1, id1 = run_mock_game(cfg, workers=1)
    s4, id4 = run_mock_game(cfg, workers=4)
    assert s1.stats(id1) == s4.stats(id4)


def test_every_generated_chunk_passes_the_validator():
    from branchforge.models import validate_chunk

    cfg = make_cfg(num_chapters=3, min_choice_opportunities=1,
                   max_choice_opportunities=2)
    store, story_id = run_mock_game(cfg, choices=3)
    for chunk in store.story_chunks(story_id).values():
        assert validate_chunk(chunk, cfg) == []


def test_run_manifest_contents():
    cfg = make_cfg(num_chapters=2, seed=99)
    store, story_id = run_mock_game(cfg)
    manifest = store.run_manifest(story_id)
    assert manifest["seed"] == 99
    assert manifest["mode"] == "dcpp"
    assert manifest["provider"] == "mock"
    assert manifest["stats"]["chunks_generated"] == store.stats(
        story_id)["chunk_count"]
