import pytest

from branchforge.errors import (ChoiceOnNonChoiceSource, DuplicateEdge,
                                InvalidChoiceAt, SchemaViolation,
                                StorageFailure, UnknownNode, UnknownStory,
                                VersionUnsupported)
from branchforge.models import BranchingStatus, StoryChunk
from branchforge.store import GraphStore, canonical_json

from .conftest import make_cfg, run_mock_game
from .test_models import _chunk, _story


def seeded_store():
    store = GraphStore(":memory:")
    sd = _story(make_cfg())
    store.put_story_data(sd)
    return store, sd


def put(store, sd, **overrides):
    chunk = _chunk(story_id=sd.id, **overrides)
    store.put_chunk(chunk)
    return chunk


def test_put_chunk_requires_story():
    store = GraphStore(":memory:")
    with pytest.raises(UnknownStory):
        store.put_chunk(_chunk())


def test_put_is_idempotent_and_conflicts_on_drift():
    store, sd = seeded_store()
    chunk = put(store, sd)
    store.put_chunk(chunk)  # identical payload: no-op
    conflicting = _chunk(story_id=sd.id, story_so_far="different")
    with pytest.raises(StorageFailure):
        store.put_chunk(conflicting)


def test_link_root_once():
    store, sd = seeded_store()
    chunk = put(store, sd)
    store.link(sd.id, chunk.id)
    store.link(sd.id, chunk.id)  # idempotent
    other = put(store, sd, id="k2")
    with pytest.raises(DuplicateEdge):
        store.link(sd.id, other.id)


def test_link_unknown_nodes():
    store, sd = seeded_store()
    chunk = put(store, sd)
    with pytest.raises(UnknownNode):
        store.link("ghost", chunk.id)
    with pytest.raises(UnknownNode):
        store.link(chunk.id, "ghost", 0)


def test_link_choice_rules():
    store, sd = seeded_store()
    chooser = put(store, sd, id="chooser")
    ender = put(store, sd, id="ender",
                status=BranchingStatus.CHAPTER_END, choices=())
    target = put(store, sd, id="target",
                 status=BranchingStatus.CHAPTER_END, choices=())
    with pytest.raises(ChoiceOnNonChoiceSource):
        store.link(ender.id, target.id, 0)  # choice on a non-choice source
    with pytest.raises(ChoiceOnNonChoiceSource):
        store.link(chooser.id, target.id)  # missing required choice_index
    with pytest.raises(ChoiceOnNonChoiceSource):
        store.link(chooser.id, target.id, 9)  # out of range
    store.link(chooser.id, target.id, 1)
    with pytest.raises(DuplicateEdge):
        store.link(chooser.id, ender.id, 1)  # same slot, other target


def test_endings_and_root_only_story():
    store, sd = seeded_store()
    assert store.endings(sd.id) == []
    cfg = make_cfg(num_chapters=2)
    run_store, story_id = run_mock_game(cfg)
    leaves = run_store.endings(story_id)
    assert len(leaves) == 4
    assert all(c.status is BranchingStatus.GAME_END for c in leaves)


def test_path_examples():
    cfg = make_cfg(num_chapters=2)
    store, story_id = run_mock_game(cfg)
    first = store.first_chunk(story_id)

    assert [c.id for c in store.path(story_id, [])] == [first.id]

    walked = store.path(story_id, [0, 1])
    assert [c.status.value for c in walked] == [
        "BRANCHING_WITHOUT_CHOICE", "CHAPTER_END",
        "BRANCHING_WITHOUT_CHOICE", "GAME_END"]

    with pytest.raises(InvalidChoiceAt) as exc:
        store.path(story_id, [9])
    assert exc.value.step == 0

    with pytest.raises(InvalidChoiceAt):
        store.path(story_id, [0, 1, 0])  # leftover choice at a leaf


def test_path_unknown_story():
    store = GraphStore(":memory:")
    with pytest.raises(UnknownStory):
        store.path("ghost", [])


def test_stats_match_full_scan():
    cfg = make_cfg(num_chapters=2)
    store, story_id = run_mock_game(cfg)
    stats = store.stats(story_id)
    chunks = store.story_chunks(story_id)
    assert stats["chunk_count"] == len(chunks)
    assert stats["per_chapter_counts"] == {1: 3, 2: 6}
    assert stats["max_depth"] == 4
    store2, sd = seeded_store()
    assert store2.stats(sd.id) == {"chunk_count": 0, "leaf_count": 0,
                                   "max_depth": 0, "per_chapter_counts": {}}


def test_export_import_round_trip_identical_ids():
    cfg = make_cfg(num_chapters=2)
    store, story_id = run_mock_game(cfg)
    doc = store.export_game(story_id)

    other = GraphStore(":memory:")
    imported_id = other.import_game(doc)
    assert imported_id == story_id
    assert other.story_chunks(story_id) == store.story_chunks(story_id)
    assert set(other.story_edges(story_id)) == set(
        store.story_edges(story_id))
    assert canonical_json(other.export_game(story_id)) == canonical_json(doc)


def test_export_is_canonical_and_stable():
    cfg = make_cfg(num_chapters=2)
    store, story_id = run_mock_game(cfg)
    assert canonical_json(store.export_game(story_id)) == canonical_json(
        store.export_game(story_id))
    doc = store.export_game(story_id)
    ordered = [c["id"] for c in doc["chunks"]]
    position = {cid: i for i, cid in enumerate(ordered)}
    for chunk in doc["chunks"]:
        if chunk.get("parent_id"):
            assert position[chunk["parent_id"]] < position[chunk["id"]]
    for edge in doc["edges"]:
        assert "choice_index" not in edge or edge["choice_index"] is not None


def test_export_histories_only_behind_flag():
    cfg = make_cfg(num_chapters=2)
    store, story_id = run_mock_game(cfg)
    bare = store.export_game(story_id)
    assert all("history" not in c for c in bare["chunks"])
    rich = store.export_game(story_id, include_histories=True)
    assert all(c["history"] for c in rich["chunks"])

    other = GraphStore(":memory:")
    other.import_game(rich)
    chunk = next(iter(other.story_chunks(story_id).values()))
    assert other.get_history(chunk.history_ref).messages


def test_import_rejects_dangling_edge():
    cfg = make_cfg(num_chapters=2)
    store, story_id = run_mock_game(cfg)
    doc = store.export_game(story_id)
    doc["edges"].append({"from": story_id, "to": "missing-chunk"})
    with pytest.raises(SchemaViolation):
        GraphStore(":memory:").import_game(doc)


def test_import_rejects_unknown_version():
    cfg = make_cfg(num_chapters=2)
    store, story_id = run_mock_game(cfg)
    doc = store.export_game(story_id)
    doc["format_version"] = 999
    with pytest.raises(VersionUnsupported):
        GraphStore(":memory:").import_game(doc)


def test_import_rejects_missing_fields():
    with pytest.raises(SchemaViolation):
        GraphStore(":memory:").import_game({"format_version": 1})


def test_failure_markers_reported_separately():
    store, sd = seeded_store()
    store.put_failure(sd.id, {"chunk_id": "x", "report": {"attempts": []}})
    assert len(store.failures(sd.id)) == 1
    assert store.endings(sd.id) == []
