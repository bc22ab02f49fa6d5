import pytest

from branchforge.engine import BranchEngine
from branchforge.gateway import MockChatProvider
from branchforge.models import GenerationConfig
from branchforge.store import GraphStore


def make_cfg(**overrides) -> GenerationConfig:
    base = dict(
        themes=("adventure", "high-fantasy", "science fiction"),
        game_genre="fantasy",
        num_chapters=2,
        num_endings=3,
        num_main_characters=5,
        num_main_scenes=5,
        min_choice_opportunities=1,
        max_choice_opportunities=1,
        min_choices=2,
        max_choices=3,
        seed=7,
        max_context_tokens=16000,
        max_retries=5,
    )
    base.update(overrides)
    return GenerationConfig(**base)


def run_mock_game(cfg, store=None, choices=2, script=None,
                  filler_sentences=0, workers=1, from_story=None):
    """Generate one full game against the deterministic mock provider."""
    store = store or GraphStore(":memory:")
    provider = MockChatProvider(cfg, script=script,
                                choices_per_opportunity=choices,
                                filler_sentences=filler_sentences)
    engine = BranchEngine(cfg, provider, store)
    story_id = engine.run(from_story=from_story, workers=workers)
    return store, story_id


def expected_chunk_count(chapters: int, opps: int, choices: int) -> int:
    """Independent enumeration of the tree a fixed-branching run must build.

    Walks the branching rules directly: each chapter is `opps` layers of
    choice-bearing chunks followed by one ending layer, and every ending of
    a non-final chapter starts the next chapter once.
    """
    def chapter_nodes(entry_multiplicity: int) -> tuple[int, int]:
        nodes = 0
        width = entry_multiplicity
        for _ in range(opps):  # choice-bearing layers
            nodes += width
            width *= choices
        nodes += width  # chapter-end / game-end layer
        return nodes, width

    total = 0
    multiplicity = 1
    for _ in range(chapters):
        nodes, leaves = chapter_nodes(multiplicity)
        total += nodes
        multiplicity = leaves
    return total


def expected_leaf_count(chapters: int, opps: int, choices: int) -> int:
    return choices ** (opps * chapters)


@pytest.fixture
def cfg():
    return make_cfg()


@pytest.fixture
def store():
    return GraphStore(":memory:")
