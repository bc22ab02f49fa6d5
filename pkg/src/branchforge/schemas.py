"""JSON schemas for model-facing structured output.

These describe what the language model is asked to emit, which is narrative
content only: ids, chapter numbers and branching statuses are assigned by the
engine after validation, never trusted from the model.
"""

from jsonschema import Draft202012Validator

from .errors import SchemaViolation

STORY_DATA_SCHEMA = "story_data"
STORY_CHUNK_SCHEMA = "story_chunk"
JUDGE_SCORE_SCHEMA = "judge_score"

_STORY_DATA = {
    "type": "object",
    "required": ["title", "genre", "themes", "synopsis", "chapter_synopses",
                 "beginning", "main_characters", "main_scenes", "endings"],
    "properties": {
        "title": {"type": "string", "minLength": 1},
        "genre": {"type": "string"},
        "themes": {"type": "array", "items": {"type": "string"}},
        "synopsis": {"type": "string"},
        "chapter_synopses": {"type": "array", "items": {"type": "string"}},
        "beginning": {"type": "string"},
        "main_characters": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name"],
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "age": {"type": ["string", "integer"]},
                    "gender": {"type": "string"},
                    "species": {"type": "string"},
                    "physical_appearance": {"type": "string"},
                    "role_description": {"type": "string"},
                },
            },
        },
        "main_scenes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name"],
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "location": {"type": "string"},
                    "description": {"type": "string"},
                },
            },
        },
        "endings": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["label"],
                "properties": {
                    "label": {"type": "string", "minLength": 1},
                    "description": {"type": "string"},
                },
            },
        },
    },
}

_STORY_CHUNK = {
    "type": "object",
    "required": ["story_so_far", "narratives"],
    "properties": {
        "story_so_far": {"type": "string"},
        "narratives": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["speaker", "text"],
                "properties": {
                    "speaker": {"type": "string", "minLength": 1},
                    "text": {"type": "string"},
                    "scene": {"type": "string"},
                },
            },
        },
        "choices": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["text"],
                "properties": {"text": {"type": "string", "minLength": 1}},
            },
        },
    },
}

_JUDGE_SCORE = {
    "type": "object",
    "required": ["score"],
    "properties": {"score": {"type": "number"}},
}

_VALIDATORS = {
    STORY_DATA_SCHEMA: Draft202012Validator(_STORY_DATA),
    STORY_CHUNK_SCHEMA: Draft202012Validator(_STORY_CHUNK),
    JUDGE_SCORE_SCHEMA: Draft202012Validator(_JUDGE_SCORE),
}


def known_schemas() -> list[str]:
    return sorted(_VALIDATORS)


def validate_against(obj, schema_id: str) -> None:
    """Raise :class:`SchemaViolation` if ``obj`` breaks the named schema."""
    validator = _VALIDATORS.get(schema_id)
    if validator is None:
        raise SchemaViolation("schema", f"unknown schema id {schema_id!r}")
    error = next(validator.iter_errors(obj), None)
    if error is not None:
        path = ".".join(str(p) for p in error.absolute_path) or "$"
        raise SchemaViolation(path, error.message)
