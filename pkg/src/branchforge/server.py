"""Read-only HTTP API exposing generated games and assets to the player.

The server is stateless: the client owns its position in the story and
walks the graph through repeated ``next`` calls. Conversation histories
never leave the store through this surface.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .assets import AssetPipeline
from .errors import UnknownNode, UnknownStory
from .models import StoryChunk
from .store import GraphStore

_ASSET_CACHE = "public, max-age=31536000, immutable"
_URL_KINDS = {"characters": "character", "scenes": "scene"}


def chunk_player_view(chunk: StoryChunk) -> dict:
    """What the player client sees of a chunk; no history material."""
    return {
        "id": chunk.id,
        "story_id": chunk.story_id,
        "chapter": chunk.chapter,
        "status": chunk.status.value,
        "story_so_far": chunk.story_so_far,
        "narratives": [n.to_dict() for n in chunk.narratives],
        "choices": [c.to_dict() for c in chunk.choices],
        "selected_ending_id": chunk.selected_ending_id,
    }


def create_app(store: GraphStore, assets: AssetPipeline,
               ui_dir: Optional[str] = None,
               cors_origins: Optional[list[str]] = None) -> FastAPI:
    app = FastAPI(title="branchforge", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware, allow_origins=cors_origins or ["*"],
        allow_methods=["GET"], allow_headers=["*"])

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse({"error": message}, status_code=status)

    @app.get("/api/games")
    def list_games():
        return store.list_stories()

    @app.get("/api/games/{story_id}")
    def game_data(story_id: str):
        try:
            return store.get_story(story_id).to_dict()
        except UnknownStory:
            return error(404, f"unknown story {story_id}")

    @app.get("/api/games/{story_id}/start")
    def game_start(story_id: str):
        try:
            first = store.first_chunk(story_id)
        except UnknownStory:
            return error(404, f"unknown story {story_id}")
        if first is None:
            return error(404, f"story {story_id} has no chunks")
        return chunk_player_view(first)

    @app.get("/api/chunks/{chunk_id}/next")
    def next_chunk(chunk_id: str, choice: Optional[int] = Query(None)):
        try:
            chunk = store.get_chunk(chunk_id)
        except UnknownNode:
            return error(404, f"unknown chunk {chunk_id}")
        kids = store.children(chunk_id)
        if chunk.status.bears_choices:
            if choice is None:
                return error(400, "this chunk requires a choice index")
            if not 0 <= choice < len(chunk.choices):
                return error(400, f"choice {choice} out of range")
            match = [to for ci, to in kids if ci == choice]
            if not match:
                return error(404, f"no chunk behind choice {choice}")
            return chunk_player_view(store.get_chunk(match[0]))
        if choice is not None:
            return error(409, "this chunk offers no choices")
        if not kids:
            return error(404, "no next chunk: the story has ended")
        return chunk_player_view(store.get_chunk(kids[0][1]))

    @app.get("/assets/{story_id}/{kind}/{asset_id}")
    def asset(story_id: str, kind: str, asset_id: str):
        resolved = _URL_KINDS.get(kind)
        if resolved is None:
            return error(404, f"unknown asset kind {kind}")
        path = assets.resolve_asset(resolved, story_id, asset_id)
        return FileResponse(path, media_type="image/png",
                            headers={"Cache-Control": _ASSET_CACHE})

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
