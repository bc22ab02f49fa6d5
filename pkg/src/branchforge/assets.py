"""Image asset generation, background removal and fallback resolution.

Assets land under ``assets/{story_id}/{characters|scenes}/{id}.png`` next to
a manifest mapping ids to paths and content hashes. Character sprites pass
through a pluggable background remover; the built-in one just guarantees an
alpha channel, with real models left to adapters. Resolution is total: any
id that was never generated (including ones the model hallucinated) maps to
a kind-specific default image.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from PIL import Image, UnidentifiedImageError

from .errors import UndecodableImage
from .models import StoryData
from .prompts import PromptKind, PromptKit

log = logging.getLogger("branchforge.assets")

KINDS = ("character", "scene")
_KIND_DIRS = {"character": "characters", "scene": "scenes"}
_DEFAULT_COLORS = {"character": (128, 128, 160), "scene": (40, 44, 60)}


def remove_background(image_bytes: bytes, remover=None) -> bytes:
    """Run the configured background remover; default adds an alpha channel.

    Already-transparent images pass through untouched.
    """
    if remover is not None:
        return remover(image_bytes)
    try:
        img = Image.open(io.BytesIO(image_bytes))
        img.load()
    except (UnidentifiedImageError, OSError) as e:
        raise UndecodableImage(str(e)) from e
    if img.mode in ("RGBA", "LA") or (img.mode == "P"
                                      and "transparency" in img.info):
        return image_bytes
    out = io.BytesIO()
    img.convert("RGBA").save(out, format="PNG")
    return out.getvalue()


class AssetPipeline:
    """Generates and resolves the image assets of one or more stories."""

    def __init__(self, assets_dir, image_provider=None,
                 prompt_kit: Optional[PromptKit] = None, remover=None,
                 workers: int = 4):
        self.assets_dir = Path(assets_dir)
        self.image_provider = image_provider
        self.kit = prompt_kit or PromptKit()
        self.remover = remover
        self.workers = workers
        self._manifest_lock = threading.Lock()

    # --- generation --------------------------------------------------------

    def build_assets(self, sd: StoryData) -> dict:
        """Generate one image per character and per scene.

        Per-asset failures are recorded in the manifest and generation
        continues; assets already present with a manifest entry are kept.
        """
        manifest = self.load_manifest(sd.id)
        jobs = ([("character", c.id, self.kit.render_image_prompt(
                     PromptKind.CHARACTER_IMAGE, c))
                 for c in sd.main_characters]
                + [("scene", s.id, self.kit.render_image_prompt(
                      PromptKind.SCENE_IMAGE, s))
                   for s in sd.main_scenes])

        def build_one(job):
            kind, asset_id, prompt = job
            existing = manifest.get(_KIND_DIRS[kind], {}).get(asset_id)
            if existing and (self.assets_dir / existing["path"]).exists():
                return kind, asset_id, existing, None
            try:
                data = self.image_provider.generate(prompt)
                if kind == "character":
                    data = remove_background(data, self.remover)
                rel = (f"{sd.id}/{_KIND_DIRS[kind]}/{asset_id}.png")
                target = self.assets_dir / rel
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_bytes(data)
                entry = {"path": rel,
                         "hash": hashlib.sha256(data).hexdigest()}
                return kind, asset_id, entry, None
            except Exception as e:  # degrade per asset, never abort the batch
                log.warning("asset %s/%s failed: %s", kind, asset_id, e)
                return kind, asset_id, None, str(e)

        failures = list(manifest.get("failures", []))
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            for kind, asset_id, entry, error in pool.map(build_one, jobs):
                with self._manifest_lock:
                    if entry is not None:
                        manifest.setdefault(_KIND_DIRS[kind], {})[
                            asset_id] = entry
                    else:
                        failures.append({"kind": kind, "id": asset_id,
                                         "error": error})
        manifest["failures"] = failures
        self._write_manifest(sd.id, manifest)
        return manifest

    def load_manifest(self, story_id: str) -> dict:
        path = self.assets_dir / story_id / "manifest.json"
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
        return {"characters": {}, "scenes": {}, "failures": []}

    def _write_manifest(self, story_id: str, manifest: dict):
        path = self.assets_dir / story_id / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True),
                        encoding="utf-8")

    # --- resolution --------------------------------------------------------

    def resolve_asset(self, kind: str, story_id: str, asset_id: str) -> Path:
        """Map (kind, id) to a displayable file; unknown ids get the default."""
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        candidate = (self.assets_dir / story_id / _KIND_DIRS[kind]
                     / f"{asset_id}.png")
        if asset_id and candidate.exists():
            return candidate
        return self.default_asset(kind)

    def default_asset(self, kind: str) -> Path:
        path = self.assets_dir / "_defaults" / f"{kind}.png"
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            img = Image.new("RGBA", (64, 64), _DEFAULT_COLORS[kind] + (255,))
            img.save(path, format="PNG")
        return path
