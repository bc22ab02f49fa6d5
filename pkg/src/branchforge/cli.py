"""Operator command line: generate, assets, evaluate, analyze, export,
import and serve.

stdout carries only each command's payload (ids, tables, JSON); everything
else goes to stderr. Exit codes: 0 ok, 1 usage, 2 domain error, 3 provider
or transport error, 4 storage error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import corpus
from .assets import AssetPipeline
from .context import OverflowPolicy
from .engine import BranchEngine
from .errors import (BranchForgeError, DomainError, ProviderError,
                     StorageFailure)
from .evaluation import Evaluator, MockJudgeProvider, render_report_table
from .gateway import (ChatParams, HttpChatProvider, HttpImageProvider,
                      MockChatProvider, MockImageProvider)
from .models import GenerationConfig
from .prompts import PromptKit
from .store import GraphStore, canonical_json


def _load_config(config_path, mode, seed) -> tuple[GenerationConfig, dict]:
    raw = {}
    if config_path:
        try:
            raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise click.UsageError(f"config file is not valid JSON: {e}")
    overflow = raw.pop("overflow", {})
    if mode:
        raw["mode"] = mode
    if seed is not None:
        raw["seed"] = seed
    try:
        return GenerationConfig.from_dict(raw), overflow
    except (TypeError, ValueError) as e:
        raise click.UsageError(f"bad generation config: {e}") from e


def _make_chat_provider(name, cfg, mock_script, mock_choices):
    try:
        if name == "mock":
            if mock_script:
                return MockChatProvider.from_script_file(
                    cfg, mock_script, choices_per_opportunity=mock_choices)
            return MockChatProvider(cfg, choices_per_opportunity=mock_choices)
        if name == "http":
            return HttpChatProvider()
    except ValueError as e:
        raise click.UsageError(str(e)) from e
    raise click.UsageError(f"unknown provider {name!r}")


@click.group()
@click.option("--store", "store_path", default="branchforge.db",
              envvar="BRANCHFORGE_STORE", show_default=True,
              help="Path to the game database (sqlite file).")
@click.option("--templates-dir", default=None,
              help="Directory of prompt template files.")
@click.pass_context
def cli(ctx, store_path, templates_dir):
    """Grow, inspect and serve branching visual-novel games."""
    ctx.ensure_object(dict)
    ctx.obj["store_path"] = store_path
    ctx.obj["kit"] = PromptKit(Path(templates_dir) if templates_dir else None)


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON file mirroring the generation config fields.")
@click.option("--mode", type=click.Choice(["dcpp", "baseline"]), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--from-story", "from_story", default=None,
              help="Reuse the story data of an existing game.")
@click.option("--provider", default="mock", show_default=True,
              type=click.Choice(["mock", "http"]))
@click.option("--mock-script", type=click.Path(exists=True), default=None,
              help="Scripted responses for the mock provider.")
@click.option("--mock-choices", type=int, default=2, show_default=True,
              help="Choices per opportunity the mock provider emits.")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--manifest-out", type=click.Path(), default=None,
              help="Also write a run manifest file (with timestamps).")
@click.pass_context
def generate(ctx, config_path, mode, seed, from_story, provider,
             mock_script, mock_choices, workers, manifest_out):
    """Generate a full game; prints the story id and run stats as JSON."""
    cfg, overflow = _load_config(config_path, mode, seed)
    store = GraphStore(ctx.obj["store_path"])
    chat = _make_chat_provider(provider, cfg, mock_script, mock_choices)
    policy = OverflowPolicy(
        max_tokens=cfg.max_context_tokens,
        trigger_fraction=overflow.get("trigger", 0.8),
        target_fraction=overflow.get("target", 0.6),
        pinned_prefix_len=overflow.get("pinned_prefix_len", 2))
    engine = BranchEngine(cfg, chat, store, prompt_kit=ctx.obj["kit"],
                          policy=policy, provider_id=provider)
    source = store.get_story(from_story) if from_story else None
    story_id = engine.run(from_story=source, workers=workers)
    if manifest_out:
        Path(manifest_out).write_text(
            json.dumps(engine.last_run_summary, indent=2, sort_keys=True),
            encoding="utf-8")
    click.echo(json.dumps({"story_id": story_id,
                           "stats": engine.last_run_summary["stats"]}))


@cli.command()
@click.option("--story", "story_id", required=True)
@click.option("--assets-dir", default="assets", show_default=True)
@click.option("--image-provider", "image_provider", default="mock",
              show_default=True, type=click.Choice(["mock", "http"]))
@click.pass_context
def assets(ctx, story_id, assets_dir, image_provider):
    """Generate character and scene images for a story."""
    store = GraphStore(ctx.obj["store_path"])
    sd = store.get_story(story_id)
    provider = (MockImageProvider() if image_provider == "mock"
                else HttpImageProvider())
    pipeline = AssetPipeline(assets_dir, provider, prompt_kit=ctx.obj["kit"])
    manifest = pipeline.build_assets(sd)
    click.echo(json.dumps({
        "story_id": story_id,
        "characters": len(manifest["characters"]),
        "scenes": len(manifest["scenes"]),
        "failures": len(manifest["failures"]),
    }))


@cli.command()
@click.option("--story", "story_id", required=True)
@click.option("--judge", default="mock", show_default=True,
              type=click.Choice(["mock", "http"]))
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Also write the report as JSON.")
@click.pass_context
def evaluate(ctx, story_id, judge, out_path):
    """Score every chunk of a game and print the aggregate table."""
    store = GraphStore(ctx.obj["store_path"])
    provider = MockJudgeProvider() if judge == "mock" else HttpChatProvider()
    evaluator = Evaluator(store, provider,
                          params=ChatParams(temperature=0.0, model_id=judge),
                          prompt_kit=ctx.obj["kit"])
    report = evaluator.evaluate_game(story_id)
    mode = store.run_manifest(story_id).get("mode", "?")
    if out_path:
        Path(out_path).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True),
            encoding="utf-8")
    click.echo(render_report_table([(story_id, mode, report)]))


@cli.group()
def analyze():
    """Corpus analyses over one or more games."""


@analyze.command()
@click.option("--stories", multiple=True, required=True)
@click.option("--top", "top", type=int, default=30, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.pass_context
def freq(ctx, stories, top, out_path):
    """Word frequency table over the given games."""
    store = GraphStore(ctx.obj["store_path"])
    freqs = corpus.word_frequencies(store, stories)
    table = corpus.format_frequency_table(corpus.top_n(freqs, top))
    if out_path:
        Path(out_path).write_text(table + "\n", encoding="utf-8")
    click.echo(table)


@analyze.command()
@click.option("--stories", multiple=True, required=True)
@click.option("--lexicon-pos", "lexicon_pos", type=click.Path(exists=True),
              default=None, help="Positive word list file.")
@click.option("--lexicon-neg", "lexicon_neg", type=click.Path(exists=True),
              default=None, help="Negative word list file.")
@click.option("--label", default="run", show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.pass_context
def sentiment(ctx, stories, lexicon_pos, lexicon_neg, label, out_path):
    """Sentiment word counts over the given games."""
    store = GraphStore(ctx.obj["store_path"])
    if lexicon_pos and lexicon_neg:
        lexicon = corpus.Lexicon.from_files(lexicon_pos, lexicon_neg)
    elif lexicon_pos or lexicon_neg:
        raise click.UsageError("supply both lexicon files or neither")
    else:
        lexicon = corpus.fixture_lexicon()
    summary = corpus.sentiment_counts(store, stories, lexicon)
    table = corpus.format_sentiment_table([(label, summary)])
    if out_path:
        Path(out_path).write_text(table + "\n", encoding="utf-8")
    click.echo(table)


@cli.command()
@click.option("--story", "story_id", required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--include-histories", is_flag=True, default=False)
@click.pass_context
def export(ctx, story_id, out_path, include_histories):
    """Write a game as a portable document."""
    store = GraphStore(ctx.obj["store_path"])
    doc = store.export_game(story_id, include_histories=include_histories)
    Path(out_path).write_bytes(canonical_json(doc))
    click.echo(out_path)


@cli.command(name="import")
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.pass_context
def import_cmd(ctx, in_path):
    """Load a previously exported game into the store."""
    store = GraphStore(ctx.obj["store_path"])
    doc = json.loads(Path(in_path).read_text(encoding="utf-8"))
    click.echo(store.import_game(doc))


@cli.command()
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--assets-dir", default="assets", show_default=True)
@click.option("--ui-dir", default=None,
              help="Static player UI build to serve at /.")
@click.pass_context
def serve(ctx, port, host, assets_dir, ui_dir):
    """Serve the read-only game API (and optionally the player UI)."""
    import uvicorn

    from .server import create_app

    store = GraphStore(ctx.obj["store_path"])
    pipeline = AssetPipeline(assets_dir, image_provider=None,
                             prompt_kit=ctx.obj["kit"])
    app = create_app(store, pipeline, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main(argv=None):
    try:
        cli(args=argv, standalone_mode=False, obj={})
        return 0
    except click.UsageError as e:
        print(f"ERROR usage: {e.format_message()}", file=sys.stderr)
        return 1
    except click.ClickException as e:
        print(f"ERROR usage: {e.format_message()}", file=sys.stderr)
        return 1
    except click.exceptions.Abort:
        return 1
    except DomainError as e:
        print(f"ERROR {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except ProviderError as e:
        print(f"ERROR {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    except StorageFailure as e:
        print(f"ERROR {type(e).__name__}: {e}", file=sys.stderr)
        return 4
    except BranchForgeError as e:
        print(f"ERROR {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
