"""Operator command line: pipeline stages, querying, evaluation, inspection.

Exit codes: 0 ok, 2 usage, 3 missing prerequisite, 4 provider failure,
5 data integrity.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import index as index_mod
from .config import EngineConfig, load_config
from .errors import (
    DataIntegrityError,
    EngineError,
    InvalidInputError,
    PrerequisiteError,
    ProtocolError,
    StoreNotFoundError,
    StoreVersionError,
    TransportError,
)
from .evaluation import JudgeResponseError, PairComparison, aggregate, judge_pair
from .pipeline import (
    build_providers,
    corpus_cache,
    run_query,
    stage_ground,
    stage_index,
    stage_ingest,
    stage_segment,
)
from .store import atomic_write_text

EXIT_USAGE = 2
EXIT_PREREQUISITE = 3
EXIT_PROVIDER = 4
EXIT_DATA = 5


@click.group()
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Engine config YAML (environment variables override fields).",
)
@click.option(
    "--corpus",
    type=click.Path(file_okay=False, path_type=Path),
    default=Path("corpus"),
    show_default=True,
    help="Corpus directory holding all stage artifacts.",
)
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.pass_context
def main(ctx: click.Context, config_path: Path | None, corpus: Path, verbose: bool) -> None:
    """Scene-aware retrieval-augmented generation over long videos."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    cfg = load_config(config_path)
    ctx.obj = {"cfg": cfg, "corpus": corpus}


def _providers(ctx: click.Context):
    cfg: EngineConfig = ctx.obj["cfg"]
    corpus: Path = ctx.obj["corpus"]
    return build_providers(cfg, corpus_cache(corpus, cfg))


def _run(ctx: click.Context, action) -> None:
    try:
        action()
    except PrerequisiteError as exc:
        click.echo(f"prerequisite missing: {exc}", err=True)
        sys.exit(EXIT_PREREQUISITE)
    except (TransportError, ProtocolError) as exc:
        click.echo(f"provider failure: {exc}", err=True)
        sys.exit(EXIT_PROVIDER)
    except (DataIntegrityError, StoreNotFoundError, StoreVersionError) as exc:
        click.echo(f"data integrity: {exc}", err=True)
        sys.exit(EXIT_DATA)
    except InvalidInputError as exc:
        click.echo(f"invalid input: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    except EngineError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


@main.command()
@click.argument("source")
@click.option("--video-id", default=None, help="Override the video id (default: file stem).")
@click.option("--duration", type=float, default=None, help="Video duration in seconds.")
@click.pass_context
def ingest(ctx: click.Context, source: str, video_id: str | None, duration: float | None) -> None:
    """Ingest a transcript file (.tsv/.txt) or transcribe a media locator."""
    _run(
        ctx,
        lambda: stage_ingest(
            ctx.obj["corpus"],
            ctx.obj["cfg"],
            _providers(ctx),
            source,
            video_id=video_id,
            duration_s=duration,
        ),
    )


@main.command()
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--dry-run", is_flag=True, help="Print planned provider calls, issue none.")
@click.pass_context
def segment(ctx: click.Context, jobs: int, dry_run: bool) -> None:
    """Segment every ingested video into scenes."""
    _run(
        ctx,
        lambda: stage_segment(
            ctx.obj["corpus"], ctx.obj["cfg"], _providers(ctx), jobs=jobs, dry_run=dry_run
        ),
    )


@main.command()
@click.option("--jobs", type=int, default=1, show_default=True)
@click.pass_context
def ground(ctx: click.Context, jobs: int) -> None:
    """Caption scenes and build the knowledge graph."""
    _run(ctx, lambda: stage_ground(ctx.obj["corpus"], ctx.obj["cfg"], _providers(ctx), jobs=jobs))


@main.command()
@click.option("--jobs", type=int, default=1, show_default=True)
@click.pass_context
def index(ctx: click.Context, jobs: int) -> None:
    """Embed scene contexts and persist the store bundle."""
    _run(
        ctx, lambda: stage_index(ctx.obj["corpus"], ctx.obj["cfg"], _providers(ctx), jobs=jobs)
    )


@main.command()
@click.argument("text")
@click.option("--budget", type=int, default=None, help="Token budget override.")
@click.pass_context
def query(ctx: click.Context, text: str, budget: int | None) -> None:
    """Answer a query against the indexed corpus; prints result JSON."""

    def action() -> None:
        result = run_query(
            ctx.obj["corpus"], ctx.obj["cfg"], _providers(ctx), text, budget_tokens=budget
        )
        click.echo(json.dumps(result.to_dict(), indent=2))

    _run(ctx, action)


@main.command("eval")
@click.argument(
    "answers", type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
@click.option("--system-a", default=None, help="Name of system A (default: first seen).")
@click.option("--system-b", default=None, help="Name of system B (default: second seen).")
@click.option("--grouping", type=click.Choice(["all", "per-domain"]), default="per-domain")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.pass_context
def eval_command(
    ctx: click.Context,
    answers: Path,
    system_a: str | None,
    system_b: str | None,
    grouping: str,
    out: Path | None,
) -> None:
    """Pairwise judge answers from a JSONL file of {query_id, system, answer}."""

    def action() -> None:
        providers = _providers(ctx)
        if providers.judge is None:
            raise PrerequisiteError("eval needs a configured judge provider")
        records = [
            json.loads(line)
            for line in answers.read_text("utf-8").splitlines()
            if line.strip()
        ]
        systems: list[str] = []
        for record in records:
            if record["system"] not in systems:
                systems.append(record["system"])
        a = system_a or (systems[0] if systems else None)
        b = system_b or next((s for s in systems if s != a), None)
        if a is None or b is None:
            raise InvalidInputError("need answers from two systems")
        by_query: dict[str, dict] = {}
        for record in records:
            entry = by_query.setdefault(
                record["query_id"],
                {"domain": record.get("domain", "all"), "query": record.get("query", record["query_id"])},
            )
            entry[record["system"]] = record["answer"]
        comparisons: list[PairComparison] = []
        for query_id, entry in sorted(by_query.items()):
            if a not in entry or b not in entry:
                continue
            try:
                verdicts = judge_pair(entry["query"], entry[a], entry[b], providers.judge)
                comparisons.append(
                    PairComparison(query_id, entry["domain"], tuple(verdicts), True)
                )
            except JudgeResponseError as exc:
                click.echo(f"comparison {query_id} invalid: {exc}", err=True)
                comparisons.append(PairComparison(query_id, entry["domain"], (), False))
        table = aggregate(comparisons, grouping)
        rendered = table.render_text()
        click.echo(rendered)
        if out is not None:
            atomic_write_text(out, json.dumps(table.to_dict(), indent=2, sort_keys=True))

    _run(ctx, action)


@main.command()
@click.argument("what", type=click.Choice(["scenes", "graph", "vectors"]))
@click.pass_context
def inspect(ctx: click.Context, what: str) -> None:
    """Summarize persisted artifacts."""

    def action() -> None:
        bundle = index_mod.load(ctx.obj["corpus"])
        if what == "scenes":
            for scene_set in bundle.scene_sets:
                click.echo(f"video {scene_set.video_id}: {len(scene_set.scenes)} scene(s)")
                for scene in scene_set.scenes:
                    click.echo(
                        f"  {scene.id} [{scene.start_s:9.2f} -> {scene.end_s:9.2f}] "
                        f"{scene.kind:7s} {scene.transcript_text[:60]!r}"
                    )
        elif what == "graph":
            click.echo(
                f"graph: {bundle.graph.node_count} node(s), {bundle.graph.edge_count} edge(s)"
            )
            for name in sorted(bundle.graph.nodes)[:20]:
                entity = bundle.graph.nodes[name]
                click.echo(f"  {name} <- scenes {sorted(entity.source_scene_ids)}")
            if bundle.graph.edge_count:
                click.echo("edge list:")
                click.echo(bundle.graph.to_edge_list().rstrip())
        else:
            click.echo(
                f"vectors: {len(bundle.vectors)} row(s), dim {bundle.vectors.dim}"
            )

    _run(ctx, action)


if __name__ == "__main__":
    main()
