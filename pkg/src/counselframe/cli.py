"""Command-line entry points.

One subcommand per pipeline stage plus corpus generation, reporting, the
review service, and non-interactive review helpers. Exit codes: 0 success,
2 configuration error, 3 stage failure, 4 pending-review block.
"""

from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path

import click

from . import pipeline as pl
from . import reports, synthetic
from .adjudication import TaskKind, TaskStatus
from .review_api import app_from_out_dir, task_payload


def _fail(exc: pl.PipelineError) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(exc.exit_code)


def config_options(fn):
    @click.option("--notes", "notes_path", type=click.Path(path_type=Path), required=True)
    @click.option("--history", "history_path", type=click.Path(path_type=Path), required=True)
    @click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
    @click.option("--backend", type=click.Choice(["mock", "http"]), default="mock", show_default=True)
    @click.option("--endpoint", default="", help="Chat-completion base URL (http backend).")
    @click.option("--extract-model", default="echo-extract", show_default=True)
    @click.option("--frame-model", default="echo-frame", show_default=True)
    @click.option("--token-env", default="COUNSELFRAME_API_TOKEN", show_default=True,
                  help="Environment variable holding the backend token.")
    @click.option("--parallelism", type=int, default=4, show_default=True)
    @click.option("--temperature", type=float, default=0.0, show_default=True)
    @click.option("--prompt-variant", type=click.Choice(["short", "long"]), default="short",
                  show_default=True)
    @click.option("--header-pattern", "header_patterns", multiple=True,
                  help="Counseling section header (repeatable); defaults to the built-in set.")
    @click.option("--concept-map", "concept_map_path", type=click.Path(path_type=Path), default=None)
    @click.option("--sidecar", "sidecar_path", type=click.Path(path_type=Path), default=None,
                  help="Ground-truth sidecar (enables recall reports and auto review).")
    @click.option("--review-policy", type=click.Choice(["manual", "auto"]), default="manual",
                  show_default=True)
    @click.option("--seed", type=int, default=7, show_default=True)
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        return fn(*args, **kwargs)

    return wrapper


def _build_config(**kwargs) -> pl.PipelineConfig:
    if not kwargs.get("header_patterns"):
        kwargs.pop("header_patterns", None)
    else:
        kwargs["header_patterns"] = tuple(kwargs["header_patterns"])
    return pl.PipelineConfig(**kwargs)


def _pipeline(**kwargs) -> pl.Pipeline:
    try:
        return pl.Pipeline(_build_config(**kwargs))
    except pl.PipelineError as exc:
        _fail(exc)
        raise AssertionError("unreachable")


def _run_stages(names: tuple[str, ...], **kwargs) -> None:
    pipe = _pipeline(**kwargs)
    try:
        manifest = pipe.load_manifest()
        for name in names:
            manifest = pipe.run_stage(name, manifest)
        for name in names:
            click.echo(json.dumps({name: manifest["stages"][name]["summary"]}, sort_keys=True))
    except pl.PipelineError as exc:
        _fail(exc)


@click.group()
def cli() -> None:
    """Cohort construction and counseling-framing analysis pipeline."""


@cli.command()
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--n-vbac", type=int, default=20, show_default=True)
@click.option("--n-rcs", type=int, default=40, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True)
def generate(out_dir: Path, n_vbac: int, n_rcs: int, seed: int) -> None:
    """Generate a deterministic synthetic corpus with a ground-truth sidecar."""
    spec = synthetic.SyntheticCorpusSpec(n_vbac=n_vbac, n_rcs=n_rcs, seed=seed)
    generated = synthetic.generate_synthetic_corpus(spec, out_dir)
    click.echo(json.dumps({
        "notes": str(generated.notes_path),
        "history": str(generated.history_path),
        "sidecar": str(generated.sidecar_path),
    }, sort_keys=True))


@cli.command()
@config_options
@click.option("--force", is_flag=True, help="Re-run stages even when marked complete.")
def run(force: bool, **kwargs) -> None:
    """Run every stage in order, resuming from persisted state."""
    pipe = _pipeline(**kwargs)
    try:
        manifest = pipe.run(force=force)
    except pl.PipelineError as exc:
        _fail(exc)
        return
    click.echo(json.dumps({
        "stages": {name: entry["summary"] for name, entry in manifest["stages"].items()},
    }, sort_keys=True))


@cli.command()
@config_options
def ingest(**kwargs) -> None:
    """Load and validate the corpus, then scrub residual identifiers."""
    _run_stages(("ingest", "scrub"), **kwargs)


@cli.command()
@config_options
def eligibility(**kwargs) -> None:
    """Apply the structured eligibility rules to every patient."""
    _run_stages(("eligibility",), **kwargs)


@cli.command()
@config_options
def extract(**kwargs) -> None:
    """Run grounded extraction over Potentially Eligible RCS narratives."""
    _run_stages(("extract",), **kwargs)


@cli.command()
@config_options
def audit(**kwargs) -> None:
    """Verbatim-audit extraction output and queue flags for review."""
    _run_stages(("audit",), **kwargs)


@cli.command()
@config_options
def finalize(**kwargs) -> None:
    """Close out reviews, adjudicate eligibility, and freeze the cohort."""
    _run_stages(("review", "finalize"), **kwargs)


@cli.command()
@config_options
def segment(**kwargs) -> None:
    """Split cohort counseling sections into sentence segments."""
    _run_stages(("segment",), **kwargs)


@cli.command()
@config_options
def frame(**kwargs) -> None:
    """Classify each counseling segment into a framing category."""
    _run_stages(("frame",), **kwargs)


@cli.command()
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None,
              help="Pipeline output directory (stage mode).")
@click.option("--counts-file", type=click.Path(path_type=Path), default=None,
              help="Analyze a saved contingency table instead of stage output.")
def stats(out_dir: Path | None, counts_file: Path | None) -> None:
    """Contingency analysis: either the pipeline stage or a counts file."""
    if counts_file is not None:
        try:
            payload = reports.analyze_counts_file(counts_file)
        except (OSError, ValueError, KeyError) as exc:
            click.echo(f"error: cannot analyze {counts_file}: {exc}", err=True)
            sys.exit(2)
        click.echo(reports.render_contingency_text(payload), nl=False)
        return
    if out_dir is None:
        click.echo("error: provide --out for stage mode or --counts-file", err=True)
        sys.exit(2)
    manifest_path = Path(out_dir) / "config.json"
    if not manifest_path.exists():
        click.echo(f"error: no pipeline run found under {out_dir}", err=True)
        sys.exit(2)
    config = pl.PipelineConfig.from_dict(json.loads(manifest_path.read_text())["config"])
    try:
        pipe = pl.Pipeline(config)
        manifest = pipe.run_stage("stats")
    except pl.PipelineError as exc:
        _fail(exc)
        return
    click.echo(json.dumps(manifest["stages"]["stats"]["summary"], sort_keys=True))


@cli.command()
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--sidecar", "sidecar_path", type=click.Path(path_type=Path), default=None)
def report(out_dir: Path, sidecar_path: Path | None) -> None:
    """Assemble the report bundle from completed stage outputs."""
    try:
        written = reports.build_report_bundle(out_dir, sidecar_path)
    except FileNotFoundError as exc:
        click.echo(f"error: missing stage output: {exc}", err=True)
        sys.exit(3)
    for path in written:
        click.echo(str(path))


@cli.command("review-serve")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8630, show_default=True)
@click.option("--token-env", default="COUNSELFRAME_REVIEW_TOKEN", show_default=True,
              help="Environment variable holding the optional static bearer token.")
def review_serve(out_dir: Path, host: str, port: int, token_env: str) -> None:
    """Serve the adjudication HTTP API over a run's review store."""
    import uvicorn

    app = app_from_out_dir(out_dir, token=os.environ.get(token_env) or None)
    static_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if static_dir.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(static_dir), html=True), name="ui")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@cli.group()
def review() -> None:
    """Non-interactive review operations against a run's store."""


def _store(out_dir: Path):
    from .adjudication import ReviewStore

    log_path = Path(out_dir) / "stages" / "review" / "events.jsonl"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    return ReviewStore(log_path)


@review.command("list")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--status", type=click.Choice([s.value for s in TaskStatus]), default=None)
@click.option("--kind", type=click.Choice([k.value for k in TaskKind]), default=None)
@click.option("--field", default=None)
@click.option("--record-id", default=None)
def review_list(out_dir: Path, status: str | None, kind: str | None,
                field: str | None, record_id: str | None) -> None:
    """List review tasks as JSON lines."""
    store = _store(out_dir)
    tasks = store.tasks(
        status=TaskStatus(status) if status else None,
        kind=TaskKind(kind) if kind else None,
        field=field,
        record_id=record_id,
    )
    for task in tasks:
        click.echo(json.dumps(task_payload(task), sort_keys=True))


@review.command("resolve")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--note", "reviewer_note", default="")
@click.argument("task_id")
@click.argument("decision")
def review_resolve(out_dir: Path, task_id: str, decision: str, reviewer_note: str) -> None:
    """Resolve one task with the given decision string."""
    from .adjudication import AdjudicationError

    store = _store(out_dir)
    try:
        task = store.resolve_task(task_id, decision, reviewer_note=reviewer_note)
    except AdjudicationError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(json.dumps(task_payload(task), sort_keys=True))


@review.command("pending")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
def review_pending(out_dir: Path) -> None:
    """Print the pending-task count."""
    click.echo(str(_store(out_dir).pending_count()))


def main() -> None:
    cli(prog_name="counselframe")


if __name__ == "__main__":
    main()
