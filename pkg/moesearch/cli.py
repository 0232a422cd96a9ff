"""
Command-line interface: ``moesearch [global options] <command>``.

Exit codes: 0 success, 1 missing artifact or I/O failure, 2 invalid
configuration, 3 latency table does not cover a block key, 4 training
aborted on a non-finite loss.
"""

import json
import logging
from collections.abc import Callable
from pathlib import Path
from typing import Any

import click

from . import __version__
from .config.settings import create_default_settings
from .core.errors import (
    ConfigError,
    CoverageError,
    DataError,
    MoESearchError,
    NumericAbort,
    ParameterError,
    SpecError,
)
from .pipeline import SearchPipeline, create_pipeline
from .search.finalize import render_architecture
from .search.latency import REFERENCE_KEY

logger = logging.getLogger("moesearch")

EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_COVERAGE = 3
EXIT_NUMERIC = 4


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}") from None


def _pipeline(ctx: click.Context) -> SearchPipeline:
    opts = ctx.obj
    overrides = list(opts["overrides"])
    if opts["seed"] is not None:
        overrides.append(f"run.seed={opts['seed']}")
    if opts["target_ratio"] is not None:
        overrides.append(f"target_ratio={opts['target_ratio']}")
    if opts["no_progress"]:
        overrides.append("run.progress_bar=false")
    return create_pipeline(opts["config"], overrides, opts["output_dir"])


def _run(ctx: click.Context, action: Callable[[SearchPipeline], Any]) -> Any:
    """Build the pipeline, run ``action`` and map failures to exit codes."""
    try:
        return action(_pipeline(ctx))
    except (ConfigError, SpecError, ParameterError) as e:
        logger.error(f"Configuration error: {e}")
        ctx.exit(EXIT_CONFIG)
    except CoverageError as e:
        logger.error(f"Latency table is incomplete: {e}")
        ctx.exit(EXIT_COVERAGE)
    except NumericAbort as e:
        logger.error(f"Training aborted: {e}")
        click.echo(json.dumps(e.snapshot, indent=2), err=True)
        ctx.exit(EXIT_NUMERIC)
    except (FileNotFoundError, DataError, OSError, MoESearchError) as e:
        logger.error(str(e))
        ctx.exit(EXIT_IO)


@click.group()
@click.version_option(__version__, prog_name="moesearch")
@click.option("-c", "--config", "config", type=click.Path(dir_okay=False), default=None,
              help="Run configuration file (.json, .yaml).")
@click.option("--set", "overrides", multiple=True, metavar="PATH=VALUE",
              help="Override one config field, e.g. --set phase1.epochs=3.")
@click.option("--seed", type=int, default=None, help="Override run.seed.")
@click.option("--target-ratio", type=float, default=None, help="Override target_ratio.")
@click.option("-o", "--output-dir", type=click.Path(file_okay=False), default=None,
              help="Override run.output_dir.")
@click.option("--no-progress", is_flag=True, help="Disable progress bars.")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.option("-q", "--quiet", is_flag=True, help="Warnings and errors only.")
@click.pass_context
def main(ctx, config, overrides, seed, target_ratio, output_dir, no_progress, verbose, quiet):
    """Latency-aware architecture search over mixture-of-experts transformer blocks."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj.update(
        config=config,
        overrides=overrides,
        seed=seed,
        target_ratio=target_ratio,
        output_dir=output_dir,
        no_progress=no_progress,
    )


@main.command()
@click.argument("path", type=click.Path(dir_okay=False))
def init(path):
    """Write the default run configuration to PATH."""
    from .config.settings import RunConfig

    RunConfig(create_default_settings()).save(path)
    click.echo(f"Default configuration written to {path}")


@main.command()
@click.option("--force", is_flag=True, help="Re-profile every key even if the table exists.")
@click.option("--sweep-batches", default=None, metavar="B1,B2,...",
              help="Also profile across these batch sizes.")
@click.pass_context
def profile(ctx, force, sweep_batches):
    """Profile every block key of the search space and backbone."""
    batch_sizes = _int_list(sweep_batches) if sweep_batches else None

    def action(pipeline: SearchPipeline) -> None:
        table = pipeline.profile(force=force)
        frame = table.normalized() if REFERENCE_KEY in table else table.to_frame()
        click.echo(frame.to_string(index=False))
        if batch_sizes:
            frames = pipeline.batch_sweep(batch_sizes)
            for name, result in frames.items():
                click.echo(f"\n{name}\n{result.to_string(index=False)}")

    _run(ctx, action)


@main.command()
@click.option("--resume", is_flag=True, help="Continue from the run's last checkpoint.")
@click.pass_context
def search(ctx, resume):
    """Run the architecture search and write the sampled descriptor."""

    def action(pipeline: SearchPipeline) -> None:
        outcome = pipeline.search(resume=resume)
        click.echo(render_architecture(outcome.descriptor), nl=False)
        if outcome.descriptor.target_met is False:
            click.echo("target not met", err=True)

    _run(ctx, action)


@main.command()
@click.option("--descriptor", "descriptor", type=click.Path(dir_okay=False), default=None,
              help="Architecture descriptor (default: the search run's).")
@click.pass_context
def retrain(ctx, descriptor):
    """Train a sampled or hand-written architecture from scratch."""

    def action(pipeline: SearchPipeline) -> None:
        result = pipeline.retrain(descriptor)
        if result.validation:
            last = result.validation[-1]
            click.echo(
                f"valid CE {last.ce:.4f}  BPC {last.bpc:.3f}  PPL {last.ppl:.2f}  "
                f"balance {last.balance_loss:.3f}"
            )

    _run(ctx, action)


@main.command(name="eval")
@click.option("--split", type=click.Choice(["train", "valid", "test"]), default="test")
@click.option("--run-dir", type=click.Path(file_okay=False), default=None,
              help="Retrain directory (default: <output_dir>/retrain).")
@click.pass_context
def eval_command(ctx, split, run_dir):
    """Score a retrained model: cross-entropy, bits per character, perplexity."""

    def action(pipeline: SearchPipeline) -> None:
        scores = pipeline.evaluate(run_dir, split)
        click.echo(json.dumps({"split": split, **scores.as_dict()}, indent=2))

    _run(ctx, action)


def _echo_summary(summary: dict[str, Any]) -> None:
    for key, value in summary.items():
        shown = f"{value:.4f}" if isinstance(value, float) else value
        click.echo(f"{key}: {shown}")


@main.command()
@click.option("--no-measure", is_flag=True, help="Skip end-to-end latency measurement.")
@click.pass_context
def report(ctx, no_measure):
    """Collect every search run into plot-ready CSVs and a summary."""
    _run(ctx, lambda pipeline: _echo_summary(pipeline.report(measure=not no_measure)))


@main.command()
@click.option("--targets", default=None, metavar="T1,T2,...",
              help="Target ratios (default: report.sweep_targets).")
@click.option("--no-measure", is_flag=True, help="Skip end-to-end latency measurement.")
@click.pass_context
def sweep(ctx, targets, no_measure):
    """Search once per target ratio, then write the report."""
    chosen = _float_list(targets) if targets else None

    def action(pipeline: SearchPipeline) -> None:
        ratios = chosen or pipeline.config.get_value("report.sweep_targets")
        for outcome in pipeline.sweep(ratios):
            d = outcome.descriptor
            click.echo(
                f"target {d.target_ratio:.2f}: {d.latency_ratio():.3f} x baseline "
                f"({'met' if d.target_met else 'not met'}) {'/'.join(d.keys)}"
            )
        _echo_summary(pipeline.report(measure=not no_measure))

    _run(ctx, action)


if __name__ == "__main__":
    main(obj={})
