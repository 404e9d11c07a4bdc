"""
Command Line Interface for the CA-LoRA testbed.

Usage:
    # Run one stage, or every stage in order
    calora world --config configs/default.yaml
    calora sensitivity --config configs/default.yaml --sweep
    calora all --config configs/smoke.yaml

    # Write the proportion sweep and compare finished runs
    calora sweep --base configs/default.yaml --out configs/sweep
    calora compare runs/<hash> runs/<hash> --out compare/

    # Introspection
    calora list-stages
"""

import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import click
import yaml

from . import __version__
from .artifacts import RunStore, load_run
from .config import ExperimentConfig, dump_config, load_config
from .errors import CaloraError, MissingArtifactError
from .evaluation import (
    MetricReport,
    check_comparable,
    check_trends,
    row_from_report,
    write_compare_table,
    write_seed_table,
)
from .models import StageContext, StageResult
from .stages import load_pipeline, run_all

SWEEP_PROPORTIONS = [0.0, 0.01, 0.02, 0.03, 0.05, 0.1, 1.0]


def setup_logging(verbose: bool = False) -> None:
    """Configure logging."""
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def fail(message: str, code: int) -> None:
    click.echo(click.style(f"Error: {message}", fg="red"), err=True)
    sys.exit(code)


def stage_options(fn):
    """``--config``, ``--seed``, ``--sweep``, ``--out`` and ``-v`` shared by every stage command."""
    fn = click.option("-v", "--verbose", is_flag=True, help="Enable verbose output")(fn)
    fn = click.option("--out", "out", type=click.Path(file_okay=False), default=None,
                      help="Run root (defaults to run_root from the config)")(fn)
    fn = click.option("--sweep", is_flag=True, help="Also write the sensitivity sweeps")(fn)
    fn = click.option("--seed", type=int, default=None, help="Override the master seed")(fn)
    fn = click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
                      help="Experiment config (YAML)")(fn)
    return fn


def build_context(config_path: str, seed: Optional[int], sweep: bool, out: Optional[str]) -> StageContext:
    config = load_config(config_path)
    if seed is not None:
        config = ExperimentConfig.model_validate({**config.model_dump(), "seed": seed})
    store = RunStore(config, root=out)
    return StageContext(config=config, store=store, sweep=sweep, progress=sys.stderr.isatty())


def report_results(results: List[StageResult]) -> None:
    for response in results:
        if response.status == "error":
            fail(f"stage {response.stage}: {response.error}", response.exit_code)
        click.echo(click.style(f"{response.stage}: success", fg="green"))
        click.echo(json.dumps(response.result, indent=2, default=str))


def run_stage(stage: str, config_path: str, seed: Optional[int], sweep: bool, out: Optional[str],
              verbose: bool) -> None:
    setup_logging(verbose)
    logger = logging.getLogger(__name__)
    try:
        ctx = build_context(config_path, seed, sweep, out)
    except CaloraError as e:
        fail(str(e), e.exit_code)
    logger.info(f"Run directory: {ctx.store.run_dir}")
    if stage == "all":
        report_results(run_all(ctx))
    else:
        report_results([load_pipeline().execute(stage, ctx)])


@click.group()
@click.version_option(version=__version__, prog_name="calora")
def cli():
    """
    CA-LoRA testbed

    Concept-sensitivity measurement, concept-aware LoRA and segmentation-data
    generation on a procedural image world.
    """
    pass


def _stage_command(name: str, help_text: str):
    @stage_options
    def command(config_path, seed, sweep, out, verbose):
        run_stage(name, config_path, seed, sweep, out, verbose)

    command.__doc__ = help_text
    return cli.command(name)(command)


for _name, _help in [
    ("world", "Render the pretraining corpus, the source set and the test domains."),
    ("pretrain", "Pretrain the denoiser on the whole corpus."),
    ("sensitivity", "Measure the concept-sensitivity map (with --sweep: timestep and augmentation sweeps)."),
    ("finetune", "Select units by sensitivity and train CA-LoRA adapters on the source set."),
    ("labelgen", "Train the label generator on features of the finetuned denoiser."),
    ("generate", "Generate image-label pairs for every configured condition."),
    ("evaluate", "Score the generated data and write the metric report."),
    ("all", "Run every stage in order."),
]:
    _stage_command(_name, _help)


@cli.command()
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path())
@click.option("--out", "out", type=click.Path(file_okay=False), default="compare",
              help="Directory for the comparison tables")
@click.option("-v", "--verbose", is_flag=True, help="Enable verbose output")
def compare(run_dirs: Tuple[str, ...], out: str, verbose: bool):
    """
    Compare finished runs: one row per run plus the seed-level table and trend checks.

    Example:
        calora compare runs/3f2a... runs/91bc... --out compare/
    """
    setup_logging(verbose)
    configs, reports = [], {}
    try:
        for run_dir in run_dirs:
            config = load_run(run_dir)
            report_path = Path(run_dir) / "evaluate" / "report.yaml"
            if not report_path.exists():
                raise MissingArtifactError("evaluate", str(report_path))
            configs.append(config)
            reports[Path(run_dir).name] = MetricReport.from_yaml(report_path)
        check_comparable(configs)
    except CaloraError as e:
        fail(str(e), e.exit_code)

    rows = [row_from_report(run_id, config, report)
            for (run_id, report), config in zip(reports.items(), configs)]
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_compare_table(rows, out_dir / "compare.csv")
    write_seed_table(reports, out_dir / "seeds.csv")
    checks = check_trends(rows)
    (out_dir / "trends.yaml").write_text(yaml.safe_dump([c.to_dict() for c in checks], sort_keys=False))

    click.echo(f"\nCompared {len(rows)} runs:\n")
    for row in rows:
        values = "  ".join(f"{k}={row.get(k):.4f}" for k in ["mmd_source", "adherence_accuracy",
                                                          "fewshot_delta", "dg_delta"])
        click.echo(f"  {click.style(row.label, bold=True):<24} {values}")
    click.echo("\nTrends:")
    colors = {"pass": "green", "flat": "yellow", "missing": "white"}
    for check in checks:
        click.echo(f"  {check.name}: {click.style(check.status, fg=colors[check.status])}")
    click.echo(f"\nTables written to {out_dir}")


@cli.command()
@click.option("--base", "base_path", required=True, type=click.Path(dir_okay=False),
              help="Config every sweep point starts from")
@click.option("--out", "out", required=True, type=click.Path(file_okay=False),
              help="Directory for the generated configs")
def sweep(base_path: str, out: str):
    """
    Write the selection-proportion sweep for both concepts as config files.

    Proportion 0 (pretrained) and 1 (original LoRA) are concept-independent
    and written once.
    """
    try:
        base = load_config(base_path)
    except CaloraError as e:
        fail(str(e), e.exit_code)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for concept in ("style", "viewpoint"):
        for proportion in SWEEP_PROPORTIONS:
            if proportion in (0.0, 1.0) and concept != "style":
                continue
            data = base.model_dump()
            data["sensitivity"]["concept"] = concept
            data["selection"] = {"proportion": proportion, "handcrafted": None}
            tag = {0.0: "pretrained", 1.0: "lora"}.get(proportion, f"{concept}-{proportion * 100:g}pct")
            data["name"] = f"{base.name}-{tag}"
            config = ExperimentConfig.model_validate(data)
            path = out_dir / f"{tag}.yaml"
            path.write_text(dump_config(config))
            written.append(path)
    click.echo(f"Wrote {len(written)} configs to {out_dir}")
    for path in written:
        click.echo(f"  - {path.name}")


@cli.command("list-stages")
@click.option(
    "--json",
    "as_json",
    is_flag=True,
    help="Output as JSON",
)
def list_stages(as_json: bool):
    """
    List all registered stages.
    """
    stage_list = load_pipeline().list_stages()

    if as_json:
        click.echo(json.dumps([s.to_dict() for s in stage_list], indent=2))
        return

    click.echo(f"\nRegistered Stages ({len(stage_list)}):\n")

    for stage in stage_list:
        click.echo(f"  {click.style(stage.name, bold=True)}")
        click.echo(f"    {stage.description}")

        if stage.inputs:
            inputs = ", ".join(f"{i.name}:{i.type}" for i in stage.inputs)
            click.echo(f"    Inputs:   {inputs}")

        if stage.outputs:
            outputs = ", ".join(f"{o.name}:{o.type}" for o in stage.outputs)
            click.echo(f"    Outputs:  {outputs}")

        if stage.pre:
            click.echo(f"    Pre:      {', '.join(stage.pre)}")

        if stage.post:
            click.echo(f"    Post:     {', '.join(stage.post)}")

        click.echo(f"    Sections: {', '.join(stage.sections)}")
        click.echo()


@cli.command("list-types")
@click.option(
    "--json",
    "as_json",
    is_flag=True,
    help="Output as JSON",
)
def list_types(as_json: bool):
    """
    List all registered artifact types.
    """
    type_list = load_pipeline().list_types()

    if as_json:
        click.echo(json.dumps([t.to_dict() for t in type_list], indent=2))
        return

    click.echo(f"\nRegistered Types ({len(type_list)}):\n")

    for dtype in type_list:
        click.echo(f"  {click.style(dtype.name, bold=True)}")
        click.echo(f"    {dtype.description}")

        if dtype.own_properties:
            click.echo("    Properties:")
            for prop in dtype.own_properties:
                click.echo(f"      - {prop.name}: {prop.type}")
                if prop.description:
                    click.echo(f"        {prop.description}")
        click.echo()


def main():
    """Entry point for the CLI."""
    cli()


if __name__ == "__main__":
    main()
