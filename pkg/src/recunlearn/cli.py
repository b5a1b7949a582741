"""Command-line entry points for running experiments and sweeps."""

import click

from . import harness


@click.group()
def main():
    """Recommendation-unlearning benchmark runner."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--output", default=None, help="Override the config's output directory.")
def run(config_path, output):
    """Run all configured method x strategy cells and write CSVs."""
    cfg = harness.load_config(config_path)
    rows = harness.run_experiment(cfg, out_dir=output)
    out_dir = output if output is not None else cfg.output
    failed = sum(1 for r in rows if r.status != "ok")
    click.echo(f"wrote {len(rows)} rows to {out_dir}/results.csv ({failed} failed cells)")


@main.command("sweep")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--dim", "dimension", required=True, type=click.Choice(["shards", "ratio"]))
@click.option("--values", required=True, help="Comma-separated sweep values, e.g. 5,10,20")
@click.option("--output", default=None, help="Override the config's output directory.")
def sweep_cmd(config_path, dimension, values, output):
    """Sweep one dimension (shard count or unlearn ratio)."""
    cfg = harness.load_config(config_path)
    parts = [v.strip() for v in values.split(",") if v.strip()]
    if not parts:
        raise click.BadParameter("no sweep values given", param_hint="--values")
    parsed = [int(v) for v in parts] if dimension == "shards" else [float(v) for v in parts]
    rows = harness.sweep(cfg, dimension, parsed, out_dir=output)
    out_dir = output if output is not None else cfg.output
    failed = sum(1 for r in rows if r.status != "ok")
    click.echo(f"wrote {len(rows)} rows to {out_dir}/results.csv ({failed} failed cells)")


if __name__ == "__main__":
    main()
