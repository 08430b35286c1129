"""Command-line entry points: ``homolab run`` and ``homolab fit``."""

from __future__ import annotations

import csv
import sys

import click

from .config import ConfigError, load_config
from .harness import run_experiment
from .rates import fit_rate


@click.group()
def main():
    """Stochastic-homogenization numerical laboratory."""


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--check", is_flag=True, help="Compare fitted rates to the acceptance windows.")
@click.option("--workers", default=1, show_default=True, help="Seed-parallel worker count.")
@click.option("--out", "out_dir", default=None, help="Output directory (overrides config).")
def run(config_path, check, workers, out_dir):
    """Run the experiment described by a TOML or JSON config file."""
    try:
        cfg = load_config(config_path)
        output = run_experiment(cfg, out_dir=out_dir, check=check, workers=workers)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from None
    if output.csv_path:
        click.echo(f"rows: {output.csv_path}")
    click.echo(f"summary: {output.json_path}")
    fit = output.summary.get("fit")
    if fit:
        click.echo(f"fitted slope: {fit['slope']:+.4f} ± {fit['stderr']:.4f} "
                   f"(R²={fit['r_squared']:.4f})")
    if check:
        passed = output.summary.get("check_passed")
        click.echo(f"check: {'PASS' if passed else 'FAIL'}")
        if not passed:
            sys.exit(1)


@main.command()
@click.argument("csv_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--x", "x_col", required=True, help="Column with the abscissa (e.g. L).")
@click.option("--y", "y_col", required=True, help="Column with the ordinate (e.g. sd).")
def fit(csv_path, x_col, y_col):
    """Log-log rate fit of two columns of a CSV file."""
    xs, ys = [], []
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or x_col not in reader.fieldnames or y_col not in reader.fieldnames:
            raise click.ClickException(
                f"columns {x_col!r}/{y_col!r} not found; available: {reader.fieldnames}"
            )
        for row in reader:
            try:
                x, y = float(row[x_col]), float(row[y_col])
            except ValueError:
                continue
            if x > 0 and y > 0:
                xs.append(x)
                ys.append(y)
    try:
        res = fit_rate(xs, ys)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from None
    click.echo(str(res))


if __name__ == "__main__":
    main()
