"""Command line: run experiment presets and re-plot stored results."""

from __future__ import annotations

import logging
import os
import sys
from pathlib import Path

import click

from . import experiments, harness, plotting


def _csv_list(value):
    if value is None:
        return None
    return [v.strip() for v in value.split(",") if v.strip()]


def _float_list(ctx, param, value):
    items = _csv_list(value)
    if items is None:
        return None
    try:
        return [float(v) for v in items]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {value!r}") from None


def _fail(msg, code=2):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress of every block.")
def main(verbose):
    """Pilot-poisoning experiments against online deep MIMO receivers."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("presets")
def list_presets():
    """List the bundled experiment presets."""
    for name in experiments.available_presets():
        raw = experiments.read_config(experiments.preset_path(name))
        click.echo(f"{name}\t{raw.get('title', '')}")


@main.command()
@click.argument("preset_arg", required=False, metavar="[PRESET]")
@click.option("--preset", "preset_opt", help="Bundled preset name (same as the positional argument).")
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              help="YAML experiment file in the preset format.")
@click.option("--scale", type=click.Choice(experiments.SCALES), default=None,
              help="desk (reduced) or full (published-size) scale. Default: the file's, else desk.")
@click.option("--seed", type=int, default=None, help="Root seed.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None,
              help="Output directory. Default: $POISONLINK_OUT, else ./results.")
@click.option("--no-attack", is_flag=True, help="Run clean receivers only.")
@click.option("--receivers", default=None, help="Comma-separated receivers, e.g. deepsic,mlp.")
@click.option("--snr", default=None, callback=_float_list, help="Comma-separated SNR list in dB.")
@click.option("--pilot-size", type=int, multiple=True, help="Pilot size; repeat for a sweep.")
@click.option("--workers", type=int, default=None, help="Parallel repetitions.")
def run(preset_arg, preset_opt, config_path, scale, seed, out_dir, no_attack, receivers, snr,
        pilot_size, workers):
    """Run a preset (or config file) and write CSV, JSON and SVG artifacts."""
    if preset_arg and preset_opt and preset_arg != preset_opt:
        _fail(f"conflicting presets {preset_arg!r} and {preset_opt!r}")
    name = preset_arg or preset_opt
    if bool(name) == bool(config_path):
        _fail("give exactly one of PRESET / --preset or --config")
    try:
        if name:
            try:
                path = experiments.preset_path(name)
            except KeyError:
                _fail(f"unknown preset {name!r}; available: "
                      f"{', '.join(experiments.available_presets())}")
        else:
            path = Path(config_path)
            if not path.exists():
                _fail(f"config file {config_path} not found")
        raw = experiments.read_config(path)
        overrides = {
            "seed": seed, "receivers": _csv_list(receivers), "snr": snr,
            "pilot_sizes": list(pilot_size) or None, "workers": workers,
            "out_dir": out_dir,
        }
        if no_attack:
            overrides["attack"] = False
        eff = experiments.resolve(raw, scale, overrides)
    except experiments.ConfigError as exc:
        _fail(f"invalid config: {exc}")

    target = Path(eff.get("out_dir") or os.environ.get("POISONLINK_OUT") or "results")
    eff["out_dir"] = str(target)
    records, written = experiments.run(eff, target, progress=lambda m: click.echo(m, err=True))
    written += plotting.render(records, target, eff["name"], eff["plots"], eff.get("block_snr"),
                               eff.get("title"))
    for row in experiments.summarize(records):
        recv, _, snr_db, lp, clean, pois, deg = row
        click.echo(f"{recv:13s} snr={snr_db:5.1f} L_pilot={lp:5d} clean={clean:.4f} "
                   f"poisoned={pois:.4f} degradation={deg:+.3f} dB")
    for p in written:
        click.echo(str(p))


@main.command()
@click.argument("csv_paths", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", type=click.Path(file_okay=False), default=None,
              help="Where to write SVGs. Default: next to the first CSV.")
@click.option("--name", default=None, help="Figure file prefix. Default: first CSV's stem.")
@click.option("--block-snr", type=float, default=None, help="SNR for the SER-vs-block figure.")
def plot(csv_paths, out_dir, name, block_snr):
    """Render SVG figures from stored results (CSV plus JSON sibling)."""
    records = []
    try:
        for p in csv_paths:
            records += harness.load(p)
    except harness.RecordFormatError as exc:
        _fail(str(exc), 1)
    if not records:
        _fail("no records in input", 1)
    first = Path(csv_paths[0])
    target = Path(out_dir) if out_dir else first.parent
    target.mkdir(parents=True, exist_ok=True)
    plots = ["ser_vs_block"]
    if len({r.snr_db for r in records}) > 1:
        plots.append("ser_vs_snr")
    if len({r.l_pilot for r in records}) > 1:
        plots.append("ser_vs_pilot")
    for path in plotting.render(records, target, name or first.stem, plots, block_snr):
        click.echo(str(path))


if __name__ == "__main__":
    main()
