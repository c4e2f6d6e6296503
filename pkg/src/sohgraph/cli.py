"""Command-line front end.

Configuration is resolved as defaults, then an optional key-value file
(``-c``, INI sections ``[synth] [run] [base] [engine] [io]`` or a previous
``run.json``), then flags. The resolved configuration is echoed to
``run.json`` in the output directory, and ``-c out/run.json`` replays a run.
"""

from __future__ import annotations

import configparser
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import click

from . import plots
from .data_io import (
    SynthConfig,
    atomic_write_text,
    fmt_float,
    load_battery_csv,
    load_model,
    load_report,
    save_model,
    save_report,
    synth_battery,
    write_battery_csv,
)
from .errors import ConfigError, SohGraphError
from .gcn import TrainConfig
from .graph import BaseGraphConfig
from .pipeline import (
    RunConfig,
    candidate_grid,
    locate_discord,
    report_csv_text,
    report_metrics,
    run_offline,
    run_online,
    sweep_segments,
)
from .segments import SegmentSpec, select_segment
from .series_core import concat_cycles

log = logging.getLogger("sohgraph")

EXIT_CODES = {"usage": 2, "validation": 3, "io": 4, "divergence": 5}
SECTIONS = ("synth", "run", "base", "engine", "io")


def _defaults() -> dict:
    run = RunConfig().to_dict()
    return {
        "synth": SynthConfig().to_dict(),
        "base": run.pop("base"),
        "engine": run.pop("engine"),
        "run": run,
        "io": {"data": None, "model": None, "report": None},
    }


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _read_config(path) -> dict:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        doc = json.loads(text)
        return doc.get("config", doc)
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text, source=str(path))
    out = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{path.name}: unknown section [{section}]")
        out[section] = {k: _parse_value(v) for k, v in parser.items(section)}
    return out


def _merge(base: dict, update: dict) -> dict:
    for section, values in update.items():
        if section not in base:
            raise ConfigError(f"unknown config section {section!r}")
        for key, value in values.items():
            if key not in base[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            base[section][key] = value
    return base


def resolve_config(config_path=None, overrides=()) -> dict:
    cfg = _defaults()
    if config_path:
        _merge(cfg, _read_config(config_path))
    for section, key, value in overrides:
        if value is not None:
            _merge(cfg, {section: {key: value}})
    return cfg


def _parse_set(items) -> list:
    out = []
    for item in items:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise click.BadParameter(f"expected SECTION.KEY=VALUE, got {item!r}", param_hint="--set")
        out.append((section, name, _parse_value(value)))
    return out


def build_run_config(cfg: dict) -> RunConfig:
    try:
        return RunConfig(base=BaseGraphConfig(**cfg["base"]), engine=TrainConfig(**cfg["engine"]), **cfg["run"])
    except TypeError as exc:
        raise ConfigError(f"run config: {exc}") from None


def _load_data(cfg: dict):
    data = cfg["io"]["data"]
    if not data:
        raise ConfigError("no dataset given; pass --data DIR or set io.data")
    d = Path(data)
    return load_battery_csv(d / "cycles.csv", d / "labels.csv", battery_id=cfg["synth"]["battery_id"])


class Context:
    def __init__(self, command, config, out, overrides):
        self.command = command
        self.cfg = resolve_config(config, overrides)
        self.out = Path(out)

    def write_run_json(self, extra=None):
        self.out.mkdir(parents=True, exist_ok=True)
        doc = {"command": self.command, "config": self.cfg}
        if extra:
            doc.update(extra)
        atomic_write_text(self.out / "run.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")


def common(f):
    f = click.option("-c", "--config", type=click.Path(dir_okay=False), help="Key-value config file or a run.json.")(f)
    f = click.option("-o", "--out", type=click.Path(file_okay=False), default="out", show_default=True, help="Output directory.")(f)
    f = click.option("--set", "sets", multiple=True, metavar="SECTION.KEY=VALUE", help="Override any config key; repeatable.")(f)
    return f


def data_option(f):
    return click.option("--data", type=click.Path(file_okay=False), help="Directory holding cycles.csv and labels.csv.")(f)


def run_options(f):
    f = click.option("--m", "m", type=int, help="Segment length in time steps.")(f)
    f = click.option("--vref", type=float, help="Threshold voltage; skips discord discovery.")(f)
    f = click.option("--pad-policy", type=click.Choice(["error", "pad_last"]), help="Handling of short segments.")(f)
    return f


def engine_options(f):
    f = click.option("--seed", type=int, help="Weight initialization seed.")(f)
    f = click.option("--epochs", type=int, help="Maximum training epochs.")(f)
    return f


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("-v", "--verbose", count=True, help="More logging; repeatable.")
@click.option("-q", "--quiet", is_flag=True, help="Only errors.")
def cli(verbose, quiet):
    """Battery SOH estimation from discord-selected discharge segments."""
    level = logging.ERROR if quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


@cli.command()
@common
@click.option("--seed", type=int, help="Generator seed.")
@click.option("--cycles", type=int, help="Number of cycles to generate.")
@click.option("--noise", type=float, help="Gaussian noise std in volts.")
def synth(config, out, sets, seed, cycles, noise):
    """Write a synthetic battery as cycles.csv and labels.csv."""
    ctx = Context("synth", config, out, _parse_set(sets) + [
        ("synth", "seed", seed), ("synth", "total_cycles", cycles), ("synth", "noise_std", noise)
    ])
    ds = synth_battery(SynthConfig.from_dict(ctx.cfg["synth"]))
    ctx.write_run_json()
    write_battery_csv(ds, ctx.out / "cycles.csv", ctx.out / "labels.csv")
    click.echo(f"wrote {len(ds)} cycles to {ctx.out}")


def _run_overrides(sets, data=None, m=None, vref=None, pad_policy=None, seed=None, epochs=None):
    return _parse_set(sets) + [
        ("io", "data", data),
        ("run", "m", m),
        ("run", "v_ref", vref),
        ("run", "pad_policy", pad_policy),
        ("run", "seed", seed),
        ("engine", "epochs", epochs),
    ]


@cli.command()
@common
@data_option
@click.option("--m", "m", type=int, help="Window length in time steps.")
def profile(config, out, sets, data, m):
    """Matrix profile of the first k cycles and the discord of the golden cycle."""
    ctx = Context("profile", config, out, _run_overrides(sets, data, m))
    rc = build_run_config(ctx.cfg)
    ds = _load_data(ctx.cfg)
    found = locate_discord(ds, rc)
    ctx.write_run_json()
    from .matrix_profile import save_profile_csv

    save_profile_csv(found.profile, ctx.out / "profile.csv")
    d = found.discord
    doc = {"lambda": d.lambda_, "profile_peak": d.profile_peak, "v_ref": d.v_ref, "m": rc.m, "search_len": found.search_len}
    atomic_write_text(ctx.out / "discord.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
    plots.profile_chart(concat_cycles(ds.first(rc.base.k)), found.profile, ctx.out / "profile.svg")
    click.echo(f"discord at step {d.lambda_} of cycle {rc.golden_cycle}: v_ref = {d.v_ref:.4f} V")


@cli.command()
@common
@data_option
@run_options
def select(config, out, sets, data, m, vref, pad_policy):
    """Per-cycle node features for a threshold (discovered unless --vref)."""
    ctx = Context("select", config, out, _run_overrides(sets, data, m, vref, pad_policy))
    rc = build_run_config(ctx.cfg)
    ds = _load_data(ctx.cfg)
    spec = SegmentSpec(rc.v_ref, rc.m) if rc.v_ref is not None else locate_discord(ds, rc).spec
    ctx.write_run_json({"v_ref": spec.v_ref})
    rows = ["cycle,theta,padded," + ",".join(f"x{t}" for t in range(spec.m))]
    skipped = 0
    for c in ds.cycles:
        try:
            f = select_segment(c, spec, rc.pad_policy)
        except SohGraphError as exc:
            log.warning("cycle %d: %s", c.index, exc)
            skipped += 1
            continue
        rows.append(f"{c.index},{f.theta},{int(f.padded)}," + ",".join(fmt_float(v) for v in f.x))
    atomic_write_text(ctx.out / "segments.csv", "\n".join(rows) + "\n")
    click.echo(f"v_ref = {spec.v_ref:.4f} V, {len(rows) - 1} segments, {skipped} skipped")


@cli.command()
@common
@data_option
@run_options
@engine_options
def train(config, out, sets, data, m, vref, pad_policy, seed, epochs):
    """Offline training; writes model.json and the loss history."""
    ctx = Context("train", config, out, _run_overrides(sets, data, m, vref, pad_policy, seed, epochs))
    rc = build_run_config(ctx.cfg)
    ds = _load_data(ctx.cfg)
    ctx.write_run_json()
    model, report = run_offline(ds, rc)
    checksum = save_model(model, ctx.out / "model.json")
    lines = ["epoch,loss"] + [f"{i + 1},{fmt_float(v)}" for i, v in enumerate(report.history)]
    atomic_write_text(ctx.out / "history.csv", "\n".join(lines) + "\n")
    plots.loss_chart(report.history, ctx.out / "loss.svg")
    click.echo(
        f"trained on cycles {rc.base.k + 1}..{model.k_tr} at v_ref {model.spec.v_ref:.4f} V; "
        f"final loss {model.final_loss:.6g} after {model.epochs_run} epochs; model {checksum[:12]}"
    )


@cli.command()
@common
@data_option
@click.option("--model", type=click.Path(dir_okay=False), help="Trained model.json.")
@click.option("--pad-policy", type=click.Choice(["error", "pad_last"]), help="Handling of short online segments.")
def estimate(config, out, sets, data, model, pad_policy):
    """Online estimation over the held-out cycles; writes report.json/csv."""
    ctx = Context("estimate", config, out, _parse_set(sets) + [
        ("io", "data", data), ("io", "model", model), ("run", "online_pad_policy", pad_policy)
    ])
    rc = build_run_config(ctx.cfg)
    if not ctx.cfg["io"]["model"]:
        raise ConfigError("no model given; pass --model or set io.model")
    ds = _load_data(ctx.cfg)
    ctx.write_run_json()
    trained = load_model(ctx.cfg["io"]["model"])
    report = run_online(trained, ds, rc, {"path": str(ctx.cfg["io"]["model"]), "checksum": trained.checksum})
    save_report(report, ctx.out / "report.json")
    atomic_write_text(ctx.out / "report.csv", report_csv_text(report))
    plots.soh_chart(report, ctx.out / "soh.svg")
    click.echo(f"{len(report.rows)} online cycles: RMSE {report.rmse:.5f}, MAE {report.mae:.5f}")


@cli.command()
@common
@data_option
@run_options
@engine_options
@click.option("--count", type=int, default=7, show_default=True, help="Number of candidate thresholds.")
@click.option("--step", type=float, default=0.02, show_default=True, help="Candidate spacing in volts.")
def sweep(config, out, sets, data, m, vref, pad_policy, seed, epochs, count, step):
    """Train and evaluate one pipeline per candidate threshold around the selection."""
    ctx = Context("sweep", config, out, _run_overrides(sets, data, m, None, pad_policy, seed, epochs))
    rc = build_run_config(ctx.cfg)
    ds = _load_data(ctx.cfg)
    selected = vref if vref is not None else locate_discord(ds, rc).spec.v_ref
    grid = candidate_grid(selected, count, step)
    ctx.write_run_json({"sweep": {"selected": selected, "candidates": grid}})
    rows = sweep_segments(ds, rc, grid, selected)
    lines = ["rank,v_ref,rmse,mae,selected,error"]
    for r in rows:
        lines.append(
            f"{'' if r.rank is None else r.rank},{fmt_float(r.v_ref)},{fmt_float(r.rmse)},"
            f"{fmt_float(r.mae)},{int(r.selected)},{json.dumps(r.error) if r.error else ''}"
        )
    atomic_write_text(ctx.out / "sweep.csv", "\n".join(lines) + "\n")
    atomic_write_text(ctx.out / "sweep.json", json.dumps([asdict(r) for r in rows], indent=1) + "\n")
    plots.sweep_chart(rows, ctx.out / "sweep.svg")
    for r in rows:
        mark = "*" if r.selected else " "
        click.echo(f"{r.rank or '-':>2} {r.v_ref:.3f}{mark} RMSE {r.rmse:.5f} MAE {r.mae:.5f}" + (f"  {r.error}" if r.error else ""))


@cli.command(name="eval")
@click.argument("report_path", type=click.Path(dir_okay=False))
@click.option("-o", "--out", type=click.Path(file_okay=False), help="Write eval.json here.")
def eval_(report_path, out):
    """Recompute MAE and RMSE from a report's per-cycle rows."""
    report = load_report(report_path)
    mae, rmse = report_metrics(report.rows)
    doc = {
        "cycles": len(report.rows),
        "mae": mae,
        "rmse": rmse,
        "stored_mae": report.mae,
        "stored_rmse": report.rmse,
        "consistent": abs(mae - report.mae) <= 1e-12 and abs(rmse - report.rmse) <= 1e-12,
    }
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        atomic_write_text(Path(out) / "eval.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
    click.echo(json.dumps(doc, sort_keys=True))


def _category(exc: BaseException) -> str:
    if isinstance(exc, SohGraphError):
        return exc.category
    if isinstance(exc, OSError):
        return "io"
    if isinstance(exc, (json.JSONDecodeError, configparser.Error)):
        return "validation"
    return "internal"


def main(args=None) -> int:
    """Run the CLI and return the process exit status."""
    try:
        cli.main(args=args, prog_name="sohgraph", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("error category=usage type=Abort message=aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        click.echo(f"error category=usage type={type(exc).__name__} message={json.dumps(exc.format_message())}", err=True)
        return EXIT_CODES["usage"]
    except Exception as exc:  # mapped to a category and exit code
        cat = _category(exc)
        click.echo(f"error category={cat} type={type(exc).__name__} message={json.dumps(str(exc))}", err=True)
        if cat == "internal":
            log.debug("traceback", exc_info=True)
        return EXIT_CODES.get(cat, 1)
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
