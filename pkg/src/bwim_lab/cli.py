"""Command-line entry point: ``bwim-lab <subcommand> [--config FILE] [--out DIR] ...``.

Each stage reads the previous stage's files from ``--out`` unless given
explicit paths, so the full chain is::

    bwim-lab simulate --out run && bwim-lab synthesize --out run && \\
    bwim-lab build-dataset --out run && bwim-lab train --out run && \\
    bwim-lab evaluate --out run
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import files
from .config import RunConfig, cli_overrides
from .errors import ConfigError, NumericalError
from .pipeline import Bench, make_dataset, make_loads, make_response, make_trajectory
from .studies import multi_vehicle_study, noise_sweep, section_length_study, section_study

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

STUDIES = ("sections", "noise", "neighbor-fp", "weight-fp", "section-length")

log = logging.getLogger("bwim_lab")


def _config(ctx: click.Context) -> RunConfig:
    o = ctx.obj
    return RunConfig.load(o["config"], cli_overrides(o["seed"], o["sigma"], o["section"], o["preset"]))


def _data_digest(cfg: RunConfig) -> str:
    return cfg.digest_of("traffic", "beam", "sections", "dataset")


def _stamp(cfg: RunConfig) -> dict:
    return {"config_digest": cfg.digest, "data_digest": _data_digest(cfg), "config": cfg.data}


def common_options(f):
    f = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="YAML run configuration.")(f)
    f = click.option("--out", "out_dir", type=click.Path(file_okay=False), default="run",
                     show_default=True, help="Output directory.")(f)
    f = click.option("--seed", type=int, default=None, help="Base seed for all random streams.")(f)
    f = click.option("--sigma", type=float, default=None, help="Noise std after normalisation.")(f)
    f = click.option("--section", type=int, default=None, help="Target girder section (1-based).")(f)
    f = click.option("--preset", type=click.Choice(["sbm", "cbm"]), default=None)(f)
    f = click.option("--jobs", type=int, default=1, show_default=True, help="Worker processes.")(f)
    return f


def _setup(ctx, config_path, out_dir, seed, sigma, section, preset, jobs) -> tuple[RunConfig, Path]:
    ctx.obj = {"config": config_path, "seed": seed, "sigma": sigma, "section": section,
               "preset": preset, "jobs": jobs}
    cfg = _config(ctx)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose: bool) -> None:
    """Synthetic bridge weigh-in-motion data and overload classification."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@common_options
@click.pass_context
def simulate(ctx, **kw):
    """Run the traffic automaton and write trajectory.csv."""
    cfg, out = _setup(ctx, **kw)
    traj = make_trajectory(cfg)
    meta = {**_stamp(cfg), "params": cfg["traffic"], "seed": cfg["traffic"]["seed"]}
    path = files.write_trajectory(out / "trajectory.csv", traj, meta, cfg.digest)
    click.echo(str(path))


@cli.command()
@common_options
@click.option("--trajectory", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def synthesize(ctx, trajectory, **kw):
    """Compute sensor deflections for a trajectory and write response.csv."""
    cfg, out = _setup(ctx, **kw)
    traj, _ = files.read_trajectory(trajectory or out / "trajectory.csv")
    resp = make_response(cfg, traj)
    path = files.write_response(out / "response.csv", resp, _stamp(cfg), cfg.digest)
    click.echo(str(path))


@cli.command("build-dataset")
@common_options
@click.option("--trajectory", type=click.Path(dir_okay=False), default=None)
@click.option("--response", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def build_dataset_cmd(ctx, trajectory, response, **kw):
    """Label, normalise, add noise and fix the split; write dataset.csv."""
    cfg, out = _setup(ctx, **kw)
    traj, _ = files.read_trajectory(trajectory or out / "trajectory.csv")
    resp, _ = files.read_response(response or out / "response.csv")
    from .dataset import instant_labels

    labels = instant_labels(make_loads(cfg, traj), cfg.section_map())
    ds = make_dataset(cfg, resp.values, labels)
    path = files.write_dataset(out / "dataset.csv", ds, _stamp(cfg), cfg.digest)
    click.echo(str(path))


@cli.command()
@common_options
@click.option("--dataset", type=click.Path(dir_okay=False), default=None)
@click.option("--model", "kind", type=click.Choice(["dovi", "lr", "mlp"]), default="dovi",
              show_default=True)
@click.pass_context
def train(ctx, dataset, kind, **kw):
    """Train a classifier; write checkpoint.json and train_report.json."""
    from .models import make_model, train as train_model

    cfg, out = _setup(ctx, **kw)
    ds, meta = files.read_dataset(dataset or out / "dataset.csv")
    tr, va, _ = ds.splits()
    model = make_model(kind, ds.values.shape[1], cfg.model_config())
    report = train_model(model, tr, va)
    extra = {"config_digest": cfg.digest, "data_digest": meta.get("data_digest"),
             "threshold": report.threshold}
    files.save_checkpoint(out / "checkpoint.json", model, extra)
    files.write_json(out / "train_report.json", report.to_dict())
    click.echo(str(out / "checkpoint.json"))


@cli.command()
@common_options
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None)
@click.option("--dataset", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def evaluate(ctx, checkpoint, dataset, **kw):
    """Score the test split; write metrics.json."""
    from .pipeline import evaluate_model

    cfg, out = _setup(ctx, **kw)
    model, doc = files.load_checkpoint(checkpoint or out / "checkpoint.json")
    ds, meta = files.read_dataset(dataset or out / "dataset.csv")
    if doc.get("data_digest") != meta.get("data_digest"):
        raise ConfigError(
            f"checkpoint was trained on data {doc.get('data_digest')}, dataset is {meta.get('data_digest')}"
        )
    metrics = evaluate_model(model, ds, doc["threshold"])
    result = {**metrics.to_dict(), "threshold": doc["threshold"],
              "config_digest": cfg.digest, "data_digest": meta.get("data_digest")}
    files.write_json(out / "metrics.json", result)
    click.echo(f"precision={metrics.precision} recall={metrics.recall} f1={metrics.f1}")


@cli.command()
@click.argument("study_id", type=click.Choice(STUDIES))
@common_options
@click.pass_context
def study(ctx, study_id, **kw):
    """Run one experiment protocol and write study_<id>.csv / .json."""
    cfg, out = _setup(ctx, **kw)
    jobs = ctx.obj["jobs"]
    stem = out / f"study_{study_id.replace('-', '_')}"
    if study_id in ("sections", "noise"):
        res = section_study(cfg, jobs=jobs) if study_id == "sections" else noise_sweep(cfg, jobs=jobs)
    elif study_id == "section-length":
        res = section_length_study(cfg)
    else:
        from .pipeline import fit_and_test

        bench = Bench.build(cfg)
        ds = bench.dataset()
        run = fit_and_test(cfg, ds, "dovi")
        s = cfg["study"]
        mv = multi_vehicle_study(run.model, run.report.threshold, ds, bench.loads,
                                 s["neighbor_section"] and list(_as_list(s["neighbor_section"])),
                                 s["weight_bin_start"], s["weight_bin_width"])
        summary = {**mv.summary(), "config_digest": cfg.digest,
                   "section": cfg["sections"]["target_section"]}
        if study_id == "neighbor-fp":
            r = mv.neighbor
            rows = [["neighbor", r.cases, r.false_positives, r.rate]]
        else:
            rows = [[lo, hi, r.cases, r.false_positives, r.rate] for lo, hi, r in mv.weight.bins]
            rows.append(["all", "", mv.weight.overall.cases, mv.weight.overall.false_positives,
                         mv.weight.overall.rate])
        header = (["case", "cases", "false_positives", "rate"] if study_id == "neighbor-fp"
                  else ["lo_kg", "hi_kg", "cases", "false_positives", "rate"])
        files.write_table(stem.with_suffix(".csv"), header, rows, summary, cfg.digest)
        click.echo(str(stem.with_suffix(".csv")))
        return
    files.atomic_write_text(stem.with_suffix(".csv"), f"# config_digest: {cfg.digest}\n" + res.csv_text())
    files.write_json(stem.with_suffix(".json"), {**res.summary(), "config_digest": cfg.digest})
    click.echo(str(stem.with_suffix(".csv")))


def _as_list(x):
    return x if isinstance(x, (list, tuple)) else [x]


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERICAL
    except (OSError, KeyError, ValueError) as exc:
        click.echo(f"I/O failure: {exc}", err=True)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
