"""``contact-sense`` command line: synth, preprocess, tune, train, evaluate, stream, sweep, report.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric divergence.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click

from . import data_io
from .config import CONFIG_KEYS, ConfigError, RunConfig, keys_for
from .evaluation import SweepEntry, score, sweep_report
from .inference import InsufficientPredictions, PartialDecisionError, latency, latency_bounds, offline_classify, stream_classify
from .models import ModelState
from .numerics import NumericsError
from .preprocessing import PreprocessingParams, WindowOutOfBounds, build_dataset, sweep_grid
from .synthetic import generate
from .training import TrainingDivergence, cross_validate, make_split, train_final
from .types import RecordingError

log = logging.getLogger("contact_sense")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
DATA_ERRORS = (data_io.DataError, RecordingError, WindowOutOfBounds, PartialDecisionError, InsufficientPredictions,
               FileNotFoundError)
DIVERGENCE_ERRORS = (TrainingDivergence, NumericsError)


class StageError(click.ClickException):
    def __init__(self, stage: str, exc: Exception, code: int):
        super().__init__(f"[{stage}] {exc}")
        self.exit_code = code


def _setup_logging() -> None:
    level = os.environ.get("CONTACT_SENSE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _epilog(command: str) -> str:
    lines = ["\b", "Config keys:"]
    lines += [f"  {k}: {CONFIG_KEYS[k]}" for k in keys_for(command)]
    return "\n".join(lines)


def _common(f):
    f = click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Output directory (paths.out_dir).")(f)
    f = click.option("--seed", type=int, help="Master seed.")(f)
    f = click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML config file.")(f)
    return f


def _pre_opts(f):
    f = click.option("--delta-step", type=int, help="preprocessing.delta_step_samples; 0 selects fixed windows.")(f)
    f = click.option("--delta-offset-ms", type=int, help="preprocessing.delta_offset_ms.")(f)
    return f


def _model_opt(f):
    return click.option("--model", "family", type=click.Choice(["gru", "lstm", "transformer"]),
                        help="model.family.")(f)


def _vote_opts(f):
    f = click.option("--np", "n_p", type=int, help="voting.n_p.")(f)
    f = click.option("--voting", type=click.Choice(["hard", "soft"]), help="voting.method.")(f)
    return f


def _load(command: str, config_path, seed, out_dir, delta_offset_ms=None, delta_step=None, family=None,
          voting=None, n_p=None) -> RunConfig:
    over = {"seed": seed, "paths.out_dir": out_dir, "preprocessing.delta_offset_ms": delta_offset_ms,
            "model.family": family, "voting.method": voting, "voting.n_p": n_p}
    if delta_step is not None:
        if delta_step == 0:
            over["preprocessing.mode"] = "fixed"
        else:
            over["preprocessing.mode"] = "sliding"
            over["preprocessing.delta_step_samples"] = delta_step
    try:
        return RunConfig.load(config_path, over)
    except ConfigError as exc:
        raise click.UsageError(f"[{command}] {exc}") from None


class _Stage:
    """Maps library exceptions to exit codes and names the failing stage."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, typ, exc, tb):
        if exc is None or isinstance(exc, click.ClickException):
            return False
        if isinstance(exc, DIVERGENCE_ERRORS):
            raise StageError(self.name, exc, EXIT_DIVERGED) from exc
        if isinstance(exc, DATA_ERRORS):
            raise StageError(self.name, exc, EXIT_DATA) from exc
        if isinstance(exc, (ConfigError, ValueError)):
            raise StageError(self.name, exc, EXIT_USAGE) from exc
        return False


def _write_config(cfg: RunConfig, command: str, directory: Path) -> None:
    data_io.atomic_write_text(directory / f"config.{command}.yaml", cfg.dump(command))


# -- shared pipeline steps ----------------------------------------------------------------------------------------
def _split_dir(cfg: RunConfig, split: str) -> Path:
    return cfg.data_dir / split


def _recordings(cfg: RunConfig, split: str):
    return data_io.load_recordings(_split_dir(cfg, split), cfg.column_map)


def _dataset(cfg: RunConfig, params: PreprocessingParams):
    """Training windows for ``params``, through the on-disk cache."""
    sources = data_io.recording_paths(_split_dir(cfg, "train"))
    if not sources:
        raise data_io.DataError(f"{_split_dir(cfg, 'train')}: no recording files")
    path = cfg.out_dir / "datasets" / f"{params.label()}.cache"
    if path.exists():
        try:
            return data_io.load_cached(path, params, sources), path
        except data_io.StaleCacheError:
            log.info("cache %s is stale, rebuilding", path)
    ds = build_dataset(_recordings(cfg, "train"), params)
    data_io.cache_dataset(ds, path, params, sources)
    return ds, path


def _run_dir(cfg: RunConfig, family: str | None = None, params: PreprocessingParams | None = None) -> Path:
    params = params or cfg.preprocessing()
    return cfg.out_dir / "models" / f"{family or cfg.family}_{params.label()}"


def _curve_csv(curve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss", "val_accuracy"])
    for r in curve:
        w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_accuracy)])
    return buf.getvalue()


def _train(cfg: RunConfig, family: str, params: PreprocessingParams, run_dir: Path, strict_spec: bool = True):
    ds, _ = _dataset(cfg, params)
    tcfg = cfg.training(family)
    split = make_split(ds, tcfg.seed, tcfg.k_folds, tcfg.val_fraction)
    state, curve = train_final(ds, split, cfg.spec(family, strict=strict_spec), tcfg)
    state.meta.update(family=family, preprocessing=params.label(), dataset_size=len(ds))
    data_io.save_model(state, run_dir / "model.bin")
    data_io.atomic_write_text(run_dir / "train_log.txt", "".join(r.log_line() + "\n" for r in curve))
    data_io.atomic_write_text(run_dir / "curve.csv", _curve_csv(curve))
    return state, ds


def _dump_json(path: Path, obj) -> None:
    data_io.atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- commands ---------------------------------------------------------------------------------------------------
@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def cli():
    """Human/object contact classification from robot joint signals."""
    _setup_logging()


@cli.command(epilog=_epilog("synth"))
@_common
def synth(config_path, seed, out_dir):
    """Generate synthetic train/ and val/ recordings."""
    cfg = _load("synth", config_path, seed, out_dir)
    with _Stage("synth"):
        for split in ("train", "val"):
            recs = generate(cfg.synthetic(split))
            data_io.save_recordings(recs, _split_dir(cfg, split))
            click.echo(f"{split}: {len(recs)} recordings -> {_split_dir(cfg, split)}")
        _write_config(cfg, "synth", cfg.data_dir)


@cli.command(epilog=_epilog("preprocess"))
@_common
@_pre_opts
def preprocess(config_path, seed, out_dir, delta_offset_ms, delta_step):
    """Window the training recordings into a cached dataset."""
    cfg = _load("preprocess", config_path, seed, out_dir, delta_offset_ms, delta_step)
    with _Stage("preprocess"):
        ds, path = _dataset(cfg, cfg.preprocessing())
        _write_config(cfg, "preprocess", path.parent)
        click.echo(f"{len(ds)} windows ({ds.provenance.get('discarded', 0)} discarded) -> {path}")


@cli.command(epilog=_epilog("tune"))
@_common
@_pre_opts
@_model_opt
def tune(config_path, seed, out_dir, delta_offset_ms, delta_step, family):
    """Grid-search hyperparameters by k-fold cross-validation."""
    cfg = _load("tune", config_path, seed, out_dir, delta_offset_ms, delta_step, family)
    with _Stage("tune"):
        ds, _ = _dataset(cfg, cfg.preprocessing())
        result = cross_validate(ds, cfg.spec(), cfg.training())
        run_dir = _run_dir(cfg)
        _dump_json(run_dir / "tune.json", {
            "best": result.best,
            "scores": [dataclasses.asdict(s) for s in result.scores],
        })
        _write_config(cfg, "tune", run_dir)
        click.echo(f"best: {json.dumps(result.best, sort_keys=True)}")


@cli.command(epilog=_epilog("train"))
@_common
@_pre_opts
@_model_opt
def train(config_path, seed, out_dir, delta_offset_ms, delta_step, family):
    """Train one model with early stopping and save it."""
    cfg = _load("train", config_path, seed, out_dir, delta_offset_ms, delta_step, family)
    with _Stage("train"):
        run_dir = _run_dir(cfg)
        state, _ = _train(cfg, cfg.family, cfg.preprocessing(), run_dir)
        _write_config(cfg, "train", run_dir)
        click.echo(f"model -> {run_dir / 'model.bin'} (best epoch {state.meta['best_epoch']})")


def _load_model(cfg: RunConfig) -> tuple[ModelState, Path]:
    run_dir = _run_dir(cfg)
    path = run_dir / "model.bin"
    if not path.exists():
        raise data_io.DataError(f"{path}: no trained model; run 'train' first")
    return data_io.load_model(path), run_dir


@cli.command(epilog=_epilog("evaluate"))
@_common
@_pre_opts
@_model_opt
@_vote_opts
def evaluate(config_path, seed, out_dir, delta_offset_ms, delta_step, family, voting, n_p):
    """Contact-level metrics of a trained model on the validation recordings."""
    cfg = _load("evaluate", config_path, seed, out_dir, delta_offset_ms, delta_step, family, voting, n_p)
    with _Stage("evaluate"):
        state, run_dir = _load_model(cfg)
        vcfg = cfg.voting()
        results = offline_classify(_recordings(cfg, "val"), state, cfg.preprocessing(), vcfg)
        report = score([(r.label, lab) for r, _, lab in results],
                       {"model": cfg.family, "preprocessing": cfg.preprocessing().label(), "voting": vcfg.label(),
                        "contacts": len(results)})
        out = run_dir / f"eval_{vcfg.label()}"
        data_io.atomic_write_text(out / "report.csv", report.to_csv())
        data_io.atomic_write_text(out / "report.txt", report.to_text())
        data_io.atomic_write_text(out / "confusion.csv", report.confusion.to_csv())
        _dump_json(out / "report.json", report.as_dict())
        _write_config(cfg, "evaluate", out)
        click.echo(report.to_text(), nl=False)


@cli.command(epilog=_epilog("stream"))
@_common
@_pre_opts
@_model_opt
@_vote_opts
def stream(config_path, seed, out_dir, delta_offset_ms, delta_step, family, voting, n_p):
    """Replay validation recordings tick by tick and log each decision."""
    cfg = _load("stream", config_path, seed, out_dir, delta_offset_ms, delta_step, family, voting, n_p)
    with _Stage("stream"):
        state, run_dir = _load_model(cfg)
        vcfg = cfg.voting()
        params = cfg.preprocessing()
        lines, pairs = [], []
        for r in _recordings(cfg, "val"):
            for d in stream_classify(r, state, params, vcfg):
                lines.append(f"recording={r.recording_id} {d.record()}")
                pairs.append((r.label, d.label))
        lo, hi = latency_bounds(vcfg)
        summary = {
            "decisions": len(lines),
            "latency_ms": latency(vcfg.n_p, vcfg.infer_every, 5, vcfg.model_runtime_ms),
            "latency_min_ms": lo,
            "latency_max_ms": hi,
            "accuracy": score(pairs).accuracy if pairs else None,
        }
        out = run_dir / f"stream_{vcfg.label()}"
        data_io.atomic_write_text(out / "decisions.txt", "".join(line + "\n" for line in lines))
        _dump_json(out / "latency.json", summary)
        _write_config(cfg, "stream", out)
        click.echo(f"{len(lines)} decisions; latency {summary['latency_ms']:.2f} ms "
                   f"(min {lo:.2f} ms, max {hi:.2f} ms)")


def _sweep_job(args) -> list[dict]:
    cfg_raw, family, params_dict = args
    cfg = RunConfig(cfg_raw)
    params = PreprocessingParams(**{**params_dict, "delta_step_samples": params_dict["delta_step_samples"] or 1})
    run_dir = cfg.out_dir / "sweep" / family / params.label()
    state, ds = _train(cfg, family, params, run_dir, strict_spec=False)
    val = _recordings(cfg, "val")
    rows = []
    for method in cfg.raw["sweep"]["methods"]:
        for n_p in cfg.raw["sweep"]["n_p_values"]:
            vcfg = cfg.voting(method=method, n_p=int(n_p))
            res = offline_classify(val, state, params, vcfg)
            acc = score([(r.label, lab) for r, _, lab in res]).accuracy
            rows.append(dict(family=family, mode=params.mode.value, delta_offset_ms=params.delta_offset_ms,
                             delta_step_samples=params.as_dict()["delta_step_samples"], voting=method,
                             n_p=int(n_p), accuracy=acc, dataset_size=len(ds)))
    _dump_json(run_dir / "entries.json", rows)
    return rows


@cli.command(epilog=_epilog("sweep"))
@_common
@click.option("--dry-run", is_flag=True, help="Only list the dataset configurations.")
def sweep(config_path, seed, out_dir, dry_run):
    """Train and evaluate every family on all 16 preprocessing configurations."""
    cfg = _load("sweep", config_path, seed, out_dir)
    grid = sweep_grid()
    if dry_run:
        for p in grid:
            click.echo(p.label())
        click.echo(f"{len(grid)} dataset configurations")
        return
    with _Stage("sweep"):
        for p in grid:
            _dataset(cfg, p)  # build caches up front so workers only read them
        jobs = [(cfg.raw, fam, p.as_dict()) for fam in cfg.raw["sweep"]["families"] for p in grid]
        workers = int(cfg.raw["sweep"]["workers"])
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                results = list(pool.map(_sweep_job, jobs))
        else:
            results = [_sweep_job(j) for j in jobs]
        report = sweep_report(SweepEntry(**row) for rows in results for row in rows)
        out = cfg.out_dir / "sweep"
        data_io.atomic_write_text(out / "sweep.csv", report.to_csv())
        data_io.atomic_write_text(out / "sweep.txt", report.to_text())
        _write_config(cfg, "sweep", out)
        click.echo(report.to_text(), nl=False)


@cli.command(epilog=_epilog("report"))
@_common
def report(config_path, seed, out_dir):
    """Aggregate evaluation and sweep results under the output directory into CSVs."""
    cfg = _load("report", config_path, seed, out_dir)
    with _Stage("report"):
        root = cfg.out_dir
        evals = sorted(root.glob("models/*/eval_*/report.json"))
        entries = sorted(root.glob("sweep/*/*/entries.json"))
        if not evals and not entries:
            raise data_io.DataError(f"{root}: no evaluation or sweep results to report")
        out = root / "reports"
        if evals:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["run", "voting", "accuracy", "contacts"])
            for path in evals:
                rep = json.loads(path.read_text())
                w.writerow([path.parent.parent.name, path.parent.name[len("eval_"):],
                            f"{rep['accuracy']:.6f}", rep["provenance"].get("contacts", "")])
            data_io.atomic_write_text(out / "evaluations.csv", buf.getvalue())
        if entries:
            rows = [SweepEntry(**row) for path in entries for row in json.loads(path.read_text())]
            data_io.atomic_write_text(out / "sweep.csv", sweep_report(rows).to_csv())
        _write_config(cfg, "report", out)
        click.echo(f"reports -> {out}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="contact-sense", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Exit as exc:
        return exc.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
