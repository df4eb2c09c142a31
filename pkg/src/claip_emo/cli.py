"""claip-emo command line.

    claip-emo --out runs/data generate
    claip-emo --config configs/desk_scale.cfg --out runs/av train --data runs/data
    claip-emo --out runs/cv eval --data runs/data
    claip-emo --out runs/snap eval --data runs/data --model runs/av/model.ckpt --fold 0
    claip-emo --config configs/desk_scale.cfg --out runs/ablate ablate --data runs/data
    claip-emo param-report
    claip-emo --out runs/av export-features --model runs/av/model.ckpt --data runs/data

Failures print ``error=<code> type=<Class> message=<text>`` on one line and
exit with 1, or 2 for configuration errors.
"""
import json
import os
from dataclasses import dataclass, field
from typing import Optional, Tuple

import click
import numpy as np

from claip_emo import version
from claip_emo.adaptation import count_params, param_table
from claip_emo.adaptation.lora import has_adapters, save_adapters
from claip_emo.audio.frontend import AudioFrontend
from claip_emo.config import RunConfig, load_run_config, parse_override, write_run_record
from claip_emo.enums import ArtifactName, Modality
from claip_emo.errors import ClaipError, ConfigError
from claip_emo.harness.ablation import run_ablation
from claip_emo.harness.dataset_io import load_dataset, save_dataset
from claip_emo.harness.evaluate import (
    ConstantPredictor, CrossValidationResult, RawFeatureReadout, cross_validate, evaluate, write_report)
from claip_emo.harness.export import export_features
from claip_emo.harness.folds import (
    check_partition, load_folds, load_train_ids, make_folds, save_folds, train_eval_split)
from claip_emo.harness.synthetic import DatasetSpec, generate
from claip_emo.logger import get_logger
from claip_emo.model.claip_model import GRADCHECK_ENTRIES, build_model, load_trained_model, run_gradient_check
from claip_emo.numerics.tensor import set_default_dtype
from claip_emo.parallel import get_threads
from claip_emo.training.trainer import train

logger = get_logger(__name__)

DEFAULT_OUT = os.path.join("runs", "latest")


def format_error(error: ClaipError) -> str:
    message = " ".join(str(error.message).split())
    return f"error={error.code} type={type(error).__name__} message={message}"


class ClaipGroup(click.Group):
    """Turns ClaipError into the one-line error report and exit status."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except ClaipError as e:
            click.echo(format_error(e), err=True)
            ctx.exit(2 if isinstance(e, ConfigError) else 1)


@dataclass
class RunContext:
    config_path: Optional[str] = None
    seed: Optional[int] = None
    out_dir: str = DEFAULT_OUT
    threads: Optional[int] = None
    f64_gradcheck: bool = False
    gradcheck_entries: Optional[int] = GRADCHECK_ENTRIES
    overrides: Tuple[str, ...] = field(default_factory=tuple)

    def resolve(self) -> Tuple[RunConfig, int]:
        """Resolved config and thread count; runs the f64 gradient check if asked."""
        overrides = dict(parse_override(o) for o in self.overrides)
        cfg = load_run_config(path=self.config_path, overrides=overrides, seed=self.seed)
        threads = get_threads(self.threads)
        if self.f64_gradcheck:
            report = run_gradient_check(seed=cfg.seed, max_entries=self.gradcheck_entries)
            name, error = report.worst()
            logger.info(f"gradient check passed on {len(report.errors)} tensors, worst {name} at {error:.3e}")
            set_default_dtype(np.float64)
        return cfg, threads

    def record(self, cfg: RunConfig, threads: int) -> None:
        write_run_record(cfg, out_dir=self.out_dir, threads=threads)


def _load_folds(data_dir: str, folds_path: Optional[str], dataset, cfg: RunConfig):
    path = folds_path or os.path.join(data_dir, ArtifactName.folds)
    if os.path.isfile(path):
        folds = load_folds(path)
    else:
        logger.info(f"no fold file at {path}; making {cfg.data.n_folds} stratified folds")
        folds = make_folds(dataset.ids, dataset.labels, n_folds=cfg.data.n_folds, seed=cfg.seed)
    check_partition(folds, ids=dataset.ids)
    return folds


@click.group(cls=ClaipGroup)
@click.version_option(version=version.get_version(), prog_name="claip-emo")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Config file; see docs/config_format.md.")
@click.option("--seed", type=int, default=None, help="Overrides `seed`.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=DEFAULT_OUT, show_default=True,
              help="Directory for every artifact of this run.")
@click.option("--threads", type=int, default=None, help="Worker threads; falls back to CLAIP_THREADS.")
@click.option("--f64-gradcheck", is_flag=True, default=False,
              help="Check gradients of a toy model first, then run in float64.")
@click.option("--gradcheck-entries", type=click.IntRange(min=0), default=GRADCHECK_ENTRIES, show_default=True,
              help="Entries compared per tensor by --f64-gradcheck; 0 compares every entry.")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Overrides a config key.")
@click.pass_context
def cli(ctx, config_path, seed, out_dir, threads, f64_gradcheck, gradcheck_entries, overrides):
    """Audiovisual emotion recognition with adapted frozen encoders."""
    ctx.obj = RunContext(config_path=config_path, seed=seed, out_dir=out_dir, threads=threads,
                         f64_gradcheck=f64_gradcheck, gradcheck_entries=gradcheck_entries or None,
                         overrides=tuple(overrides))


@cli.command(name="generate")
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="dataset.json (or its `spec` object) to regenerate instead of the config's [data].")
@click.pass_obj
def cmd_generate(run: RunContext, spec_path):
    """Render a synthetic dataset plus folds.json into --out."""
    cfg, threads = run.resolve()
    if spec_path is not None:
        with open(spec_path, "r", encoding="utf8") as f:
            raw = json.load(f)
        spec = DatasetSpec(**raw.get("spec", raw))
    else:
        spec = DatasetSpec.from_config(cfg)
    dataset = generate(spec)
    save_dataset(dataset, out_dir=run.out_dir)
    folds = make_folds(dataset.ids, dataset.labels, n_folds=cfg.data.n_folds, seed=spec.seed)
    save_folds(folds, os.path.join(run.out_dir, ArtifactName.folds))
    run.record(cfg, threads=threads)
    click.echo(f"clips={len(dataset)} classes={spec.num_classes} checksum={dataset.checksum()}")


@cli.command(name="train")
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--fold", type=int, default=None, help="Hold this fold out and validate on it.")
@click.option("--folds", "folds_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_obj
def cmd_train(run: RunContext, data_dir, fold, folds_path):
    """Train one model; writes model.ckpt, adapters.ckpt and the history."""
    cfg, threads = run.resolve()
    run.record(cfg, threads=threads)
    dataset = load_dataset(data_dir, frames=cfg.clip.frames, sample_rate=cfg.audio.sample_rate,
                           duration=cfg.clip.duration)
    train_set, val_set = list(dataset), None
    if fold is not None:
        train_ids, eval_ids = train_eval_split(_load_folds(data_dir, folds_path, dataset, cfg), fold=fold)
        train_set, val_set = dataset.by_ids(train_ids), dataset.by_ids(eval_ids)
    model = build_model(cfg)
    result = train(model, train_set, cfg=cfg, out_dir=run.out_dir, val_set=val_set)
    if has_adapters(model):
        save_adapters(model, os.path.join(run.out_dir, ArtifactName.adapters))
    click.echo(f"steps={result.steps} final_loss={result.final_loss:.6f}")


@cli.command(name="eval")
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--folds", "folds_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Score this snapshot on held-out folds; its train_ids.json must sit next to it.")
@click.option("--constant", default=None, metavar="LABEL|majority",
              help="Score a constant-prediction baseline.")
@click.option("--readout", type=click.Choice([m.value for m in Modality]), default=None,
              help="Score a ridge readout of raw features, fitted on each fold's training clips.")
@click.option("--fold", type=int, default=None, help="Score only this fold.")
@click.option("--max-folds", type=int, default=None)
@click.pass_obj
def cmd_eval(run: RunContext, data_dir, folds_path, model_path, constant, readout, fold, max_folds):
    """Cross-validate and write report.csv (per fold, mean and std rows)."""
    if sum(x is not None for x in (model_path, constant, readout)) > 1:
        raise click.UsageError("--model, --constant and --readout are mutually exclusive")
    cfg, threads = run.resolve()
    run.record(cfg, threads=threads)
    dataset = load_dataset(data_dir, frames=cfg.clip.frames, sample_rate=cfg.audio.sample_rate,
                           duration=cfg.clip.duration)
    folds = _load_folds(data_dir, folds_path, dataset, cfg)
    if fold is not None and not 0 <= fold < len(folds):
        raise click.BadParameter(f"expected a fold in [0, {len(folds)}), got {fold}", param_hint="--fold")
    if model_path is None and constant is None and readout is None:
        if fold is not None:
            raise click.UsageError("--fold needs --model, --constant or --readout; use `train --fold` instead")
        result = cross_validate(cfg, dataset, folds, out_dir=run.out_dir, threads=threads, max_folds=max_folds)
    else:
        num_classes = cfg.data.num_classes
        snapshot, snapshot_ids = None, None
        if model_path is not None:
            snapshot = load_trained_model(model_path, cfg)
            snapshot_ids = load_train_ids(os.path.join(os.path.dirname(os.path.abspath(model_path)),
                                                       ArtifactName.train_ids))
        if constant is not None and constant != "majority":
            try:
                label = int(constant)
            except ValueError:
                raise click.BadParameter(f"expected a class index or `majority`, got `{constant}`",
                                         param_hint="--constant")
        if fold is not None:
            selected = [fold]
        else:
            selected = range(len(folds) if max_folds is None else min(max_folds, len(folds)))
        reports = []
        for k in selected:
            train_ids, eval_ids = train_eval_split(folds, fold=k)
            train_set = dataset.by_ids(train_ids)
            if snapshot is not None:
                model, train_ids = snapshot, snapshot_ids
            elif readout is not None:
                model = RawFeatureReadout(num_classes=num_classes, modality=readout,
                                          frontend=AudioFrontend.from_settings(cfg.audio)).fit(train_set)
            elif constant == "majority":
                model = ConstantPredictor.majority([s.label for s in train_set], num_classes=num_classes)
            else:
                model = ConstantPredictor(label=label, num_classes=num_classes)
            reports.append(evaluate(model, dataset.by_ids(eval_ids), fold=k, num_classes=num_classes,
                                    train_ids=train_ids, batch_size=cfg.train.batch_size))
        result = CrossValidationResult(reports=reports)
        os.makedirs(run.out_dir, exist_ok=True)
        write_report(result, run.out_dir)
    summary = result.summary()
    click.echo(" ".join(f"{k}={v:.4f}" for k, v in summary.items()))


@cli.command(name="ablate")
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--folds", "folds_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_obj
def cmd_ablate(run: RunContext, data_dir, folds_path):
    """Run the rank, aggregation, fusion and modality grid."""
    cfg, threads = run.resolve()
    run.record(cfg, threads=threads)
    dataset = load_dataset(data_dir, frames=cfg.clip.frames, sample_rate=cfg.audio.sample_rate,
                           duration=cfg.clip.duration)
    folds = _load_folds(data_dir, folds_path, dataset, cfg)
    table = run_ablation(cfg, dataset, folds, out_dir=run.out_dir, threads=threads)
    click.echo(table.to_string(index=False))


@cli.command(name="param-report")
@click.pass_obj
def cmd_param_report(run: RunContext):
    """Print total, trainable and per-group parameter counts."""
    cfg, _ = run.resolve()
    report = count_params(build_model(cfg))
    click.echo(f"total={report.total} trainable={report.trainable} ratio={report.ratio:.6f} "
               f"adapter_share={report.adapter_share:.6f}")
    click.echo(param_table(report).to_string(index=False))


@cli.command(name="export-features")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--name", default=ArtifactName.features, show_default=True, help="File name under --out.")
@click.pass_obj
def cmd_export_features(run: RunContext, model_path, data_dir, name):
    """Write id, label and fused features z0.. for every clip."""
    cfg, threads = run.resolve()
    run.record(cfg, threads=threads)
    dataset = load_dataset(data_dir, frames=cfg.clip.frames, sample_rate=cfg.audio.sample_rate,
                           duration=cfg.clip.duration)
    model = load_trained_model(model_path, cfg)
    path = os.path.join(run.out_dir, name)
    frame = export_features(model, list(dataset), path=path, batch_size=cfg.train.batch_size)
    click.echo(f"rows={len(frame)} path={path}")


def main():
    cli(prog_name="claip-emo")


if __name__ == "__main__":
    main()
