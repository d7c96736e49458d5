"""
Command-line front end.

    veli preprocess --input site.env --out runs/site
    veli synth --base sinusoid --noise realistic --seed 1 --out runs/synth
    veli train --input runs/synth/location.csv --out runs/model
    veli finetune --input target.csv --checkpoint runs/model/model.json --out runs/tuned
    veli infer --input location.csv --checkpoint model.json --out runs/corrected
    veli eval --input location.csv --checkpoint model.json --out runs/eval
    veli ablate --ablation na_injection --ablation-values 1,3,5 --input location.csv --out runs/ablate

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical abort.
"""

import argparse
import logging
import os
import sys
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from app.config import Config, RunConfig
from app.evaluate import ablations
from app.evaluate.experiment import (
    correct_location,
    fine_tune_on_location,
    raw_mean,
    run_finetune_comparison,
    score,
    train_on_location,
)
from app.evaluate.metrics import histogram_counts, twelve_hour_average
from app.exceptions import ConfigError, DataError, TrainingAborted, VeliError
from app.extract.extractor import LocationExtractor, read_location_csv
from app.extract.series import LocationDataset
from app.load.loader import OutputWriter
from app.model.veli import VeliModel
from app.synth.generator import generate_location
from app.transform.transformer import LocationTransformer, partition_location
from app.utils.logging_config import setup_logging

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors are configuration errors (exit code 1)."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise ConfigError("arguments", message)


def _flag(parser, name: str, **kwargs):
    parser.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, **kwargs)


def _common(parser):
    _flag(parser, 'config', help="Run configuration file (KEY=value) or manifest.json")
    _flag(parser, 'seed', type=int, help="Master seed")
    _flag(parser, 'out', help="Output directory")
    parser.add_argument('--verbose', action='store_true', help="Log at DEBUG level")
    _flag(parser, 'log_file', help="Log file; empty to log to stdout only")


def _model_flags(parser):
    for name, kind in (('epochs', int), ('batch_size', int), ('learning_rate', float), ('latent_dim', int),
                       ('hidden_dim', int), ('mc_samples', int), ('alpha', float), ('beta_z', float),
                       ('beta_y', float), ('finetune_epochs', int), ('outlier_bound', float)):
        _flag(parser, name, type=kind)


def _eval_flags(parser):
    _flag(parser, 'fusion', choices=('median', 'mean'))
    _flag(parser, 'knn_k', type=int)
    _flag(parser, 'pca_components', type=int)
    _flag(parser, 'kalman_q', type=float)
    _flag(parser, 'recovery_ratio', type=float)
    parser.add_argument('--no-baselines', dest='baselines', action='store_false', default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='veli', description="Reference-free correction of low-cost sensors")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('preprocess', help="Resample, clean and align raw sensor files of a location")
    _common(p)
    _flag(p, 'input', help="Location manifest (LOCATION_ID, SENSORS, REFERENCES, KIND)")
    _flag(p, 'kind', choices=('pm25', 'temperature'))
    _flag(p, 'min_hours', type=int)
    _flag(p, 'min_sensors', type=int)
    _flag(p, 'dbscan_eps', type=float)
    _flag(p, 'dbscan_min_pts', type=int)
    _flag(p, 'test_fraction', type=float)

    p = sub.add_parser('synth', help="Generate a synthetic location")
    _common(p)
    _flag(p, 'base', choices=('sinusoid', 'sawtooth', 'exponential', 'reference_file'))
    _flag(p, 'noise', help="Noise preset: realistic (alias fig9), extreme (alias fig10) or clean")
    _flag(p, 'length', type=int)
    _flag(p, 'channels', type=int)
    _flag(p, 'reference_path', help="Clean series for --base reference_file")

    p = sub.add_parser('train', help="Train a model on a location CSV")
    _common(p)
    _flag(p, 'input', help="Location CSV")
    _model_flags(p)

    p = sub.add_parser('finetune', help="Adapt the encoder of a trained model to a new location")
    _common(p)
    _flag(p, 'input', help="Target location CSV")
    _flag(p, 'checkpoint', help="Trained model checkpoint")
    _flag(p, 'test_fraction', type=float)
    _model_flags(p)
    _eval_flags(p)

    p = sub.add_parser('infer', help="Correct a location with a trained model")
    _common(p)
    _flag(p, 'input', help="Location CSV")
    _flag(p, 'checkpoint', help="Trained model checkpoint")
    _flag(p, 'fusion', choices=('median', 'mean'))
    p.add_argument('--sample-latent', dest='sample_latent', action='store_true', default=None,
                   help="Draw the latent from the encoder instead of using its mean")

    p = sub.add_parser('eval', help="Score a corrected location against its reference")
    _common(p)
    _flag(p, 'input', help="Location CSV with a ref column")
    _flag(p, 'checkpoint', help="Trained model checkpoint")
    _eval_flags(p)
    p.add_argument('--twelve-hour', dest='twelve_hour', action='store_true', default=None,
                   help="Also export 12-hour averaged series")

    p = sub.add_parser('ablate', help="Run an ablation study")
    _common(p)
    _flag(p, 'input', help="Location CSV with a ref column")
    _flag(p, 'checkpoint', help="Trained model for na_injection; trained on the input if absent")
    _flag(p, 'ablation', choices=ablations.ABLATION_KINDS)
    _flag(p, 'ablation_values', help="Comma-separated NA counts, subset sizes, weight scales or seeds")
    _flag(p, 'seeds', help="Comma-separated seeds")
    p.add_argument('--joint', dest='joint_scales', action='store_true', default=None,
                   help="Scale all loss weights together")
    for name in ('alpha_scales', 'beta_z_scales', 'beta_y_scales'):
        _flag(p, name, help="Comma-separated scales for this weight alone")
    _model_flags(p)
    _eval_flags(p)
    return parser


def _read_input(cfg: RunConfig) -> LocationDataset:
    if not cfg.input:
        raise ConfigError("input", "no input file given")
    return read_location_csv(cfg.input)


def _load_model(cfg: RunConfig) -> VeliModel:
    if not cfg.checkpoint:
        raise ConfigError("checkpoint", "no model checkpoint given")
    if not os.path.exists(cfg.checkpoint):
        raise DataError(f"Checkpoint not found: {cfg.checkpoint}")
    with open(cfg.checkpoint, encoding="utf-8") as handle:
        return VeliModel.from_checkpoint(handle.read())


def _checkpoint_meta(cfg: RunConfig, location: LocationDataset) -> Dict[str, object]:
    return {"config_hash": cfg.hash(), "location_id": location.location_id, "sensors": location.sensor_ids}


def cmd_preprocess(cfg: RunConfig, writer: OutputWriter) -> None:
    if not cfg.input:
        raise ConfigError("input", "no location manifest given")
    extractor = LocationExtractor(cfg.input)
    sensors, refs = extractor.extract()
    kind = extractor.manifest.get("KIND", cfg.kind).lower()
    location = LocationTransformer(
        sensors, refs, extractor.location_id, kind=kind, min_hours=cfg.min_hours,
        min_sensors=cfg.min_sensors, eps=cfg.dbscan_eps, min_pts=cfg.dbscan_min_pts,
        batch_len=cfg.dbscan_batch_hours,
    ).transform()
    if cfg.test_fraction:
        train_part, test_part = partition_location(location, cfg.test_fraction)
        writer.write_location_csv("train.csv", train_part)
        writer.write_location_csv("test.csv", test_part)
    else:
        writer.write_location_csv("location.csv", location)


def cmd_synth(cfg: RunConfig, writer: OutputWriter) -> None:
    synthetic = generate_location(cfg.base_spec(), cfg.noise_config(), cfg.channels, cfg.seed)
    writer.write_location_csv("location.csv", synthetic.to_location("synthetic"))


def _save_aborted(cfg: RunConfig, writer: OutputWriter, location: LocationDataset, e: TrainingAborted,
                  command: str) -> None:
    """Write the last finite checkpoint, the history so far and a manifest marked aborted."""
    if e.model is None:
        return
    meta = _checkpoint_meta(cfg, location)
    meta["aborted"] = True
    writer.write_checkpoint("model.json", e.model, meta)
    writer.write_history("history.csv", e.history)
    writer.write_manifest(cfg.to_dict(), cfg.hash(), [cfg.seed],
                          {"command": command, "aborted": True, "aborted_at": {"epoch": e.epoch, "batch": e.batch}})
    logger.warning(f"Saved the last finite parameters of the aborted run to {writer.out_dir}")


def cmd_train(cfg: RunConfig, writer: OutputWriter) -> None:
    location = _read_input(cfg)
    try:
        result = train_on_location(location, cfg.experiment_settings(), cfg.seed)
    except TrainingAborted as e:
        _save_aborted(cfg, writer, location, e, "train")
        raise
    writer.write_checkpoint("model.json", result.model, _checkpoint_meta(cfg, location))
    writer.write_history("history.csv", result.history)


def cmd_finetune(cfg: RunConfig, writer: OutputWriter) -> None:
    model = _load_model(cfg)
    location = _read_input(cfg)
    settings = cfg.experiment_settings()
    try:
        if location.reference is not None:
            outcome = run_finetune_comparison(model, location, settings, cfg.seed)
            writer.write_report("report_zero_shot.txt", outcome["zero_shot"])
            writer.write_report("report_fine_tuned.txt", outcome["fine_tuned"])
            model, history = outcome["model"], outcome["history"]
        else:
            history = fine_tune_on_location(model, location, settings, cfg.seed).history
    except TrainingAborted as e:
        _save_aborted(cfg, writer, location, e, "finetune")
        raise
    writer.write_checkpoint("model.json", model, _checkpoint_meta(cfg, location))
    writer.write_history("history.csv", history)


def cmd_infer(cfg: RunConfig, writer: OutputWriter) -> None:
    model = _load_model(cfg)
    location = _read_input(cfg)
    rng = np.random.default_rng(cfg.seed) if cfg.sample_latent else None
    corrected = correct_location(model, location, cfg.fusion, cfg.sample_latent, rng)
    writer.write_location_csv("corrected.csv", location, corrected.reading, corrected.fused, corrected.fused_std)


def cmd_eval(cfg: RunConfig, writer: OutputWriter) -> None:
    model = _load_model(cfg)
    location = _read_input(cfg)
    settings = cfg.experiment_settings()
    corrected = correct_location(model, location, cfg.fusion)
    writer.write_report("report.txt", score(corrected, settings))

    raw = pd.Series(raw_mean(location), index=location.readings.index, name='raw_mean')
    series = {'raw_mean': raw, 'corrected': corrected.fused_series()}
    if location.reference is not None:
        series['ref'] = location.reference
    writer.write_histograms("histograms.csv", {name: histogram_counts(s) for name, s in series.items()})
    if cfg.twelve_hour:
        frame = pd.DataFrame({name: twelve_hour_average(s) for name, s in series.items()})
        frame.insert(0, 'timestamp', frame.index.strftime("%Y-%m-%dT%H:%M:%SZ"))
        writer.write_frame("twelve_hour.csv", frame)


def cmd_ablate(cfg: RunConfig, writer: OutputWriter) -> None:
    location = _read_input(cfg)
    settings = cfg.experiment_settings()
    spec = cfg.ablation_spec()
    values = spec.resolved_values()
    rows = []

    if spec.kind == 'na_injection':
        model = _load_model(cfg) if cfg.checkpoint else train_on_location(location, settings, cfg.seed).model
        for n in values:
            report = ablations.run_na_injection(location, model, int(n), cfg.seed, settings)
            writer.write_report(f"report_na_{int(n)}.txt", report)
            rows.append({'n': int(n), 'mae_raw_mean': report.mae_raw_mean, 'mae_method': report.mae_method,
                         'recovered': report.recovered})
    elif spec.kind == 'sensor_subset':
        reports = ablations.run_sensor_subset(location, [int(v) for v in values], settings, cfg.seed)
        for size, report in reports.items():
            writer.write_report(f"report_subset_{size}.txt", report)
            rows.append({'size': size, 'mae_raw_mean': report.mae_raw_mean, 'mae_method': report.mae_method,
                         'recovered': report.recovered})
    elif spec.kind == 'loss_weight_sweep':
        table = ablations.run_loss_weight_sweep(location, cfg.weight_scales(), settings, cfg.seed, spec.joint)
        writer.write_frame("summary.csv", table)
        return
    else:
        seeds = [int(v) for v in spec.values] or list(cfg.seeds)
        writer.write_report("report.txt", ablations.run_seed_repeat(location, seeds, settings))
        return
    writer.write_frame("summary.csv", pd.DataFrame(rows))


HANDLERS: Dict[str, Callable[[RunConfig, OutputWriter], None]] = {
    'preprocess': cmd_preprocess,
    'synth': cmd_synth,
    'train': cmd_train,
    'finetune': cmd_finetune,
    'infer': cmd_infer,
    'eval': cmd_eval,
    'ablate': cmd_ablate,
}


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
    skip = {'command', 'config', 'verbose'}
    return {k: v for k, v in vars(args).items() if k not in skip and v is not None}


def _seeds_used(cfg: RunConfig) -> List[int]:
    if cfg.ablation == 'seed_repeat':
        return [int(v) for v in cfg.ablation_values] or list(cfg.seeds)
    return [cfg.seed]


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        int: Process exit code.
    """
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        setup_logging(None, 'INFO')
        logger.error(f"Invalid arguments: {str(e)}")
        return e.exit_code
    setup_logging(None, 'DEBUG' if args.verbose else 'INFO')

    try:
        cfg = Config().resolve(args.config, _overrides(args))
        setup_logging(cfg.log_file or None, 'DEBUG' if args.verbose else cfg.log_level)
        logger.info(f"Starting '{args.command}' (config {cfg.hash()[:12]})")

        writer = OutputWriter(cfg.out)
        HANDLERS[args.command](cfg, writer)
        seeds = _seeds_used(cfg) if args.command == 'ablate' else [cfg.seed]
        extra = {"command": args.command}
        if args.command == 'synth':
            extra["noise"] = cfg.noise_config().to_dict()
        writer.write_manifest(cfg.to_dict(), cfg.hash(), seeds, extra)
        logger.info(f"'{args.command}' completed successfully")
        return 0

    except VeliError as e:
        logger.error(f"'{args.command}' failed: {str(e)}")
        return e.exit_code
    except Exception as e:
        logger.error(f"'{args.command}' failed: {str(e)}", exc_info=True)
        return 1
