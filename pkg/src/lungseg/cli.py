"""Command-line surface: ``phantom``, ``train``, ``eval``, and ``report``.

Configuration is a flat ``key = value`` text file with ``#`` comment lines;
every key has a documented default (see ``RunConfig``), ``--seed`` overrides
the configured seed, and ``--out`` overrides the command's output path. Exit
codes: 0 success, 1 validation error, 2 I/O error.

The ``eval`` report CSV is::

    slice_id,dice
    <patient>_s<index>,<dice to 6 decimals>
    ...
    mean_dice,tp,fp,tn,fn,f1,rotations,threshold
    <values on one line>
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import typing
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evaluation, phantom, pipeline, training
from .datastore import Volume, load_weights, read_volume, save_weights
from .models import Graph, attach_deep_supervision, build_multires_unet, build_unet
from .nn import DeepSupervisionSpec, OptimizerConfig

_AUGMENT_STREAM = 0xA06
_TTA_STREAM = 0x77A


class ConfigError(ValueError):
    """Bad configuration file or option combination."""


class ReportParseError(ValueError):
    """A run CSV that does not follow the eval report format."""


@dataclass(frozen=True)
class RunConfig:
    """One experiment configuration; field order is the canonical file order."""

    dataset_path: str = "data/phantom"
    model: str = "multires"              # unet | multires
    deep_supervision: bool = True
    ds_weights: tuple[float, ...] = (1.0, 0.8, 0.6, 0.4, 0.2)
    channels: str = "five"               # five | three
    optimizer: str = "adam"              # adam | sgd
    learning_rate: float = 0.01
    decay: float = 0.01 / 150
    epochs: int = 150
    batch_size: int = 8
    folds: int = 5
    seed: int = 42
    tta_rotations: int = 20
    threshold: float = 0.5
    weights_path: str = "run.lseg"
    report_path: str = "report.csv"
    base_filters: int = 8
    alpha: float = 1.67
    loss: str = "bce"                    # bce | softdice
    augment: bool = True
    crop_margin: int = 10
    holdout_fold: int = 0
    decay_per_iteration: bool = False
    tta_random_angles: bool = False
    overlay_dir: str = ""                # empty disables overlay emission
    phantom_patients: int = 8
    phantom_slices: int = 16
    phantom_slice_size: int = 512
    phantom_manufacturer_split: float = 0.25
    phantom_tumor_probability: float = 0.14
    phantom_radius_min: float = 12.0
    phantom_radius_max: float = 40.0
    phantom_noise_sigma: float = 0.03

    def validate(self) -> None:
        checks = {
            "model": self.model in ("unet", "multires"),
            "channels": self.channels in ("five", "three"),
            "optimizer": self.optimizer in ("adam", "sgd"),
            "loss": self.loss in ("bce", "softdice"),
            "threshold": 0.0 < self.threshold < 1.0,
            "epochs": self.epochs >= 0,
            "batch_size": self.batch_size >= 1,
            "folds": self.folds >= 1,
            "holdout_fold": 0 <= self.holdout_fold < self.folds,
            "tta_rotations": self.tta_rotations >= 1,
            "learning_rate": self.learning_rate > 0,
            "decay": self.decay >= 0,
            "base_filters": self.base_filters >= 4,
            "alpha": self.alpha > 0,
            "crop_margin": self.crop_margin >= 0,
            "seed": self.seed >= 0,
            "ds_weights": len(self.ds_weights) == 5,
        }
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            raise ConfigError(f"invalid configuration value(s): {', '.join(bad)}")

    def phantom_spec(self) -> phantom.PhantomSpec:
        return phantom.PhantomSpec(
            n_patients=self.phantom_patients,
            slices_per_patient=self.phantom_slices,
            slice_size=self.phantom_slice_size,
            manufacturer_split=self.phantom_manufacturer_split,
            tumor_probability=self.phantom_tumor_probability,
            tumor_radius_range=(self.phantom_radius_min, self.phantom_radius_max),
            noise_sigma=self.phantom_noise_sigma,
            seed=self.seed,
        )


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: RunConfig) -> str:
    """Canonical text form; parsing it reproduces ``config`` exactly."""
    lines = [
        f"{field.name} = {_format_value(getattr(config, field.name))}"
        for field in dataclasses.fields(RunConfig)
    ]
    return "\n".join(lines) + "\n"


def _coerce(name: str, kind, raw: str):
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        return tuple(float(part.strip()) for part in raw.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"cannot parse value for {name!r}: {raw!r}") from exc


def _field_kinds() -> dict[str, type]:
    resolved = typing.get_type_hints(RunConfig)
    kinds: dict[str, type] = {}
    for field in dataclasses.fields(RunConfig):
        origin = typing.get_origin(resolved[field.name])
        kinds[field.name] = resolved[field.name] if origin is None else tuple
    return kinds


_KIND_BY_FIELD = _field_kinds()


def parse_config_text(text: str) -> RunConfig:
    values: dict[str, object] = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no} has no '=': {raw_line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _KIND_BY_FIELD:
            raise ConfigError(f"unknown configuration key {key!r} (line {line_no})")
        if key in values:
            raise ConfigError(f"duplicate configuration key {key!r} (line {line_no})")
        values[key] = _coerce(key, _KIND_BY_FIELD[key], raw)
    config = RunConfig(**values)
    config.validate()
    return config


def load_config(path: str | None) -> RunConfig:
    if path is None:
        config = RunConfig()
        config.validate()
        return config
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


# -- dataset plumbing --------------------------------------------------------


def _load_volumes(dataset_path: str) -> list[Volume]:
    root = Path(dataset_path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {dataset_path!r} does not exist")
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not dirs:
        raise ConfigError(f"dataset directory {dataset_path!r} holds no patient directories")
    return [read_volume(d) for d in dirs]


def _partition(config: RunConfig, volumes: list[Volume]) -> tuple[list[Volume], list[Volume]]:
    split = pipeline.split_folds([v.patient_id for v in volumes], config.folds, config.seed)
    train_ids = split.training(config.holdout_fold)
    held_ids = split.holdout(config.holdout_fold)
    train = [v for v in volumes if v.patient_id in train_ids]
    held = [v for v in volumes if v.patient_id in held_ids]
    return train, held


def _training_window(config: RunConfig, train_volumes: list[Volume]) -> pipeline.CropWindow:
    masks = np.concatenate([v.masks for v in train_volumes], axis=0)
    return pipeline.compute_crop_window(masks, margin=config.crop_margin)


def _build_graph(config: RunConfig) -> Graph:
    in_channels = 5 if config.channels == "five" else 3
    if config.model == "unet":
        graph = build_unet(in_channels, config.base_filters, seed=config.seed)
    else:
        graph = build_multires_unet(
            in_channels, config.base_filters, alpha=config.alpha, seed=config.seed
        )
    if config.deep_supervision:
        attach_deep_supervision(graph, DeepSupervisionSpec(tuple(config.ds_weights)))
    return graph


def _optimizer_config(config: RunConfig) -> OptimizerConfig:
    return OptimizerConfig(
        algorithm=config.optimizer,
        learning_rate=config.learning_rate,
        decay=config.decay,
    )


# -- commands ----------------------------------------------------------------


def cmd_phantom(config: RunConfig, out: str | None) -> int:
    target = out or config.dataset_path
    summary = phantom.generate_dataset(config.phantom_spec(), target)
    print(f"dataset written to {target}")
    print(f"{'subjects':>10} {'tumor_slices':>14} {'non_tumor_slices':>18} {'total':>8}")
    print(
        f"{summary.patients:>10d} {summary.tumor_slices:>14d} "
        f"{summary.non_tumor_slices:>18d} {summary.total_slices:>8d}"
    )
    return 0


def cmd_train(config: RunConfig, out: str | None) -> int:
    weights_path = out or config.weights_path
    volumes = _load_volumes(config.dataset_path)
    train_volumes, _ = _partition(config, volumes)
    if not train_volumes:
        raise ConfigError("training partition is empty")
    window = _training_window(config, train_volumes)
    instances = [
        pipeline.build_instance(volume, index, window, config.channels)
        for volume in train_volumes
        for index in range(volume.n_slices)
    ]
    if config.augment:
        rng = np.random.default_rng((config.seed, _AUGMENT_STREAM))
        instances = pipeline.expand_training_set(instances, rng)
    graph = _build_graph(config)
    logs = training.train_graph(
        graph,
        instances,
        _optimizer_config(config),
        epochs=config.epochs,
        batch_size=config.batch_size,
        seed=config.seed,
        loss=config.loss,
        decay_per_iteration=config.decay_per_iteration,
        log_fn=lambda row: print(
            f"epoch {row.epoch:4d}  loss {row.mean_loss:.6f}  train_dice {row.train_dice:.6f}"
        ),
    )
    save_weights(graph, weights_path)
    log_path = Path(str(weights_path) + ".log")
    lines = ["epoch,loss,train_dice"]
    lines += [f"{r.epoch},{r.mean_loss:.6f},{r.train_dice:.6f}" for r in logs]
    log_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"weights written to {weights_path} ({len(logs)} epochs logged)")
    return 0


_FOOTER_HEADER = "mean_dice,tp,fp,tn,fn,f1,rotations,threshold"


def _report_csv(report: evaluation.MetricsReport) -> str:
    lines = ["slice_id,dice"]
    lines += [
        f"{sid},{dice:.6f}" for sid, dice in zip(report.slice_ids, report.per_slice_dice)
    ]
    lines.append(_FOOTER_HEADER)
    c = report.confusion
    lines.append(
        f"{report.mean_dice:.6f},{c.tp},{c.fp},{c.tn},{c.fn},"
        f"{report.f1:.6f},{report.rotations},{report.threshold:.6f}"
    )
    return "\n".join(lines) + "\n"


def cmd_eval(config: RunConfig, out: str | None) -> int:
    report_path = out or config.report_path
    volumes = _load_volumes(config.dataset_path)
    train_volumes, held_volumes = _partition(config, volumes)
    if not train_volumes or not held_volumes:
        raise ConfigError("fold split leaves an empty partition")
    window = _training_window(config, train_volumes)
    graph = _build_graph(config)
    load_weights(config.weights_path, graph)
    rng = (
        np.random.default_rng((config.seed, _TTA_STREAM))
        if config.tta_random_angles
        else None
    )
    report = evaluation.evaluate_run(
        graph,
        held_volumes,
        window,
        config.tta_rotations,
        config.threshold,
        config.channels,
        rng=rng,
    )
    Path(report_path).write_text(_report_csv(report), encoding="utf-8")
    if config.overlay_dir:
        overlay_root = Path(config.overlay_dir)
        overlay_root.mkdir(parents=True, exist_ok=True)
        for volume in held_volumes:
            for index in range(volume.n_slices):
                instance = pipeline.build_instance(volume, index, window, config.channels)
                prob = evaluation.tta_predict(graph, instance, config.tta_rotations, rng)
                pred = evaluation.binarize(prob, config.threshold)
                evaluation.write_overlay(
                    instance, pred, overlay_root / f"{instance.slice_id}.png"
                )
    c = report.confusion
    print(
        f"mean_dice {report.mean_dice:.6f}  f1 {report.f1:.6f}  "
        f"tp {c.tp} fp {c.fp} tn {c.tn} fn {c.fn}  -> {report_path}"
    )
    return 0


def _parse_report_csv(path: Path) -> dict[str, float]:
    lines = [line for line in path.read_text(encoding="utf-8").splitlines() if line]
    if len(lines) < 3 or lines[0] != "slice_id,dice":
        raise ReportParseError(f"{path}: missing 'slice_id,dice' header")
    if lines[-2] != _FOOTER_HEADER:
        raise ReportParseError(f"{path}: missing footer header {_FOOTER_HEADER!r}")
    parts = lines[-1].split(",")
    if len(parts) != 8:
        raise ReportParseError(f"{path}: footer must hold 8 comma-separated values")
    try:
        return {
            "mean_dice": float(parts[0]),
            "tp": int(parts[1]),
            "fp": int(parts[2]),
            "tn": int(parts[3]),
            "fn": int(parts[4]),
            "f1": float(parts[5]),
            "rotations": int(parts[6]),
            "threshold": float(parts[7]),
        }
    except ValueError as exc:
        raise ReportParseError(f"{path}: malformed footer value: {exc}") from exc


def cmd_report(csv_paths: list[str]) -> int:
    rows = []
    for raw in csv_paths:
        path = Path(raw)
        if not path.is_file():
            raise FileNotFoundError(path)
        stats = _parse_report_csv(path)
        rows.append((path.name, stats))
    rows.sort(key=lambda item: item[1]["mean_dice"], reverse=True)
    name_width = max(len("run"), max(len(name) for name, _ in rows))
    print(f"{'run':<{name_width}}  {'mean_dice':>9}  {'f1':>8}  {'rotations':>9}  {'threshold':>9}")
    for name, stats in rows:
        print(
            f"{name:<{name_width}}  {stats['mean_dice']:>9.6f}  {stats['f1']:>8.6f}  "
            f"{stats['rotations']:>9d}  {stats['threshold']:>9.2f}"
        )
    return 0


# -- entry point -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="lungseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("phantom", "generate a synthetic dataset"),
        ("train", "train a model on the non-held-out folds"),
        ("eval", "evaluate saved weights on the held-out fold"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", default=None, help="key = value configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", default=None, help="override the command's output path")
    report = sub.add_parser("report", help="tabulate one or more eval CSVs")
    report.add_argument("csvs", nargs="+", help="eval report CSV paths")
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        if args.command == "report":
            return cmd_report(args.csvs)
        config = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            config = dataclasses.replace(config, seed=args.seed)
            config.validate()
        if args.command == "phantom":
            return cmd_phantom(config, args.out)
        if args.command == "train":
            return cmd_train(config, args.out)
        return cmd_eval(config, args.out)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
