"""
HyCoRe command line
train / eval / embed / sweep; exit codes 0 ok, 2 config, 3 data, 4 numerical
"""
import argparse
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import ValidationError

from src.config import PRESETS, RunConfig, get_settings, merge_overrides
from src.exceptions import ConfigError, HyCoReError
from src.logging_config import setup_logging
from src.models.hycore import PartSampling
from src.models.train import check_compatible, load_checkpoint, train_from_config
from src.services.data import DatasetSpec, load_splits
from src.services.experiment_service import SWEEP_AXES, ExperimentService

logger = logging.getLogger(__name__)

# flag dest -> path inside RunConfig
RUN_FIELDS = {
    "classes": ("dataset", "classes"),
    "per_class_train": ("dataset", "per_class_train"),
    "per_class_test": ("dataset", "per_class_test"),
    "points_per_cloud": ("dataset", "points_per_cloud"),
    "noise_sigma": ("dataset", "noise_sigma"),
    "scale_jitter": ("dataset", "scale_jitter"),
    "data_seed": ("dataset", "seed"),
    "data_dir": ("data_dir",),
    "curvature": ("curvature",),
    "euclidean_mode": ("euclidean_mode",),
    "hidden1": ("dims", "hidden1"),
    "hidden2": ("dims", "hidden2"),
    "feature_dim": ("dims", "feature_dim"),
    "embed_dim": ("dims", "embed_dim"),
    "mobius_activation": ("dims", "mobius_activation"),
    "alpha": ("weights", "alpha"),
    "beta": ("weights", "beta"),
    "gamma": ("weights", "gamma"),
    "delta": ("weights", "delta"),
    "lr": ("optim", "lr"),
    "momentum": ("optim", "momentum"),
    "weight_decay": ("optim", "weight_decay"),
    "epochs": ("optim", "epochs"),
    "batch_size": ("optim", "batch_size"),
    "grad_clip": ("optim", "grad_clip"),
    "schedule": ("optim", "schedule"),
    "whole_min": ("sampling", "whole_min"),
    "whole_max": ("sampling", "whole_max"),
    "part_min": ("sampling", "part_min"),
    "part_max": ("sampling", "part_max"),
    "crop_augment": ("crop_augment",),
    "output_dir": ("output_dir",),
    "seed": ("seed",),
}


def _csv_list(value: str) -> List[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _add_data_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data-dir", type=Path, help="dataset directory with manifest.csv (or train/ and test/)")
    g.add_argument("--classes", type=_csv_list, help="comma-separated shape kinds")
    g.add_argument("--per-class-train", type=int)
    g.add_argument("--per-class-test", type=int)
    g.add_argument("--points-per-cloud", type=int)
    g.add_argument("--noise-sigma", type=float)
    g.add_argument("--scale-jitter", type=float, help="per-axis stretch range of generated shapes")
    g.add_argument("--data-seed", type=int)


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="RunConfig JSON; flags override its values")
    p.add_argument("--preset", choices=list(PRESETS), default="default", help="base values under --config and flags")
    _add_data_args(p)
    g = p.add_argument_group("model")
    g.add_argument("--curvature", type=float)
    g.add_argument("--euclidean-mode", action="store_true", default=None)
    g.add_argument("--hidden1", type=int)
    g.add_argument("--hidden2", type=int)
    g.add_argument("--feature-dim", type=int)
    g.add_argument("--embed-dim", type=int)
    g.add_argument("--mobius-activation", choices=["none", "relu", "tanh"])
    g = p.add_argument_group("loss")
    g.add_argument("--alpha", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--delta", type=float)
    g.add_argument("--crop-augment", action="store_true", default=None)
    g = p.add_argument_group("optimization")
    g.add_argument("--lr", type=float)
    g.add_argument("--momentum", type=float)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--grad-clip", type=float)
    g.add_argument("--schedule", choices=["cosine", "constant"])
    g = p.add_argument_group("sampling")
    g.add_argument("--whole-min", type=int)
    g.add_argument("--whole-max", type=int)
    g.add_argument("--part-min", type=int)
    g.add_argument("--part-max", type=int)
    p.add_argument("--output-dir", type=Path)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hycore", description="Hyperbolic part-whole regularized point-cloud classifiers")
    parser.add_argument("--log-level", help="overrides HYCORE_LOG_LEVEL")
    parser.add_argument("--log-format", choices=["json", "text"], help="overrides HYCORE_LOG_FORMAT")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train one model")
    _add_run_args(train)

    evaluate = sub.add_parser("eval", help="accuracy of a checkpoint under full, subsample or part inputs")
    evaluate.add_argument("--checkpoint", type=Path, required=True)
    _add_data_args(evaluate)
    evaluate.add_argument("--split", choices=["train", "test", "all"], default="test")
    evaluate.add_argument("--mode", action="append", help="full | subsample:k[,k..] | part:n[,n..]; repeatable")
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--out", type=Path, help="CSV file for the accuracy table")

    emb = sub.add_parser("embed", help="export ball coordinates of objects and parts")
    emb.add_argument("--checkpoint", type=Path, required=True)
    _add_data_args(emb)
    emb.add_argument("--split", choices=["train", "test", "all"], default="test")
    emb.add_argument("--out", type=Path, required=True, help="output directory")
    emb.add_argument("--parts-per-cloud", type=int, default=1)
    emb.add_argument("--part-min", type=int, default=200)
    emb.add_argument("--part-max", type=int, default=650)
    emb.add_argument("--distance-ids", type=_csv_list, help="comma-separated object ids")
    emb.add_argument("--seed", type=int, default=0)

    sweep = sub.add_parser("sweep", help="train a grid of variants over one axis")
    _add_run_args(sweep)
    sweep.add_argument("--axis", choices=list(SWEEP_AXES), required=True)
    sweep.add_argument("--values", type=_csv_list, help="override the axis values")
    sweep.add_argument("--seeds", type=_csv_list, default=["0", "1", "2"])
    return parser


def _set_path(target: Dict[str, Any], path: Sequence[str], value: Any) -> None:
    for key in path[:-1]:
        target = target.setdefault(key, {})
    target[path[-1]] = value


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Preset, then config file (if any), then every flag given on the command line"""
    raw: Dict[str, Any] = merge_overrides(PRESETS[getattr(args, "preset", None) or "default"], {})
    if getattr(args, "config", None) is not None:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {args.config} must hold a JSON object")
        raw = merge_overrides(raw, loaded)
    for dest, path in RUN_FIELDS.items():
        value = getattr(args, dest, None)
        if value is not None:
            _set_path(raw, path, value)
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(str(e))


def _dataset_from_args(args: argparse.Namespace) -> DatasetSpec:
    raw: Dict[str, Any] = {}
    for dest, path in RUN_FIELDS.items():
        value = getattr(args, dest, None)
        if path[0] == "dataset" and value is not None:
            raw[path[1]] = value
    try:
        return DatasetSpec.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(str(e))


def _select(args: argparse.Namespace):
    train, test, class_names = load_splits(_dataset_from_args(args), args.data_dir)
    clouds = {"train": train, "test": test, "all": train + test}[args.split]
    return clouds, class_names


def cmd_train(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    result = train_from_config(cfg)
    final = result.metrics.iloc[-1]
    print(f"✅ Trained {cfg.optim.epochs} epochs -> {result.run_dir}")
    print(f"   best test OA {result.best_test_oa:.4f} (epoch {result.best_epoch}); "
          f"final train OA {final['train_oa']:.4f}, test OA {final['test_oa']:.4f}, test AA {final['test_aa']:.4f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    state = load_checkpoint(args.checkpoint)
    clouds, class_names = _select(args)
    check_compatible(state, class_names)
    service = ExperimentService(get_settings().output_root)
    table = service.evaluate(state, clouds, args.mode or ["full"], seed=args.seed, out_file=args.out)
    print(table.to_string(index=False))
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    state = load_checkpoint(args.checkpoint)
    clouds, class_names = _select(args)
    check_compatible(state, class_names)
    try:
        sampling = PartSampling(part_min=args.part_min, part_max=args.part_max, whole_min=1, whole_max=1)
    except ValidationError as e:
        raise ConfigError(str(e))
    service = ExperimentService(get_settings().output_root)
    export = service.export_embeddings(
        state, clouds, args.out,
        parts_per_cloud=args.parts_per_cloud,
        sampling=sampling,
        distance_ids=args.distance_ids,
        seed=args.seed,
    )
    print(f"✅ Wrote {len(export.records)} records to {args.out}")
    print(export.bins.to_string(index=False))
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    try:
        seeds = [int(s) for s in args.seeds]
        values = [float(v) if args.axis == "curvature" else v for v in args.values] if args.values else None
        if values and args.axis == "dim":
            values = [int(v) for v in values]
    except ValueError as e:
        raise ConfigError(f"bad sweep values: {e}")
    root = cfg.output_dir or get_settings().output_root
    runs, summary = ExperimentService(root).run_sweep(cfg, args.axis, seeds=seeds, values=values)
    print(f"✅ Sweep over {args.axis}: {len(runs)} runs")
    print(summary.to_string(index=False))
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "embed": cmd_embed, "sweep": cmd_sweep}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level, args.log_format)
    try:
        return COMMANDS[args.command](args)
    except HyCoReError as e:
        logger.error(str(e), extra={"error": type(e).__name__, "exit_code": e.exit_code})
        print(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except Exception:
        logger.exception("Unexpected failure")
        return 1
