"""
Train HyCoRe point-cloud classifiers
Epoch loop over triplet batches, per-epoch metrics and joblib checkpoints
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import joblib
import numpy as np
import pandas as pd

from src import __version__
from src.config import RunConfig
from src.core.autodiff import backward
from src.exceptions import CheckpointError, NumericalError, ShapeError
from src.models.hycore import build_triplets, total_loss
from src.models.nn import ModelDims, ModelState, init_state, predict, state_from_arrays
from src.models.optim import RiemannianSGD
from src.services.data import PointCloud, load_splits

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
CHECKPOINT_KEYS = ("format_version", "dims", "curvature", "euclidean_mode", "class_names", "arrays")

CONFIG_FILE = "config.json"
MANIFEST_FILE = "manifest.json"
METRICS_FILE = "metrics.csv"
BEST_CHECKPOINT = "checkpoint.joblib"
LAST_CHECKPOINT = "last.joblib"

METRIC_COLUMNS = [
    "epoch", "lr", "ce", "r_hier", "r_contr", "total",
    "train_oa", "train_aa", "test_oa", "test_aa",
]


def overall_accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return float("nan")
    return float(np.mean(np.asarray(predicted) == labels))


def average_accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    """Unweighted mean of per-class accuracies over the classes present in labels"""
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    if labels.size == 0:
        return float("nan")
    return float(np.mean([np.mean(predicted[labels == k] == k) for k in np.unique(labels)]))


def save_checkpoint(state: ModelState, path: Union[str, Path], epoch: Optional[int] = None) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "dims": state.dims.model_dump(),
        "curvature": state.curvature.c,
        "euclidean_mode": state.euclidean_mode,
        "class_names": list(state.class_names),
        "arrays": state.to_arrays(),
        "epoch": epoch,
    }
    joblib.dump(payload, path)


def load_checkpoint(path: Union[str, Path]) -> ModelState:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} not found")
    try:
        payload = joblib.load(path)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    if not isinstance(payload, dict) or any(k not in payload for k in CHECKPOINT_KEYS):
        raise CheckpointError(f"{path} is not a HyCoRe checkpoint")
    if payload["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {payload['format_version']}")
    try:
        return state_from_arrays(
            payload["arrays"],
            curvature=payload["curvature"],
            euclidean_mode=payload["euclidean_mode"],
            dims=ModelDims(**payload["dims"]),
            class_names=payload["class_names"],
        )
    except (ShapeError, KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint {path} is inconsistent: {e}")


def check_compatible(state: ModelState, class_names: Sequence[str]) -> None:
    if state.num_classes != len(class_names):
        raise CheckpointError(
            f"checkpoint has {state.num_classes} classes, dataset has {len(class_names)}"
        )


@dataclass
class TrainResult:
    metrics: pd.DataFrame
    state: ModelState
    best_state: ModelState
    best_epoch: int
    best_test_oa: float
    run_dir: Optional[Path] = None


class HyCoReTrainer:
    """Trains one model for one RunConfig"""

    def __init__(
        self,
        cfg: RunConfig,
        train_set: List[PointCloud],
        test_set: List[PointCloud],
        class_names: Sequence[str],
    ):
        self.cfg = cfg
        self.train_set = train_set
        self.test_set = test_set
        self.class_names = list(class_names)
        self.state = init_state(
            cfg.dims,
            num_classes=len(self.class_names),
            curvature=cfg.curvature,
            euclidean_mode=cfg.euclidean_mode,
            seed=cfg.seed,
            class_names=self.class_names,
        )
        self.optimizer = RiemannianSGD(cfg.optim)
        self.rng = np.random.default_rng([cfg.seed, 1])

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "HyCoReTrainer":
        train, test, class_names = load_splits(cfg.dataset, cfg.data_dir)
        return cls(cfg, train, test, class_names)

    def train_epoch(self, epoch: int) -> Dict[str, float]:
        lr = self.optimizer.lr_at(epoch)
        order = self.rng.permutation(len(self.train_set))
        batch_size = self.cfg.optim.batch_size
        sums = {"ce": 0.0, "r_hier": 0.0, "r_contr": 0.0, "total": 0.0}
        seen = 0
        for start in range(0, len(order), batch_size):
            # Step 1: sample triplets for this slice of the permutation
            anchors = order[start:start + batch_size]
            batch = build_triplets(self.train_set, self.rng, self.cfg.sampling, anchors)
            loss, parts = total_loss(batch, self.state, self.cfg.weights, self.cfg.crop_augment)
            if not np.isfinite(parts.total):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch starting at {start}")
            # Step 2: backprop and update
            backward(loss)
            self.optimizer.step(self.state, lr)
            for key, value in parts.as_dict().items():
                sums[key] += value * len(batch)
            seen += len(batch)
        record = {"epoch": epoch, "lr": lr}
        record.update({key: value / seen for key, value in sums.items()})
        return record

    def evaluate(self, clouds: Sequence[PointCloud], state: Optional[ModelState] = None) -> Dict[str, float]:
        state = state or self.state
        labels = np.array([c.label for c in clouds])
        predicted = predict(list(clouds), state)
        return {"oa": overall_accuracy(predicted, labels), "aa": average_accuracy(predicted, labels)}

    def fit(self, run_dir: Optional[Union[str, Path]] = None) -> TrainResult:
        """Train for the configured epochs; with run_dir, write config, metrics and checkpoints"""
        run_dir = Path(run_dir) if run_dir is not None else None
        if run_dir is not None:
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / CONFIG_FILE).write_text(self.cfg.model_dump_json(indent=2))

        records = []
        best_oa, best_epoch, best_arrays = -1.0, -1, self.state.to_arrays()
        for epoch in range(self.cfg.optim.epochs):
            # 1. one pass over the training set
            record = self.train_epoch(epoch)
            # 2. full-cloud accuracy on both splits
            train_acc = self.evaluate(self.train_set)
            test_acc = self.evaluate(self.test_set)
            record.update({
                "train_oa": train_acc["oa"], "train_aa": train_acc["aa"],
                "test_oa": test_acc["oa"], "test_aa": test_acc["aa"],
            })
            records.append(record)
            logger.info("Epoch complete", extra=record)

            # 3. keep the best test OA checkpoint
            if test_acc["oa"] > best_oa:
                best_oa, best_epoch, best_arrays = test_acc["oa"], epoch, self.state.to_arrays()
                if run_dir is not None:
                    save_checkpoint(self.state, run_dir / BEST_CHECKPOINT, epoch=epoch)
            if run_dir is not None:
                pd.DataFrame(records, columns=METRIC_COLUMNS).to_csv(run_dir / METRICS_FILE, index=False)

        metrics = pd.DataFrame(records, columns=METRIC_COLUMNS)
        best_state = state_from_arrays(
            best_arrays, self.state.curvature, self.state.euclidean_mode, self.state.dims, self.class_names
        )
        if run_dir is not None:
            save_checkpoint(self.state, run_dir / LAST_CHECKPOINT, epoch=self.cfg.optim.epochs - 1)
            self._write_manifest(run_dir, best_epoch, best_oa)
        logger.info("Training finished", extra={"best_epoch": best_epoch, "best_test_oa": best_oa})
        return TrainResult(metrics, self.state, best_state, best_epoch, best_oa, run_dir)

    def _write_manifest(self, run_dir: Path, best_epoch: int, best_oa: float) -> None:
        manifest = {
            "version": __version__,
            "command": "train",
            "seed": self.cfg.seed,
            "dataset_seed": self.cfg.dataset.seed,
            "data_dir": str(self.cfg.data_dir) if self.cfg.data_dir else None,
            "class_names": self.class_names,
            "num_train": len(self.train_set),
            "num_test": len(self.test_set),
            "best_epoch": best_epoch,
            "best_test_oa": best_oa,
            "numpy_version": np.__version__,
            "files": [CONFIG_FILE, METRICS_FILE, BEST_CHECKPOINT, LAST_CHECKPOINT],
        }
        with open(run_dir / MANIFEST_FILE, "w") as f:
            json.dump(manifest, f, indent=2)


def train_from_config(cfg: RunConfig) -> TrainResult:
    trainer = HyCoReTrainer.from_config(cfg)
    return trainer.fit(cfg.resolved_output_dir())


if __name__ == "__main__":
    from src.logging_config import setup_logging

    setup_logging(fmt="text")
    result = train_from_config(RunConfig())
    print(f"✅ Training complete: best test OA {result.best_test_oa:.3f} at epoch {result.best_epoch}")
