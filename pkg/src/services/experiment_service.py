"""
Experiment Service
Evaluation modes, embedding export with part-norm bins, and training sweeps
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.config import RunConfig
from src.core.autodiff import no_grad
from src.exceptions import ConfigError, DataError
from src.models.hycore import PartSampling
from src.models.nn import ModelState, embed, predict
from src.models.train import HyCoReTrainer, average_accuracy, overall_accuracy
from src.services.data import PointCloud, knn_part, load_splits, subsample

logger = logging.getLogger(__name__)

EVAL_MODES = ("full", "subsample", "part")
# (label, lowest part size, first size past the bin)
HNORM_BINS = (("200-350", 200, 350), ("350-500", 350, 500), ("500-650", 500, 650))
WHOLE_BIN = "whole"

SWEEP_AXES = {
    "curvature": [1.0, 0.5, 0.1, 0.01],
    "ablation": ["ce_only", "hier", "contr", "full"],
    "dim": [16, 64, 256],
}
ROBUSTNESS_MODES = ("part:300", "subsample:128")


def parse_mode(mode: str) -> Tuple[str, List[int]]:
    """'full', 'subsample:k[,k...]' or 'part:n[,n...]'"""
    name, _, sizes = mode.partition(":")
    if name not in EVAL_MODES:
        raise ConfigError(f"unknown evaluation mode '{mode}'; expected one of {EVAL_MODES}")
    if name == "full":
        if sizes:
            raise ConfigError("'full' mode takes no sizes")
        return name, []
    try:
        values = [int(v) for v in sizes.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"sizes in '{mode}' must be integers")
    if not values or any(v < 1 for v in values):
        raise ConfigError(f"'{mode}' needs at least one positive size")
    return name, values


def evaluate_mode(
    state: ModelState,
    clouds: Sequence[PointCloud],
    mode: str = "full",
    seed: int = 0,
) -> pd.DataFrame:
    """Accuracy table, one row per size of the mode (one row for 'full')"""
    name, sizes = parse_mode(mode)
    labels = np.array([c.label for c in clouds])
    rows = []
    for size in sizes or [None]:
        rng = np.random.default_rng([seed, size or 0])
        if name == "subsample":
            inputs = [subsample(c, size, rng) for c in clouds]
        elif name == "part":
            too_small = [c.id for c in clouds if len(c) < size]
            if too_small:
                raise DataError(f"{len(too_small)} clouds have fewer than {size} points")
            inputs = [knn_part(c, size, rng) for c in clouds]
        else:
            inputs = list(clouds)
        predicted = predict(inputs, state)
        rows.append({
            "mode": name,
            "size": size,
            "n_clouds": len(inputs),
            "oa": overall_accuracy(predicted, labels),
            "aa": average_accuracy(predicted, labels),
        })
    table = pd.DataFrame(rows)
    table["size"] = table["size"].astype("Int64")
    return table


def _coords(state: ModelState, clouds: Sequence[PointCloud]) -> Tuple[np.ndarray, np.ndarray]:
    with no_grad():
        z = embed(list(clouds), state)
        norms = state.manifold.norm(z).data
    return z.data, norms


def embedding_records(
    state: ModelState,
    clouds: Sequence[PointCloud],
    parts_per_cloud: int = 1,
    sampling: Optional[PartSampling] = None,
    seed: int = 0,
    batch_size: int = 64,
) -> pd.DataFrame:
    """One record per object and per sampled part: id, label, is_part, n_points, hnorm, z0..z{f-1}"""
    sampling = sampling or PartSampling()
    rng = np.random.default_rng([seed, 2])
    items: List[Tuple[PointCloud, bool]] = []
    for cloud in clouds:
        items.append((cloud, False))
        for _ in range(parts_per_cloud):
            n_part = int(rng.integers(sampling.part_min, sampling.part_max + 1))
            if n_part > len(cloud):
                raise DataError(f"cloud '{cloud.id}' has fewer than {n_part} points")
            items.append((knn_part(cloud, n_part, rng), True))

    coords, norms = [], []
    for start in range(0, len(items), batch_size):
        z, n = _coords(state, [c for c, _ in items[start:start + batch_size]])
        coords.append(z)
        norms.append(n)
    coords = np.concatenate(coords) if coords else np.zeros((0, state.dims.embed_dim))
    norms = np.concatenate(norms) if norms else np.zeros(0)

    records = pd.DataFrame({
        "id": [c.id for c, _ in items],
        "label": [c.label for c, _ in items],
        "is_part": [is_part for _, is_part in items],
        "n_points": [len(c) for c, _ in items],
        "hnorm": norms,
    })
    coord_frame = pd.DataFrame(coords, columns=[f"z{i}" for i in range(coords.shape[1])])
    return pd.concat([records, coord_frame], axis=1)


def hnorm_bins(records: pd.DataFrame) -> pd.DataFrame:
    """Mean norm of parts binned by size, plus the whole objects"""
    rows = []
    parts = records[records["is_part"]]
    for label, lo, hi in HNORM_BINS:
        in_bin = parts[(parts["n_points"] >= lo) & (parts["n_points"] < hi)]
        rows.append({"bin": label, "count": len(in_bin), "mean_hnorm": in_bin["hnorm"].mean()})
    wholes = records[~records["is_part"]]
    rows.append({"bin": WHOLE_BIN, "count": len(wholes), "mean_hnorm": wholes["hnorm"].mean()})
    return pd.DataFrame(rows)


def distance_matrix(state: ModelState, records: pd.DataFrame, ids: Sequence[str]) -> pd.DataFrame:
    """Pairwise geodesic distances between the whole-object records of ids"""
    wholes = records[~records["is_part"]].set_index("id")
    missing = [i for i in ids if i not in wholes.index]
    if missing:
        raise DataError(f"unknown ids for the distance matrix: {missing}")
    z = wholes.loc[list(ids), [c for c in wholes.columns if c.startswith("z")]].to_numpy()
    with no_grad():
        d = state.manifold.dist(z[:, None, :], z[None, :, :]).data
    return pd.DataFrame(d, index=list(ids), columns=list(ids))


@dataclass
class EmbeddingExport:
    records: pd.DataFrame
    bins: pd.DataFrame
    distances: Optional[pd.DataFrame] = None


class ExperimentService:
    """Runs evaluations, exports and sweeps on top of the trainer"""

    def __init__(self, output_root: Union[str, Path]):
        self.output_root = Path(output_root)

    def evaluate(
        self,
        state: ModelState,
        clouds: Sequence[PointCloud],
        modes: Sequence[str] = ("full",),
        seed: int = 0,
        out_file: Optional[Union[str, Path]] = None,
    ) -> pd.DataFrame:
        table = pd.concat([evaluate_mode(state, clouds, m, seed) for m in modes], ignore_index=True)
        if out_file is not None:
            try:
                table.to_csv(out_file, index=False)
            except OSError as e:
                raise DataError(f"cannot write evaluation table to {out_file}: {e}")
        return table

    def export_embeddings(
        self,
        state: ModelState,
        clouds: Sequence[PointCloud],
        out_dir: Union[str, Path],
        parts_per_cloud: int = 1,
        sampling: Optional[PartSampling] = None,
        distance_ids: Optional[Sequence[str]] = None,
        seed: int = 0,
    ) -> EmbeddingExport:
        """
        Write embeddings.csv, hnorm_bins.csv and optionally distances.csv

        Args:
            parts_per_cloud: kNN parts sampled per object, sizes drawn from sampling
            distance_ids: whole-object ids for the pairwise distance matrix
        """
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise DataError(f"cannot create output directory {out_dir}: {e}")
        records = embedding_records(state, clouds, parts_per_cloud, sampling, seed)
        bins = hnorm_bins(records)
        distances = distance_matrix(state, records, distance_ids) if distance_ids else None
        try:
            records.to_csv(out_dir / "embeddings.csv", index=False, float_format="%.17g")
            bins.to_csv(out_dir / "hnorm_bins.csv", index=False)
            if distances is not None:
                distances.to_csv(out_dir / "distances.csv", float_format="%.17g")
        except OSError as e:
            raise DataError(f"cannot write embeddings to {out_dir}: {e}")
        logger.info("Exported embeddings", extra={"records": len(records), "out_dir": str(out_dir)})
        return EmbeddingExport(records, bins, distances)

    def sweep_variants(self, cfg: RunConfig, axis: str, values: Optional[Sequence] = None) -> List[Tuple[Dict, RunConfig]]:
        """(labels, config) for every point of the axis; dim points expand to four model variants"""
        if axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis '{axis}'; expected one of {list(SWEEP_AXES)}")
        values = list(values) if values else SWEEP_AXES[axis]
        unregularized = cfg.weights.model_copy(update={"alpha": 0.0, "beta": 0.0})
        variants = []
        for value in values:
            if axis == "curvature":
                variants.append(({"value": value, "variant": "hycore"}, cfg.model_copy(update={"curvature": float(value)})))
            elif axis == "ablation":
                update = {
                    "ce_only": {"alpha": 0.0, "beta": 0.0},
                    "hier": {"alpha": 0.0},
                    "contr": {"beta": 0.0},
                    "full": {},
                }
                if value not in update:
                    raise ConfigError(f"unknown ablation '{value}'")
                weights = cfg.weights.model_copy(update=update[value])
                variants.append(({"value": value, "variant": value}, cfg.model_copy(update={"weights": weights})))
            else:
                dims = cfg.dims.model_copy(update={"embed_dim": int(value)})
                for variant, euclidean, weights in (
                    ("flat_ce", True, unregularized),
                    ("eucore", True, cfg.weights),
                    ("hyp_ce", False, unregularized),
                    ("hycore", False, cfg.weights),
                ):
                    variants.append((
                        {"value": int(value), "variant": variant},
                        cfg.model_copy(update={"dims": dims, "euclidean_mode": euclidean, "weights": weights}),
                    ))
        return variants

    def run_sweep(
        self,
        cfg: RunConfig,
        axis: str,
        seeds: Sequence[int] = (0, 1, 2),
        values: Optional[Sequence] = None,
    ) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """Train every variant for every seed; write runs.csv and summary.csv under output_root/axis"""
        variants = self.sweep_variants(cfg, axis, values)
        train, test, class_names = load_splits(cfg.dataset, cfg.data_dir)
        sweep_dir = self.output_root / f"sweep_{axis}"
        rows = []
        for labels, variant_cfg in variants:
            for seed in seeds:
                run_dir = sweep_dir / f"{labels['variant']}_{labels['value']}" / f"seed{seed}"
                run_cfg = variant_cfg.model_copy(update={"seed": int(seed), "output_dir": run_dir})
                logger.info("Sweep run", extra={"axis": axis, "seed": seed, **labels})
                result = HyCoReTrainer(run_cfg, train, test, class_names).fit(run_dir)
                row = {"axis": axis, **labels, "seed": seed, "best_epoch": result.best_epoch}
                final = result.metrics.iloc[-1]
                row.update({"test_oa": result.best_test_oa, "final_test_oa": final["test_oa"],
                            "final_test_aa": final["test_aa"]})
                for mode in ROBUSTNESS_MODES:
                    try:
                        oa = float(evaluate_mode(result.best_state, test, mode, seed=seed)["oa"].iloc[0])
                    except DataError as e:
                        logger.warning("Skipping robustness mode", extra={"mode": mode, "reason": str(e)})
                        oa = float("nan")
                    row[f"oa_{mode.replace(':', '')}"] = oa
                records = embedding_records(result.best_state, test, 1, run_cfg.sampling, seed)
                for _, b in hnorm_bins(records).iterrows():
                    row[f"hnorm_{b['bin']}"] = b["mean_hnorm"]
                rows.append(row)

        runs = pd.DataFrame(rows)
        metric_cols = [c for c in runs.columns if c not in ("axis", "value", "variant", "seed", "best_epoch")]
        summary = runs.groupby(["axis", "value", "variant"], sort=False)[metric_cols].agg(["mean", "std"])
        summary.columns = [f"{col}_{stat}" for col, stat in summary.columns]
        summary = summary.reset_index()
        sweep_dir.mkdir(parents=True, exist_ok=True)
        runs.to_csv(sweep_dir / "runs.csv", index=False)
        summary.to_csv(sweep_dir / "summary.csv", index=False)
        return runs, summary
