"""Trainer loop, metrics and checkpoints"""
import json

import joblib
import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from src.config import PRESETS, RunConfig, get_settings
from src.exceptions import CheckpointError, NumericalError
from src.models import train as train_module
from src.models.hycore import LossBreakdown
from src.models.nn import init_state, predict
from src.models.train import (
    BEST_CHECKPOINT,
    CONFIG_FILE,
    LAST_CHECKPOINT,
    MANIFEST_FILE,
    METRIC_COLUMNS,
    METRICS_FILE,
    HyCoReTrainer,
    average_accuracy,
    check_compatible,
    load_checkpoint,
    overall_accuracy,
    save_checkpoint,
    train_from_config,
)


def test_accuracies():
    predicted = np.array([0, 0, 1, 1])
    labels = np.array([0, 1, 1, 1])
    assert overall_accuracy(predicted, labels) == pytest.approx(0.75)
    assert average_accuracy(predicted, labels) == pytest.approx((1.0 + 2.0 / 3.0) / 2.0)
    assert np.isnan(overall_accuracy(np.array([]), np.array([])))


class TestFit:

    def test_run_directory_layout(self, tiny_config):
        result = train_from_config(tiny_config)
        run_dir = tiny_config.output_dir
        for name in (CONFIG_FILE, MANIFEST_FILE, METRICS_FILE, BEST_CHECKPOINT, LAST_CHECKPOINT):
            assert (run_dir / name).exists(), name
        metrics = pd.read_csv(run_dir / METRICS_FILE)
        assert list(metrics.columns) == METRIC_COLUMNS
        assert len(metrics) == tiny_config.optim.epochs
        assert result.run_dir == run_dir
        manifest = json.loads((run_dir / MANIFEST_FILE).read_text())
        assert manifest["seed"] == 7
        assert manifest["best_epoch"] == result.best_epoch
        assert RunConfig.model_validate_json((run_dir / CONFIG_FILE).read_text()) == tiny_config

    def test_metrics_are_finite_and_bounded(self, tiny_config):
        metrics = train_from_config(tiny_config).metrics
        assert np.all(np.isfinite(metrics[["ce", "r_hier", "r_contr", "total"]].to_numpy()))
        for col in ("train_oa", "train_aa", "test_oa", "test_aa"):
            assert metrics[col].between(0.0, 1.0).all()
        assert metrics["lr"].iloc[0] == pytest.approx(tiny_config.optim.lr)

    def test_same_seed_same_run(self, tiny_config, tmp_path):
        first = train_from_config(tiny_config)
        again_cfg = tiny_config.model_copy(update={"output_dir": tmp_path / "again"})
        second = train_from_config(again_cfg)
        pd.testing.assert_frame_equal(first.metrics, second.metrics)
        for name in (METRICS_FILE, BEST_CHECKPOINT, LAST_CHECKPOINT):
            assert (tiny_config.output_dir / name).read_bytes() == (again_cfg.output_dir / name).read_bytes()
        a = load_checkpoint(tiny_config.output_dir / LAST_CHECKPOINT).to_arrays()
        b = load_checkpoint(again_cfg.output_dir / LAST_CHECKPOINT).to_arrays()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_best_checkpoint_matches_best_state(self, tiny_config):
        result = train_from_config(tiny_config)
        saved = load_checkpoint(tiny_config.output_dir / BEST_CHECKPOINT).to_arrays()
        for name, value in result.best_state.to_arrays().items():
            np.testing.assert_array_equal(saved[name], value)
        assert result.best_test_oa == pytest.approx(result.metrics["test_oa"].max())

    def test_final_train_accuracy_reproducible_from_checkpoint(self, tiny_config, tiny_dataset):
        result = train_from_config(tiny_config)
        state = load_checkpoint(tiny_config.output_dir / LAST_CHECKPOINT)
        train, _, _ = tiny_dataset
        labels = np.array([c.label for c in train])
        oa = overall_accuracy(predict(train, state), labels)
        assert oa == pytest.approx(result.metrics["train_oa"].iloc[-1], abs=1e-12)

    def test_without_run_dir(self, tiny_config, tiny_dataset):
        train, test, names = tiny_dataset
        result = HyCoReTrainer(tiny_config, train, test, names).fit()
        assert result.run_dir is None
        assert not tiny_config.output_dir.exists()

    def test_ce_only_still_reports_regularizers(self, tiny_config):
        cfg = tiny_config.model_copy(update={"weights": tiny_config.weights.model_copy(update={"alpha": 0.0, "beta": 0.0})})
        metrics = train_from_config(cfg).metrics
        assert (metrics["r_hier"] > 0).all()
        np.testing.assert_allclose(metrics["total"], metrics["ce"])

    def test_euclidean_mode_trains(self, tiny_config):
        cfg = tiny_config.model_copy(update={"euclidean_mode": True})
        state = train_from_config(cfg).state
        assert state.euclidean_mode

    def test_non_finite_loss(self, tiny_config, tiny_dataset, monkeypatch):
        real = train_module.total_loss

        def broken(*args, **kwargs):
            loss, _ = real(*args, **kwargs)
            return loss, LossBreakdown(ce=float("nan"), r_hier=0.0, r_contr=0.0, total=float("nan"))

        monkeypatch.setattr(train_module, "total_loss", broken)
        train, test, names = tiny_dataset
        with pytest.raises(NumericalError):
            HyCoReTrainer(tiny_config, train, test, names).train_epoch(0)


class TestCheckpoint:

    def test_roundtrip(self, tiny_state, tmp_path):
        path = tmp_path / "ckpt.joblib"
        save_checkpoint(tiny_state, path, epoch=3)
        loaded = load_checkpoint(path)
        assert loaded.class_names == tiny_state.class_names
        assert loaded.curvature.c == tiny_state.curvature.c
        assert loaded.dims == tiny_state.dims
        for name, value in tiny_state.to_arrays().items():
            np.testing.assert_array_equal(loaded.to_arrays()[name], value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nope.joblib")

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "bad.joblib"
        path.write_text("not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_foreign_payload(self, tmp_path):
        path = tmp_path / "other.joblib"
        joblib.dump({"model": "forest"}, path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_future_format(self, tiny_state, tmp_path):
        path = tmp_path / "ckpt.joblib"
        save_checkpoint(tiny_state, path)
        payload = joblib.load(path)
        payload["format_version"] = 99
        joblib.dump(payload, path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_class_count_mismatch(self, tiny_dims):
        state = init_state(tiny_dims, num_classes=4)
        with pytest.raises(CheckpointError):
            check_compatible(state, ["sphere", "cube"])


class TestRunConfig:

    def test_rejects_clouds_smaller_than_wholes(self, tiny_config):
        raw = tiny_config.model_dump()
        raw["sampling"]["whole_min"] = 100
        raw["sampling"]["whole_max"] = 120
        with pytest.raises(ValidationError):
            RunConfig.model_validate(raw)

    def test_rejects_unknown_fields(self):
        with pytest.raises(ValidationError):
            RunConfig.model_validate({"learning_rate": 0.1})

    def test_default_output_dir_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HYCORE_OUTPUT_ROOT", str(tmp_path / "root"))
        get_settings.cache_clear()
        try:
            assert RunConfig(seed=4).resolved_output_dir() == tmp_path / "root" / "run_seed4"
        finally:
            get_settings.cache_clear()

    def test_desk_preset(self):
        cfg = RunConfig.from_preset("desk")
        assert (cfg.dims.hidden1, cfg.dims.hidden2, cfg.dims.feature_dim, cfg.dims.embed_dim) == (16, 32, 64, 16)
        assert cfg.weights.alpha == cfg.weights.beta == 0.1
        assert (cfg.weights.gamma, cfg.weights.delta) == (1000.0, 4.0)
        assert cfg.dataset.points_per_cloud == 1024
        assert cfg.sampling == RunConfig().sampling

    def test_preset_overrides_merge_per_field(self):
        cfg = RunConfig.from_preset("desk", {"dims": {"embed_dim": 8}, "seed": 3})
        assert cfg.dims.embed_dim == 8
        assert cfg.dims.feature_dim == 64
        assert cfg.seed == 3
        assert RunConfig.from_preset("default") == RunConfig()
        assert PRESETS["desk"]["dims"]["embed_dim"] == 16

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            RunConfig.from_preset("cluster")
