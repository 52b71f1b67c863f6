"""
Process settings and the run configuration
Environment variables use the HYCORE_ prefix
"""
import copy
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.models.hycore import LossWeights, PartSampling
from src.models.nn import ModelDims
from src.models.optim import OptimConfig
from src.services.data import DatasetSpec


class Settings(BaseSettings):
    """Process-wide defaults read from the environment"""
    model_config = SettingsConfigDict(env_prefix="HYCORE_", env_file=".env", extra="ignore")

    output_root: Path = Path("runs")
    log_level: str = "INFO"
    log_format: Literal["json", "text"] = "json"


@lru_cache()
def get_settings() -> Settings:
    return Settings()


# Partial RunConfig dicts layered under a config file and command-line flags.
# "desk" keeps the default sampling ranges and loss margins but narrows the encoder,
# shortens training, stretches every shape instance and raises alpha/beta so the
# regularizers are not swamped by cross-entropy on a 1600-cloud training set.
PRESETS: Dict[str, Dict[str, Any]] = {
    "default": {},
    "desk": {
        "dataset": {"noise_sigma": 0.02, "scale_jitter": 0.3},
        "dims": {"hidden1": 16, "hidden2": 32, "feature_dim": 64, "embed_dim": 16},
        "weights": {"alpha": 0.1, "beta": 0.1},
        "optim": {"epochs": 15},
    },
}


def merge_overrides(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Nested dict update; override wins, base is not modified"""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_overrides(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class RunConfig(BaseModel):
    """Everything a training run needs; snapshotted into the run directory"""
    model_config = ConfigDict(extra="forbid")

    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    data_dir: Optional[Path] = None
    curvature: float = Field(default=1.0, gt=0)
    euclidean_mode: bool = False
    dims: ModelDims = Field(default_factory=ModelDims)
    weights: LossWeights = Field(default_factory=LossWeights)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    sampling: PartSampling = Field(default_factory=PartSampling)
    crop_augment: bool = False
    output_dir: Optional[Path] = None
    seed: int = 0

    @model_validator(mode="after")
    def _check_sizes(self) -> "RunConfig":
        if self.data_dir is None and self.dataset.points_per_cloud < self.sampling.whole_min:
            raise ValueError(
                f"points_per_cloud ({self.dataset.points_per_cloud}) is below "
                f"whole_min ({self.sampling.whole_min})"
            )
        if self.data_dir is None and self.sampling.part_max > self.dataset.points_per_cloud:
            raise ValueError(
                f"part_max ({self.sampling.part_max}) exceeds points_per_cloud ({self.dataset.points_per_cloud})"
            )
        return self

    @classmethod
    def from_preset(cls, name: str, overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset '{name}'; expected one of {list(PRESETS)}")
        return cls.model_validate(merge_overrides(PRESETS[name], overrides or {}))

    def resolved_output_dir(self) -> Path:
        if self.output_dir is not None:
            return self.output_dir
        return get_settings().output_root / f"run_seed{self.seed}"
