"""Pipeline configuration: one flat, validated, JSON-serializable record."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .consistency import ConsistencyParams
from .edges import EdgeConfig
from .errors import IoFailure
from .features import DescriptorConfig
from .geometry import PerturbationConfig


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # frame
    height: int = Field(480, ge=32)
    width: int = Field(640, ge=32)

    # patch sampling and attention
    n_patches: int = Field(128, ge=4)
    coarse_layers: int = Field(4, ge=0)
    fine_layers: int = Field(2, ge=0)
    attention: bool = False
    attention_weights: Optional[str] = None  # weight file; seeded weights when unset
    fusion_weights: Optional[str] = None  # weight file; pass-through fusion when unset

    # coarse matching
    matching: Literal["OT", "DS"] = "OT"
    sinkhorn_iters: int = Field(100, ge=1)
    bin_score: float = 1.0
    temperature: float = Field(0.02, gt=0)
    theta_c: float = Field(0.2, gt=0, lt=1)

    # spatial consistency
    sigma_d: float = Field(0.4, gt=0)
    sigma_alpha: float = Field(1.0, gt=0)
    lambda_c: float = Field(0.5, ge=0, le=1)
    k_nn: int = Field(3, ge=1)
    coarse_weighting: Literal["consistency", "score", "uniform"] = "consistency"

    # fine matching
    fine_window: int = Field(8, ge=2)
    fine_temperature: float = Field(0.01, gt=0)

    # descriptors
    coarse_window: int = Field(48, ge=4)
    coarse_context: tuple[int, ...] = (128,)
    coarse_dim: int = Field(64, ge=4)
    coarse_sigma: float = Field(1.0, ge=0)
    fine_desc_window: int = Field(16, ge=2)
    fine_dim: int = Field(32, ge=4)
    fine_sigma: float = Field(2.0, ge=0)
    fine_context: tuple[int, ...] = (48,)

    # source edge translation: rendered edge maps are thresholded, photos go through the detector
    source_mode: Literal["edge_map", "gray"] = "edge_map"
    edge_low: float = Field(0.1, gt=0, lt=1)
    edge_high: float = Field(0.2, gt=0, le=1)
    edge_sigma: float = Field(1.0, ge=0)

    # losses
    loss_weight: float = Field(10.0, ge=0)

    # synthetic data
    seed: int = Field(0, ge=0)
    scale_min: float = Field(0.9, gt=0)
    scale_max: float = Field(1.1, gt=0)
    rotation_deg: float = Field(15.0, ge=0, le=180)
    corner_px: float = Field(16.0, ge=0)
    noise_edges: float = Field(0.0, ge=0, lt=1)
    blur_sigma: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if self.scale_min > self.scale_max:
            raise ValueError("scale_min must not exceed scale_max")
        if self.edge_low > self.edge_high:
            raise ValueError("edge_low must not exceed edge_high")
        if self.fine_window % 2:
            raise ValueError("fine_window must be even")
        if self.coarse_dim % 4 or self.fine_dim % 4:
            raise ValueError("descriptor dims must be multiples of 4")
        if self.height % 8 or self.width % 8:
            raise ValueError("frame sides must be multiples of the coarse stride 8")
        # building the descriptor configs runs their own checks
        self.coarse_descriptor()
        self.fine_descriptor()
        return self

    def coarse_descriptor(self) -> DescriptorConfig:
        return DescriptorConfig(self.coarse_window, 2, self.coarse_dim, self.coarse_sigma,
                                seed=self.seed, context=self.coarse_context)

    def fine_descriptor(self) -> DescriptorConfig:
        return DescriptorConfig(self.fine_desc_window, 1, self.fine_dim, self.fine_sigma,
                                seed=self.seed + 1, context=self.fine_context)

    def consistency(self) -> ConsistencyParams:
        return ConsistencyParams(self.sigma_d, self.sigma_alpha, self.lambda_c, self.k_nn)

    def edges(self) -> EdgeConfig:
        return EdgeConfig(self.edge_low, self.edge_high, self.edge_sigma)

    def perturbation(self) -> PerturbationConfig:
        return PerturbationConfig(self.width, self.height, (self.scale_min, self.scale_max),
                                  (-self.rotation_deg, self.rotation_deg), self.corner_px)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=1, sort_keys=True) + "\n"


def load_config(path: Optional[str | Path] = None, **overrides) -> PipelineConfig:
    """Read a flat JSON config (missing keys take defaults); unknown keys are rejected."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
    data.update(overrides)
    return PipelineConfig(**data)


__all__ = ["PipelineConfig", "load_config", "ValidationError"]
