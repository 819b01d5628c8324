"""Pydantic schemas for configuration, manifests and reports."""
from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Optional, List, Dict, Literal, Any
from datetime import datetime

from core.config import config


class RegWeights(BaseModel):
    """Balancing weights of the regularization terms."""
    w_tv: float = Field(1e-9, ge=0)
    w_alpha: float = Field(0.3, ge=0)
    w_l: float = Field(10.0, ge=0)
    w_t: float = Field(1.0, ge=0)

    @field_validator('w_tv', 'w_alpha', 'w_l', 'w_t')
    @classmethod
    def validate_finite(cls, v):
        """Reject infinite weights."""
        if v != v or v in (float('inf'), float('-inf')):
            raise ValueError("weights must be finite")
        return v


class SolverConfig(BaseModel):
    """Solver settings; field names are also the config-file keys."""
    n_frames: int = Field(7, ge=1)
    w_tv: float = Field(1e-9, ge=0)
    w_alpha: float = Field(0.3, ge=0)
    w_l: float = Field(10.0, ge=0)
    w_t: float = Field(1.0, ge=0)
    lr_image: float = Field(0.02, gt=0)
    lr_affine: float = Field(0.01, gt=0)
    iterations_per_scale: List[int] = Field(default_factory=lambda: [50, 100, 150])
    epsilon_init: float = Field(1.0, gt=0, le=1)
    epsilon_halving_period: int = Field(50, ge=1)
    tv_variant: Literal["L0", "L1", "L2"] = "L0"
    seed: int = Field(default_factory=lambda: config.DEFAULT_SEED)
    data_term: Literal["l1", "charbonnier"] = "l1"
    charbonnier_delta: float = Field(1e-3, gt=0)
    init_perturbation: float = Field(0.01, ge=0, lt=0.5)
    affine_step_scale: Literal["support", "pixels", "none"] = "support"

    model_config = {"extra": "forbid"}

    @field_validator('iterations_per_scale', mode='before')
    @classmethod
    def parse_iterations(cls, v):
        """Accept "50,100,150" as written in flat config files."""
        if isinstance(v, str):
            v = [part for part in v.replace(' ', '').split(',') if part]
        return v

    @field_validator('iterations_per_scale')
    @classmethod
    def validate_iterations(cls, v):
        """At least one scale; counts are non-negative."""
        if not v:
            raise ValueError("iterations_per_scale needs at least one entry")
        if any(count < 0 for count in v):
            raise ValueError("iteration counts must be >= 0")
        return v

    @field_validator('n_frames')
    @classmethod
    def validate_odd(cls, v):
        """The reference frame is the temporal midpoint, so N is odd."""
        if v % 2 == 0:
            raise ValueError("n_frames must be odd")
        return v

    @property
    def weights(self) -> RegWeights:
        return RegWeights(w_tv=self.w_tv, w_alpha=self.w_alpha, w_l=self.w_l, w_t=self.w_t)

    @property
    def num_scales(self) -> int:
        return len(self.iterations_per_scale)


class Metrics(BaseModel):
    """Quality of a reconstruction against ground truth; psnr is inf for identical images."""
    psnr: float
    ssim: float


class RunManifest(BaseModel):
    """Record written next to the outputs of every command."""
    command: Literal["extract", "synthesize", "evaluate"]
    config: Optional[SolverConfig] = None
    inputs: Dict[str, Any] = Field(default_factory=dict)
    output_dir: str
    seed: Optional[int] = None
    duration_seconds: float
    final_losses: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    status: Literal["success", "failed"] = "success"


class TruthManifest(BaseModel):
    """Exact generating parameters of a synthesized case."""
    params: List[float]
    n_frames: int
    noise_sigma: float
    seed: int
    motion: str

    @field_validator('params')
    @classmethod
    def validate_six(cls, v):
        """theta11 theta12 theta13 theta21 theta22 theta23."""
        if len(v) != 6:
            raise ValueError("params must hold six entries")
        return v


class FrameMetrics(BaseModel):
    """Per-frame comparison."""
    frame: int
    psnr: float
    ssim: float


class ParamErrors(BaseModel):
    """Affine parameter errors against the truth manifest, in theta order."""
    recovered: List[float]
    truth: List[float]
    absolute: List[float]
    relative: List[Optional[float]]
    max_absolute: float


class MetricsReport(BaseModel):
    """Evaluation report; written as metrics.json."""
    result_dir: str
    truth_dir: str
    n_frames: int
    frames: List[FrameMetrics]
    mean_psnr: float
    mean_ssim: float
    middle: FrameMetrics
    params: Optional[ParamErrors] = None
    generated_at: datetime


class SynthesizeRequest(BaseModel):
    """Body of POST /synthesize."""
    sharp_path: str
    alpha_path: str
    motion: str = "translate 0.06"
    n_frames: int = 7
    noise: float = Field(0.01, ge=0)
    seed: int = Field(default_factory=lambda: config.DEFAULT_SEED)
    run_id: Optional[str] = None


class ExtractRequest(BaseModel):
    """Body of POST /extract."""
    blurred_path: str
    alpha_paths: List[str]
    config: Dict[str, Any] = Field(default_factory=dict)
    run_id: Optional[str] = None

    @model_validator(mode='after')
    def validate_alphas(self):
        """One alpha map per object."""
        if not self.alpha_paths:
            raise ValueError("at least one alpha path is required")
        return self


class EvaluateRequest(BaseModel):
    """Body of POST /evaluate."""
    result_dir: str
    truth_dir: str


class RunSummary(BaseModel):
    """One entry of GET /runs."""
    run_id: str
    commands: List[str]
    status: Optional[str] = None
    duration_seconds: Optional[float] = None
