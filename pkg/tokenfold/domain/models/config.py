from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, FilePath, field_validator, model_validator


class TokenizerConfig(BaseModel):
    window: int = Field(2, ge=1)
    K: int = Field(256, ge=2)
    d: int = Field(128, ge=1)
    pool: int = Field(1, ge=1)
    max_iter: int = Field(200, ge=1)
    tol: float = Field(1e-6, gt=0)


class ScheduleConfig(BaseModel):
    T: int = Field(200, ge=2)
    kind: Literal["linear", "cosine"] = "cosine"
    sigma_kind: Literal["sqrt_one_minus_alpha_bar", "linear"] = "sqrt_one_minus_alpha_bar"
    igso3_sigma_min: float = Field(0.05, gt=0)
    igso3_sigma_max: float = Field(4.0, gt=0)
    igso3_num_sigma: int = Field(64, ge=1)
    igso3_omega_resolution: int = Field(4096, ge=2)


class IPAConfig(BaseModel):
    n_heads: int = Field(4, ge=1)
    d_head: int = Field(16, ge=1)
    n_query_points: int = Field(4, ge=1)
    n_value_points: int = Field(4, ge=1)
    epsilon_cache: float = Field(0.05, ge=0)
    distance_weight: float = Field(1.0, ge=0)


class DiTConfig(BaseModel):
    n_layers: int = Field(4, ge=1)
    d_model: int = Field(128, ge=1)
    n_heads: int = Field(4, ge=1)
    d_ff: int = Field(512, ge=1)
    n_classes: int = Field(3, ge=1)
    T: int = Field(200, ge=2)
    dropout_prob_condition: float = Field(0.1, ge=0, le=1)
    max_len: int = Field(512, ge=1)
    positional: bool = True
    use_ipa: bool = True

    @model_validator(mode="after")
    def _heads_divide_width(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        return self


class DecoderConfig(BaseModel):
    hidden: int = Field(256, ge=1)
    windowed: bool = False
    steps: int = Field(2000, ge=0)
    batch_size: int = Field(512, ge=1)
    lr: float = Field(1e-3, gt=0)
    weight_decay: float = Field(0.01, ge=0)
    finetune_embeddings: bool = True
    rot_weight: float = Field(1.0, ge=0)
    trans_weight: float = Field(1.0, ge=0)
    log_every: int = Field(100, ge=1)


class TrainingConfig(BaseModel):
    steps: int = Field(3000, ge=0)
    batch_size: int = Field(16, ge=1)
    lr: float = Field(1e-4, gt=0)
    warmup_steps: int = Field(5000, ge=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    weight_decay: float = Field(0.01, ge=0)
    log_every: int = Field(50, ge=1)
    grad_clip: float = Field(1.0, gt=0)

    def effective_warmup(self) -> int:
        """Warmup scaled to the step budget: at most a tenth of the run."""
        return min(self.warmup_steps, max(1, self.steps // 10))


class SamplerConfig(BaseModel):
    T: int = Field(200, ge=2)
    guidance_w: float = Field(2.0, ge=0)
    eps_cache: float = Field(0.05, ge=0)
    gate_mode: Literal["per-token", "global"] = "per-token"
    gate_start_fraction: float = Field(0.3, ge=0, le=1)
    rho_gate: float = Field(0.05, ge=0, le=1)
    seed: int
    length: int = Field(64, ge=2)
    class_id: Optional[int] = Field(None, ge=0)
    update_rule: Literal["ancestral", "ddim"] = "ancestral"
    frame_refresh: int = Field(10, ge=1)
    keep_latents: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)


class BenchConfig(BaseModel):
    lengths: List[int] = [64, 128, 256]
    eps_sweep: List[float] = [0.0, 0.005, 0.01, 0.02, 0.05, 0.1]
    seeds: List[int] = list(range(10))
    deviation_budget: float = Field(1.0, gt=0)
    guidance_sweep: List[float] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0]
    dimension_sweep: List[int] = [16, 32, 64, 128]
    granularity_sweep: List[int] = [1, 2, 4]
    ablation_samples: int = Field(10, ge=1)

    @field_validator("eps_sweep")
    @classmethod
    def _sorted_eps(cls, v: List[float]) -> List[float]:
        if any(e < 0 for e in v):
            raise ValueError("eps values must be nonnegative")
        return sorted(v)


class CorpusConfig(BaseModel):
    n_per_class: int = Field(40, ge=1)
    min_length: int = Field(48, ge=8)
    max_length: int = Field(96, ge=8)
    jitter: float = Field(0.05, ge=0)
    classes: List[int] = [0, 1, 2]
    pdb_files: List[FilePath] = []

    @model_validator(mode="after")
    def _length_range(self):
        if self.min_length > self.max_length:
            raise ValueError("min_length must not exceed max_length")
        return self


class PathsConfig(BaseModel):
    data_dir: Path = Path("data")
    model_file: str = "model.pt"
    output_dir: str = "outputs"
    metrics_log: str = "metrics.log"

    @property
    def model_path(self) -> Path:
        return self.data_dir / self.model_file

    @property
    def outputs(self) -> Path:
        return self.data_dir / self.output_dir

    @property
    def cache_dir(self) -> Path:
        return self.data_dir / "cache"


class RunConfig(BaseModel):
    seed: int
    tokenizer: TokenizerConfig = TokenizerConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    dit: DiTConfig = DiTConfig()
    ipa: IPAConfig = IPAConfig()
    decoder: DecoderConfig = DecoderConfig()
    training: TrainingConfig = TrainingConfig()
    sampler: SamplerConfig
    bench: BenchConfig = BenchConfig()
    corpus: CorpusConfig = CorpusConfig()
    paths: PathsConfig = PathsConfig()

    @model_validator(mode="after")
    def _steps_agree(self):
        if not (self.schedule.T == self.dit.T == self.sampler.T):
            raise ValueError(
                f"schedule.T={self.schedule.T}, dit.T={self.dit.T} and sampler.T={self.sampler.T} must match"
            )
        if self.sampler.class_id is not None and self.sampler.class_id >= self.dit.n_classes:
            raise ValueError(f"sampler.class_id must be < dit.n_classes={self.dit.n_classes}")
        return self
