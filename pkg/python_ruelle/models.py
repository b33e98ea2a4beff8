import math
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


class SimulationConfig(BaseModel):
    dt: float = Field(gt=0)
    n_steps: int = Field(ge=0)
    transient_steps: int = Field(default=0, ge=0)
    stride: int = Field(default=1, ge=1)
    seed: int = 0
    x0: List[float]

    @field_validator("x0")
    @classmethod
    def finite_x0(cls, value: List[float]) -> List[float]:
        if not value or not all(math.isfinite(v) for v in value):
            raise ValueError("x0 must be a non-empty finite vector")
        return value

    @property
    def sample_dt(self) -> float:
        return self.dt * self.stride


class OuSpec(BaseModel):
    a: float = Field(gt=0)
    s: float = Field(default=1.0, ge=0)
    omega: Optional[float] = None


class ModelSection(BaseModel):
    name: str
    params: Dict[str, float] = {}


class SimulationSection(BaseModel):
    dt: float = Field(gt=0)
    total_time: float = Field(gt=0)
    transient_time: float = Field(default=0.0, ge=0)
    stride: int = Field(default=1, ge=1)
    seed: int = 0
    x0: Optional[List[float]] = None

    def steps(self, duration: float) -> int:
        n = duration / self.dt
        if abs(n - round(n)) > 1e-6 * max(1.0, n):
            raise ValueError(f"Duration {duration} is not a multiple of dt={self.dt}")
        return int(round(n))

    def to_config(self, x0: List[float]) -> SimulationConfig:
        return SimulationConfig(
            dt=self.dt,
            n_steps=self.steps(self.total_time),
            transient_steps=self.steps(self.transient_time),
            stride=self.stride,
            seed=self.seed,
            x0=self.x0 if self.x0 is not None else x0,
        )


class PartitionSection(BaseModel):
    lows: List[float]
    highs: List[float]
    cells: List[int]


class EigenSection(BaseModel):
    k: int = Field(default=20, ge=1)
    dense_threshold: int = Field(default=2000, ge=0)
    tol: float = Field(default=1e-10, gt=0)
    max_iter: Optional[int] = None
    ncv: Optional[int] = None
    seed: int = 0


class ReconstructionSection(BaseModel):
    columns: List[int] = [0]
    n_lags: int = Field(default=100, ge=1)
    segment_len: int = Field(default=4096, ge=2)
    overlap: float = Field(default=0.5, ge=0, lt=1)
    angular: bool = True


class PipelineConfig(BaseModel):
    model: ModelSection
    simulation: SimulationSection
    projection: List[int]
    partition: PartitionSection
    lag_time: float = Field(gt=0)
    min_count: int = Field(default=1, ge=0)
    eigen: EigenSection = EigenSection()
    reconstruction: ReconstructionSection = ReconstructionSection()
    output_dir: str = "runs"
    write_trajectory: bool = False
    slow_manifold_check: bool = False
    conditional_check: bool = False
    extra_coordinates: List[int] = []
    threads: Optional[int] = None

    @model_validator(mode="after")
    def lag_is_multiple_of_sample_dt(self) -> "PipelineConfig":
        self.lag_steps
        return self

    @property
    def sample_dt(self) -> float:
        return self.simulation.dt * self.simulation.stride

    @property
    def lag_steps(self) -> int:
        ratio = self.lag_time / self.sample_dt
        if round(ratio) < 1 or abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(
                f"lag_time={self.lag_time} is not a positive integer multiple of "
                f"sample_dt={self.sample_dt}"
            )
        return int(round(ratio))
