"""Pydantic models for edit, training and bench configuration."""

from pathlib import Path

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from src.core.domain_models import EditMethod, EditTask

# Defaults of the reference 3D editing setup
DEFAULT_T = 50
DEFAULT_S_SRC = 3.5
DEFAULT_S_TAR = 7.5
DEFAULT_N_MIN = 1
DEFAULT_N_MAX = 41
DEFAULT_N_AVG = 1

MAX_SEED = 2**64 - 1

ALL_METHODS: tuple[EditMethod, ...] = (
    EditMethod.DIRECT,
    EditMethod.INVERSION,
    EditMethod.FLOWEDIT,
    EditMethod.ANCHORFLOW,
)


class EditConfig(BaseModel):
    """Settings of one sampler run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    T: int = Field(default=DEFAULT_T, ge=1, description="Number of Euler steps")
    s_src: float = Field(default=DEFAULT_S_SRC, ge=0.0, description="Source guidance scale")
    s_tar: float = Field(default=DEFAULT_S_TAR, ge=0.0, description="Target guidance scale")
    n_min: int = Field(default=DEFAULT_N_MIN, ge=1, description="Last active grid index")
    n_max: int = Field(default=DEFAULT_N_MAX, ge=1, description="First active grid index")
    n_avg: int = Field(default=DEFAULT_N_AVG, ge=1, description="Directions averaged per step")
    seed: int = Field(default=0, ge=0, le=MAX_SEED)
    method: EditMethod = EditMethod.ANCHORFLOW
    squared_factor: bool = Field(
        default=False, description="Apply the (2 - t) factor twice in the AnchorFlow update"
    )
    fixed_anchor: bool = Field(
        default=False, description="Reuse the noise of the first active step at every step"
    )

    @model_validator(mode="after")
    def validate_window(self) -> "EditConfig":
        """Ensure 1 <= n_min <= n_max <= T."""
        if self.n_max > self.T:
            raise ValueError(f"n_max={self.n_max} exceeds T={self.T}")
        if self.n_min > self.n_max:
            raise ValueError(f"n_min={self.n_min} exceeds n_max={self.n_max}")
        return self

    @property
    def active_steps(self) -> list[int]:
        """Grid indices of the active window in execution order."""
        return list(range(self.n_max, self.n_min - 1, -1))


class TrainConfig(BaseModel):
    """Conditional flow-matching training settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    batch_size: int = Field(default=256, gt=0)
    steps: int = Field(default=20_000, ge=0, description="Optimizer steps; 0 keeps the init")
    learning_rate: float = Field(default=1e-3, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    hidden_width: int = Field(default=64, gt=0)
    seed: int = Field(default=0, ge=0, le=MAX_SEED)
    divergence_threshold: float = Field(default=1e6, gt=0.0)


class GridPoint(BaseModel):
    """One cell coordinate of a bench sweep."""

    model_config = ConfigDict(frozen=True)

    n_max: int
    s_tar: float
    n_avg: int


class BenchSpec(BaseModel):
    """Resolved bench configuration.

    ``grid`` lists (n_max, s_tar) pairs and ``n_avg_grid`` the n_avg values;
    the sweep is their product. Either falls back to the scalar setting
    when absent.
    """

    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    name: str = Field(default="bench", min_length=1)
    task: EditTask
    task_label: str = Field(default="paired-two-mode", description="Preset, file or 'inline'")
    methods: tuple[EditMethod, ...] = ALL_METHODS
    T: int = Field(default=DEFAULT_T, ge=1)
    s_src: float = Field(default=DEFAULT_S_SRC, ge=0.0)
    s_tar: float = Field(default=DEFAULT_S_TAR, ge=0.0)
    n_min: int = Field(default=DEFAULT_N_MIN, ge=1)
    n_max: int = Field(default=DEFAULT_N_MAX, ge=1)
    n_avg: int = Field(default=DEFAULT_N_AVG, ge=1)
    grid: tuple[tuple[int, float], ...] | None = None
    n_avg_grid: tuple[int, ...] | None = None
    samples: int = Field(default=200, ge=1)
    reference_samples: int = Field(default=1000, ge=1)
    seed: int = Field(default=0, ge=0, le=MAX_SEED)
    squared_factor: bool = False
    timing: bool = Field(default=False, description="Record runtime_us (breaks byte stability)")
    field: str = Field(default="oracle", description="'oracle' or a checkpoint path")
    output_dir: Path | None = None
    plots: bool = True

    @field_validator("methods")
    @classmethod
    def validate_methods(cls, v: tuple[EditMethod, ...]) -> tuple[EditMethod, ...]:
        if not v:
            raise ValueError("at least one method is required")
        if len(set(v)) != len(v):
            raise ValueError("methods must not repeat")
        return v

    @field_validator("grid")
    @classmethod
    def validate_grid(
        cls, v: tuple[tuple[int, float], ...] | None
    ) -> tuple[tuple[int, float], ...] | None:
        if v is not None and not v:
            raise ValueError("grid must list at least one [n_max, s_tar] pair")
        return v

    @model_validator(mode="after")
    def validate_grid_points(self) -> "BenchSpec":
        """Every sweep point must form a valid EditConfig."""
        for point in self.grid_points():
            try:
                self.edit_config(EditMethod.ANCHORFLOW, point)
            except ValidationError as e:
                reason = e.errors()[0]["msg"].removeprefix("Value error, ")
                raise ValueError(
                    f"grid point (n_max={point.n_max}, s_tar={point.s_tar}, "
                    f"n_avg={point.n_avg}): {reason}"
                ) from e
        return self

    def grid_points(self) -> list[GridPoint]:
        pairs = self.grid if self.grid is not None else ((self.n_max, self.s_tar),)
        n_avgs = self.n_avg_grid if self.n_avg_grid is not None else (self.n_avg,)
        return [
            GridPoint(n_max=n_max, s_tar=s_tar, n_avg=n_avg)
            for n_max, s_tar in pairs
            for n_avg in n_avgs
        ]

    def edit_config(self, method: EditMethod, point: GridPoint) -> EditConfig:
        return EditConfig(
            T=self.T,
            s_src=self.s_src,
            s_tar=point.s_tar,
            n_min=self.n_min,
            n_max=point.n_max,
            n_avg=point.n_avg,
            seed=self.seed,
            method=method,
            squared_factor=self.squared_factor,
        )

    @property
    def uses_oracle(self) -> bool:
        return self.field == "oracle"
