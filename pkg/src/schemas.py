import builtins
import math
from datetime import datetime
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config import (
    DEFAULT_EVAL_EVERY,
    DEFAULT_FIXED_POINT_BITS,
    DEFAULT_LAMBDA,
    DEFAULT_MIN_POSITIVES,
    DEFAULT_THRESHOLD,
    ClientRole,
    GammaMode,
    GammaWeights,
    InitStrategy,
    Method,
    PropertyKind,
    Selection,
)
from .prolin import OptimizerParams, ProlinDefaults


# -------- Configuration --------
class DatasetSpec(BaseModel):
    """Synthetic Gaussian blobs or an IDX image/label pair."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["synthetic", "idx"] = "synthetic"
    dim: int = Field(default=10, ge=1, description="Feature dimension of the synthetic task")
    separation: float = Field(default=4.0, gt=0.0)
    images_path: Optional[str] = None
    labels_path: Optional[str] = None
    classes: int = Field(default=2, ge=2)

    @model_validator(mode="after")
    def check_paths(self) -> "DatasetSpec":
        if self.kind == "idx" and not (self.images_path and self.labels_path):
            raise ValueError("IDX datasets need images_path and labels_path")
        if self.kind == "synthetic" and self.classes != 2:
            raise ValueError("the synthetic task has exactly two classes")
        return self


class ProlinSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    init: InitStrategy = InitStrategy.WARM
    learning_rate: float = Field(default=ProlinDefaults.LEARNING_RATE, gt=0.0)
    tau_learning_rate: float = Field(default=ProlinDefaults.TAU_LEARNING_RATE, ge=0.0)
    momentum: float = Field(default=ProlinDefaults.MOMENTUM, ge=0.0, lt=1.0)
    max_iters: int = Field(default=ProlinDefaults.MAX_ITERS, ge=1)
    gamma_mode: GammaMode = GammaMode.BALANCED
    gamma1: float = Field(default=1.0, gt=0.0)
    gamma2: float = Field(default=1.0, gt=0.0)
    gamma3: float = Field(default=1.0, gt=0.0)
    selection: Selection = Selection.THRESHOLD
    normalize: bool = True

    def to_params(self, threshold: float, positives: int) -> OptimizerParams:
        return OptimizerParams(
            learning_rate=self.learning_rate,
            tau_learning_rate=self.tau_learning_rate,
            momentum=self.momentum,
            max_iters=self.max_iters,
            gamma_mode=self.gamma_mode,
            gammas=GammaWeights(self.gamma1, self.gamma2, self.gamma3),
            normalize=self.normalize,
            selection=self.selection,
            threshold=threshold,
            positives=positives,
        )


class ExperimentConfig(BaseModel):
    """Full description of an experiment; JSON round-trips exactly."""
    model_config = ConfigDict(extra="forbid")

    name: str = Field(default="experiment", min_length=1)
    property: PropertyKind = PropertyKind.MEMBERSHIP
    methods: list[Method] = Field(default_factory=lambda: list(Method), min_length=1)
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2], min_length=1)

    # Federation
    rounds: int = Field(default=120, ge=1, description="n")
    clients: int = Field(default=20, ge=1, description="N")
    fraction: float = Field(default=0.2, gt=0.0, le=1.0, description="C")
    phi: float = Field(default=0.1, ge=0.0, lt=1.0)
    positives: Optional[int] = Field(default=None, ge=1, description="Overrides ceil(phi * N)")
    min_positives: int = Field(default=DEFAULT_MIN_POSITIVES, ge=1)
    eta_global: float = Field(default=0.1, gt=0.0)
    local_epochs: int = Field(default=1, ge=1)
    local_size: int = Field(default=20, ge=1)
    batch_size: int = Field(default=10, ge=1)
    hidden_dim: int = Field(default=24, ge=1)
    secure_aggregation: bool = True
    fixed_point_bits: int = Field(default=DEFAULT_FIXED_POINT_BITS, ge=4, le=40)
    keep_ciphertexts: bool = False

    # Data
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    aux_size: int = Field(default=400, ge=1)
    eval_size: int = Field(default=400, ge=1)
    target_label_flip: bool = False

    # Detector
    eta_detector: Optional[float] = Field(default=None, gt=0.0, description="None selects the 1/L step")
    detector_epochs: int = Field(default=200, ge=1)
    detector_l2: float = Field(default=1e-2, ge=0.0)
    detector_updates: Optional[int] = Field(default=200, ge=2, description="|D'|; None means 2 * aux batches")
    feature_count: int = Field(default=1, ge=1)

    # Reconstruction
    lam: float = Field(default=DEFAULT_LAMBDA, ge=0.0)
    threshold: float = Field(default=DEFAULT_THRESHOLD, gt=0.0, lt=1.0)
    eval_every: int = Field(default=DEFAULT_EVAL_EVERY, ge=1)
    prolin: ProlinSettings = Field(default_factory=ProlinSettings)

    @model_validator(mode="after")
    def check_consistency(self) -> "ExperimentConfig":
        if math.floor(self.fraction * self.clients + 0.5) < 1:
            raise ValueError("fraction * clients selects no client per round")
        if self.positives is None and round(self.phi * self.clients) < 1:
            raise ValueError("phi * clients rounds to zero positives")
        if self.resolved_positives > self.clients:
            raise ValueError(f"{self.resolved_positives} positives exceed {self.clients} clients")
        if self.resolved_detector_updates % 2:
            raise ValueError("detector_updates must be even")
        if self.batch_size > self.local_size:
            raise ValueError("batch_size cannot exceed local_size")
        if self.local_size > self.aux_size:
            raise ValueError("aux_size must hold at least one local dataset")
        return self

    @builtins.property
    def resolved_positives(self) -> int:
        if self.positives is not None:
            return self.positives
        return max(self.min_positives, math.ceil(self.phi * self.clients - 1e-9))

    @builtins.property
    def resolved_detector_updates(self) -> int:
        if self.detector_updates is not None:
            return self.detector_updates
        return 2 * max(1, self.aux_size // self.batch_size)

    @builtins.property
    def participants_per_round(self) -> int:
        return math.floor(self.fraction * self.clients + 0.5)

    def evaluation_rounds(self) -> list[int]:
        """1-based prefix lengths at which methods are evaluated."""
        rounds = list(range(self.eval_every, self.rounds + 1, self.eval_every))
        if not rounds or rounds[-1] != self.rounds:
            rounds.append(self.rounds)
        return rounds

    @classmethod
    def desk(cls, **overrides) -> "ExperimentConfig":
        """Desk-scale defaults: 10 -> 24 -> 2 classifier on synthetic blobs (z = 314)."""
        return cls(**{"name": "desk", **overrides})

    @classmethod
    def full(cls, **overrides) -> "ExperimentConfig":
        """Full-scale hyperparameters on MNIST-layout IDX data."""
        values = dict(
            name="full",
            rounds=300,
            clients=50,
            fraction=0.2,
            phi=0.1,
            min_positives=1,
            eta_global=0.01,
            local_size=1080,
            batch_size=10,
            hidden_dim=32,
            aux_size=6000,
            eval_size=1000,
            eta_detector=0.001,
            detector_updates=None,
            lam=DEFAULT_LAMBDA,
            dataset=DatasetSpec(
                kind="idx",
                images_path="data/train-images-idx3-ubyte.gz",
                labels_path="data/train-labels-idx1-ubyte.gz",
                classes=10,
            ),
        )
        values.update(overrides)
        return cls(**values)


# -------- Results --------
class MetricRow(BaseModel):
    model_config = ConfigDict(from_attributes=True)

    method: Method
    round: int = Field(ge=1)
    precision: float = Field(ge=0.0, le=1.0)
    recall: float = Field(ge=0.0, le=1.0)
    f1: float = Field(ge=0.0, le=1.0)
    seed: int
    variant: Optional[str] = None


class RunManifest(BaseModel):
    """manifest.json of one run directory."""
    config: ExperimentConfig
    seed: int
    run_name: str
    created_at: datetime
    roles: list[ClientRole]
    positive_clients: list[int]
    parameter_count: int
    variant: Optional[str] = None


class MethodSummary(BaseModel):
    method: Method
    mean_f1: float
    std_f1: float
    max_f1: float
    max_f1_round: int
    convergence_round: Optional[int] = None
    variant: Optional[str] = None
