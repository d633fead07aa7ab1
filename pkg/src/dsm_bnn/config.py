"""JSON experiment configuration, validated with pydantic."""

from __future__ import annotations

import hashlib
import json
import os
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .priors import FAMILIES, PriorSpec

ANALYSES = ("metrics", "m_eff", "kappa_tables", "prune_sweep", "robustness", "dependence_sweep")
GENERATORS = ("linreg", "friedman", "friedman_correlated", "logistic_toy")


class ConfigError(ValueError):
    """Invalid configuration; the message lists the offending field paths."""


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Replicates(_Block):
    sizes: list[int] = Field(default_factory=lambda: [100, 200, 500])
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])


class DatasetBlock(_Block):
    generator: Literal[GENERATORS] | None = None
    path: str | None = None
    schema_: dict | None = Field(default=None, alias="schema")
    N: int = Field(100, ge=2)
    rho: float = Field(0.9, ge=0.0, lt=1.0)
    noise_sd: float = Field(1.0, ge=0.0)
    shift: float = 1.0
    seed: int | None = None
    train_frac: float = Field(1.0, gt=0.0, le=1.0)
    test_N: int = Field(1000, ge=0)
    test_seed: int = 1000
    test_path: str | None = None
    standardize_y: bool | None = None
    replicates: Replicates | None = None

    @model_validator(mode="after")
    def _source(self):
        if (self.generator is None) == (self.path is None):
            raise ValueError("give exactly one of 'generator' or 'path'")
        if self.path is not None:
            if self.schema_ is None or "target" not in self.schema_:
                raise ValueError("a CSV dataset needs a schema with a 'target' column")
            for p in (self.path, self.test_path):
                if p is not None and not os.path.isfile(p):
                    raise ValueError(f"file not found: {p}")
        if self.replicates is not None and self.test_seed in self.replicates.seeds:
            raise ValueError("test_seed must differ from every replicate seed")
        return self

    @property
    def task(self) -> str:
        if self.generator == "logistic_toy":
            return "binary_classification"
        if self.path is not None:
            return self.schema_.get("task", "regression")
        return "regression"


class ModelBlock(_Block):
    prior: dict = Field(default_factory=lambda: {"family": "DHS"})
    linear: bool = False
    hidden: int = Field(16, ge=1)
    auto_tau0: bool = True

    @field_validator("prior")
    @classmethod
    def _prior(cls, value):
        if value.get("family", "DHS") not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        PriorSpec.from_dict(value)
        return value


class SamplerBlock(_Block):
    chains: int = Field(2, ge=1)
    warmup: int = Field(500, ge=0)
    draws: int = Field(500, ge=1)
    target_accept: float = Field(0.8, gt=0.0, lt=1.0)
    max_treedepth: int = Field(10, ge=1)


class KappaTables(_Block):
    z: list[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0])
    alpha: list[float] = Field(default_factory=lambda: [0.1, 1.0])
    p: list[int] = Field(default_factory=lambda: [1, 4])
    nu: list[float] = Field(default_factory=lambda: [1.0, 3.0])
    grid_size: int = Field(399, ge=3)


class PruneBlock(_Block):
    levels: list[float] = Field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])


class RobustnessBlock(_Block):
    epsilons: list[float] = Field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2, 0.5])
    delta_fractions: list[float] = Field(
        default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
    subset_size: int = Field(100, ge=1)
    n_draws: int = Field(100, ge=1)


class DependenceBlock(_Block):
    prior: Literal["half_cauchy", "half_t", "half_normal", "gamma_sq"] = "half_t"
    values: list[float] = Field(default_factory=lambda: [1.0, 2.0, 3.0, 5.0, 10.0])
    p: int = Field(4, ge=1)
    alpha: float = Field(0.1, gt=0.0)
    tau: float = Field(1.0, gt=0.0)
    draws: int = Field(100_000, ge=10_000)


class ExperimentConfig(_Block):
    dataset: DatasetBlock
    model: ModelBlock = Field(default_factory=ModelBlock)
    sampler: SamplerBlock = Field(default_factory=SamplerBlock)
    analyses: list[Literal[ANALYSES]] = Field(default_factory=lambda: ["metrics"])
    output_dir: str = "out"
    seed: int = 0
    m_eff_thin: int = Field(10, ge=1)
    kappa_tables: KappaTables = Field(default_factory=KappaTables)
    prune: PruneBlock = Field(default_factory=PruneBlock)
    robustness: RobustnessBlock = Field(default_factory=RobustnessBlock)
    dependence: DependenceBlock = Field(default_factory=DependenceBlock)

    @model_validator(mode="after")
    def _task_analyses(self):
        task = self.dataset.task
        if "robustness" in self.analyses and task != "binary_classification":
            raise ValueError("robustness analysis requires a classification dataset")
        if self.model.linear and task != "regression":
            raise ValueError("linear models are regression only")
        return self

    def prior_spec(self) -> PriorSpec:
        return PriorSpec.from_dict(self.model.prior)

    def canonical_json(self) -> str:
        # the output location does not change results, so it stays out of the hash
        return json.dumps(self.model_dump(mode="json", by_alias=True, exclude={"output_dir"}),
                          sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "\n".join(lines)


def parse_config(data: dict, **overrides) -> ExperimentConfig:
    data = dict(data)
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path, **overrides) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(data, **overrides)
