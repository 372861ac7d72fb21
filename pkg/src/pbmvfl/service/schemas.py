"""Request/response models for the HTTP API."""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field, field_validator


class HealthResponse(BaseModel):
    status: Literal["ok"] = "ok"
    version: str


class AccountRequest(BaseModel):
    """Privacy-budget query; budgets come back in C0 units."""

    iters: int = Field(ge=0, description="training iterations T")
    batch: int = Field(ge=1, description="minibatch size B")
    embed_dim: int = Field(ge=1, description="embedding width P")
    trials: int = Field(ge=1, description="per-value binomial trial count b")
    beta: float = Field(gt=0.0, le=0.25, description="quantizer slope")
    parties: int = Field(ge=1, description="party count M")
    samples: int = Field(ge=1, description="training-set size N")
    alphas: list[float] = Field(min_length=1, description="divergence orders")

    @field_validator("alphas")
    @classmethod
    def _alphas_exceed_one(cls, v: list[float]) -> list[float]:
        bad = [a for a in v if not a > 1.0]
        if bad:
            raise ValueError(f"every alpha must exceed 1, got {bad}")
        return v


class BudgetRow(BaseModel):
    alpha: float
    feature_per_round: float
    feature_final: float
    # None when parties == 1: the per-sample bound needs at least two parties.
    sample_per_disclosure: float | None


class AccountResponse(BaseModel):
    c0_units: bool = True
    rows: list[BudgetRow]


class GenRequest(BaseModel):
    """Synthetic dataset generation; files are written on the serving host."""

    out_dir: str
    parties: int = Field(ge=1)
    seed: int = Field(ge=0)
    n_train: int = Field(ge=0)
    n_test: int = Field(ge=0)
    n_features: int = Field(ge=1)
    classes: int = Field(ge=2)
    class_sep: float = Field(default=3.0, ge=0.0)


class GenResponse(BaseModel):
    train_path: str
    test_path: str
    parties_path: str
    n_train: int
    n_test: int
    parties: int


class ExperimentRequest(BaseModel):
    """Run a training spec; `spec` is the experiment-spec JSON object."""

    spec: dict[str, Any]
    output_dir: str | None = None
    wait: bool = True


class ExperimentStatus(BaseModel):
    id: str
    state: Literal["running", "done", "failed"]
    name: str
    mode: str
    repeats: int
    trace_paths: list[str] | None = None
    summary_path: str | None = None
    summary: dict[str, tuple[float | None, float | None]] | None = None
    error: str | None = None
