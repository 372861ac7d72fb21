"""FastAPI application exposing accounting, dataset generation, and runs.

Experiment execution is job-based: POST /experiments either runs the job to
completion before responding (wait=true, the default) or hands it to a worker
thread and returns immediately with state "running" for later polling.
"""

from __future__ import annotations

import itertools
import json
import threading
from dataclasses import dataclass

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse

from .. import __version__, privacy
from ..errors import SpecError
from ..experiment import ExperimentSpec, RunResult, parse_spec, run_spec
from ..data import make_synthetic, write_dataset_csv
from .schemas import (
    AccountRequest,
    AccountResponse,
    BudgetRow,
    ExperimentRequest,
    ExperimentStatus,
    GenRequest,
    GenResponse,
    HealthResponse,
)


@dataclass
class _Job:
    id: str
    spec: ExperimentSpec
    state: str = "running"
    result: RunResult | None = None
    error: str | None = None
    thread: threading.Thread | None = None

    def status(self) -> ExperimentStatus:
        return ExperimentStatus(
            id=self.id,
            state=self.state,  # type: ignore[arg-type]
            name=self.spec.name,
            mode=self.spec.mode,
            repeats=self.spec.repeats,
            trace_paths=(
                [str(p) for p in self.result.trace_paths] if self.result else None
            ),
            summary_path=str(self.result.summary_path) if self.result else None,
            summary=self.result.summary if self.result else None,
            error=self.error,
        )


class _JobRegistry:
    def __init__(self) -> None:
        self._jobs: dict[str, _Job] = {}
        self._lock = threading.Lock()
        self._counter = itertools.count()

    def create(self, spec: ExperimentSpec) -> _Job:
        with self._lock:
            job = _Job(id=f"exp-{next(self._counter):04d}", spec=spec)
            self._jobs[job.id] = job
        return job

    def get(self, job_id: str) -> _Job:
        with self._lock:
            job = self._jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no experiment {job_id!r}")
        return job


def _execute(job: _Job, output_dir: str | None) -> None:
    try:
        job.result = run_spec(job.spec, output_dir=output_dir)
        job.state = "done"
    except Exception as exc:  # surfaced through the status, not the log
        job.error = f"{type(exc).__name__}: {exc}"
        job.state = "failed"


def create_app() -> FastAPI:
    app = FastAPI(title="pbmvfl", version=__version__)
    jobs = _JobRegistry()

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(version=__version__)

    @app.post("/account", response_model=AccountResponse)
    def account(req: AccountRequest) -> AccountResponse:
        rows = []
        try:
            for alpha in req.alphas:
                per_round = privacy.per_round_feature_budget(
                    alpha, req.embed_dim, req.trials, req.beta, req.parties
                ).eps
                final = privacy.feature_budget(
                    alpha,
                    req.iters,
                    req.batch,
                    req.embed_dim,
                    req.trials,
                    req.beta,
                    req.parties,
                    req.samples,
                ).eps
                sample = (
                    privacy.sample_budget(
                        alpha, req.embed_dim, req.trials, req.beta, req.parties
                    ).eps
                    if req.parties >= 2
                    else None
                )
                rows.append(
                    BudgetRow(
                        alpha=alpha,
                        feature_per_round=per_round,
                        feature_final=final,
                        sample_per_disclosure=sample,
                    )
                )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return AccountResponse(rows=rows)

    @app.post("/datasets", response_model=GenResponse)
    def gen_dataset(req: GenRequest) -> GenResponse:
        try:
            data = make_synthetic(
                n_train=req.n_train,
                n_test=req.n_test,
                n_features=req.n_features,
                classes=req.classes,
                parties=req.parties,
                seed=req.seed,
                class_sep=req.class_sep,
            )
            paths = write_dataset_csv(data, req.out_dir)
        except (ValueError, OSError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return GenResponse(
            train_path=str(paths["train"]),
            test_path=str(paths["test"]),
            parties_path=str(paths["parties"]),
            n_train=req.n_train,
            n_test=req.n_test,
            parties=req.parties,
        )

    @app.post("/experiments", response_model=ExperimentStatus)
    def start_experiment(req: ExperimentRequest) -> ExperimentStatus:
        try:
            spec = parse_spec(json.dumps(req.spec), source="<request>")
        except SpecError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        job = jobs.create(spec)
        if req.wait:
            _execute(job, req.output_dir)
            if job.state == "failed":
                raise HTTPException(status_code=422, detail=job.error)
        else:
            job.thread = threading.Thread(
                target=_execute, args=(job, req.output_dir), daemon=True
            )
            job.thread.start()
        return job.status()

    @app.get("/experiments/{job_id}", response_model=ExperimentStatus)
    def experiment_status(job_id: str) -> ExperimentStatus:
        return jobs.get(job_id).status()

    @app.get("/experiments/{job_id}/trace/{repeat}")
    def experiment_trace(job_id: str, repeat: int) -> PlainTextResponse:
        job = jobs.get(job_id)
        if job.state != "done" or job.result is None:
            raise HTTPException(
                status_code=409, detail=f"experiment {job_id!r} is {job.state}"
            )
        if not 0 <= repeat < len(job.result.trace_paths):
            raise HTTPException(
                status_code=404,
                detail=f"repeat {repeat} outside [0, {len(job.result.trace_paths)})",
            )
        text = job.result.trace_paths[repeat].read_text()
        return PlainTextResponse(text, media_type="text/csv")

    return app
