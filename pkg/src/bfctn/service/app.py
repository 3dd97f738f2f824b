"""FastAPI application: scenarios and ablations run as background jobs.

Jobs are kept in memory; ``GET /jobs/{id}`` polls them.  Inputs and
outputs are container paths on the server's filesystem.
"""

from __future__ import annotations

import logging
import math
import threading
import uuid
from importlib.metadata import PackageNotFoundError, version
from typing import Any, Callable

from fastapi import BackgroundTasks, FastAPI, HTTPException

from ..errors import classify
from ..io import load_image
from ..runner import fuse_pair, run_ablation, run_scenario
from .schemas import AblationRequest, ErrorInfo, Health, JobCreated, JobState, JobStatus, ScenarioRequest

log = logging.getLogger(__name__)


class JobStore:
    def __init__(self):
        self._jobs: dict[str, JobStatus] = {}
        self._lock = threading.Lock()

    def create(self, kind: str) -> JobStatus:
        job = JobStatus(id=uuid.uuid4().hex, kind=kind, state=JobState.QUEUED)
        with self._lock:
            self._jobs[job.id] = job
        return job

    def get(self, job_id: str) -> JobStatus | None:
        with self._lock:
            job = self._jobs.get(job_id)
            return None if job is None else job.model_copy()

    def update(self, job_id: str, **fields) -> None:
        with self._lock:
            self._jobs[job_id] = self._jobs[job_id].model_copy(update=fields)


def _jsonable(x: Any) -> Any:
    # strict JSON has no infinities; PSNR of an exact band and log errors of 0 produce them
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _scenario_job(req: ScenarioRequest) -> dict[str, Any]:
    if req.reference_path is not None:
        res = run_scenario(req.spec, load_image(req.reference_path), req.out_dir)
    else:
        res = fuse_pair(req.spec, load_image(req.hsi_path), load_image(req.msi_path), req.out_dir)
    return {"out_dir": req.out_dir, "metrics": res.csv_row(),
            "psnr_per_band": res.report.psnr_per_band if res.report else None}


def _ablation_job(req: AblationRequest) -> dict[str, Any]:
    rows = run_ablation(req.kind, load_image(req.reference_path), req.spec, req.grid, req.out_dir)
    return {"out_dir": req.out_dir, "rows": rows}


def create_app() -> FastAPI:
    app = FastAPI(title="bfctn", summary="Hyperspectral / multispectral fusion jobs")
    store = JobStore()
    app.state.jobs = store

    def run(job_id: str, fn: Callable[[], dict[str, Any]]) -> None:
        store.update(job_id, state=JobState.RUNNING)
        try:
            result = fn()
        except Exception as exc:  # reported through the job record
            category, _ = classify(exc)
            log.exception("job %s failed", job_id)
            store.update(job_id, state=JobState.FAILED, error=ErrorInfo(category=category, message=str(exc)))
        else:
            store.update(job_id, state=JobState.DONE, result=_jsonable(result))

    @app.get("/health", response_model=Health)
    def health() -> Health:
        try:
            v = version("artifact")
        except PackageNotFoundError:
            v = "unknown"
        return Health(version=v)

    @app.post("/scenarios", response_model=JobCreated, status_code=202)
    def submit_scenario(req: ScenarioRequest, tasks: BackgroundTasks) -> JobCreated:
        job = store.create("scenario")
        tasks.add_task(run, job.id, lambda: _scenario_job(req))
        return JobCreated(id=job.id, state=job.state)

    @app.post("/ablations", response_model=JobCreated, status_code=202)
    def submit_ablation(req: AblationRequest, tasks: BackgroundTasks) -> JobCreated:
        job = store.create(f"ablation:{req.kind}")
        tasks.add_task(run, job.id, lambda: _ablation_job(req))
        return JobCreated(id=job.id, state=job.state)

    @app.get("/jobs/{job_id}", response_model=JobStatus)
    def get_job(job_id: str) -> JobStatus:
        job = store.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id}")
        return job

    return app


app = create_app()
