"""Staged pipeline scheduler.

Each session moves through detect -> densify -> annotate -> extract ->
privatize -> evaluate.  The scheduler is a pure state machine: ``tick``
starts queued jobs up to per-stage limits, blocks annotate jobs until a
human finishes pass 4, and advances completed jobs to the next stage.
Execution of stage bodies is the caller's concern, which keeps the
machine testable under arbitrary interleavings.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from ..core import FaceDeidError

STAGES = ("detect", "densify", "annotate", "extract", "privatize", "evaluate")

QUEUED = "queued"
RUNNING = "running"
BLOCKED = "blocked"
DONE = "done"
FAILED = "failed"

DEFAULT_STAGE_LIMITS = {
    "detect": 2,
    "densify": 4,
    "annotate": 4,
    "extract": 4,
    "privatize": 2,
    "evaluate": 4,
}


class SchedulerError(FaceDeidError):
    pass


@dataclass(frozen=True)
class PipelineJob:
    id: int
    session_id: str
    stage: str
    status: str = QUEUED
    created: float = 0.0
    started: Optional[float] = None
    finished: Optional[float] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "id": self.id, "session_id": self.session_id, "stage": self.stage,
            "status": self.status, "created": self.created,
            "started": self.started, "finished": self.finished, "error": self.error,
        }

    @staticmethod
    def from_dict(d: dict) -> "PipelineJob":
        return PipelineJob(
            id=int(d["id"]), session_id=d["session_id"], stage=d["stage"],
            status=d["status"], created=float(d["created"]),
            started=d.get("started"), finished=d.get("finished"), error=d.get("error"),
        )


@dataclass(frozen=True)
class PipelineState:
    jobs: tuple[PipelineJob, ...] = ()
    next_id: int = 1

    def newest_job(self, session_id: str) -> Optional[PipelineJob]:
        newest = None
        for job in self.jobs:
            if job.session_id == session_id and (newest is None or job.id > newest.id):
                newest = job
        return newest

    def session_jobs(self, session_id: str) -> list[PipelineJob]:
        return sorted((j for j in self.jobs if j.session_id == session_id), key=lambda j: j.id)

    def running_per_stage(self) -> dict[str, int]:
        counts = {stage: 0 for stage in STAGES}
        for job in self.jobs:
            if job.status == RUNNING:
                counts[job.stage] += 1
        return counts

    def to_dict(self) -> dict:
        return {"jobs": [j.to_dict() for j in self.jobs], "next_id": self.next_id}

    @staticmethod
    def from_dict(d: dict) -> "PipelineState":
        return PipelineState(
            jobs=tuple(PipelineJob.from_dict(j) for j in d.get("jobs", [])),
            next_id=int(d.get("next_id", 1)),
        )

    @staticmethod
    def recover(d: dict) -> "PipelineState":
        """Reload after a crash: anything mid-flight is re-queued (stage
        bodies are idempotent and overwrite their own outputs)."""
        state = PipelineState.from_dict(d)
        jobs = tuple(
            replace(j, status=QUEUED, started=None) if j.status == RUNNING else j
            for j in state.jobs
        )
        return replace(state, jobs=jobs)


def submit_job(state: PipelineState, session_id: str, stage: str = "detect") -> PipelineState:
    if stage not in STAGES:
        raise SchedulerError(f"unknown stage {stage!r}")
    job = PipelineJob(id=state.next_id, session_id=session_id, stage=stage,
                      status=QUEUED, created=time.time())
    return PipelineState(jobs=state.jobs + (job,), next_id=state.next_id + 1)


def next_stage(stage: str) -> Optional[str]:
    idx = STAGES.index(stage)
    return STAGES[idx + 1] if idx + 1 < len(STAGES) else None


def advance_sessions(state: PipelineState, now: float | None = None) -> PipelineState:
    """Queue the successor stage for every session whose newest job is done."""
    now = time.time() if now is None else now
    jobs = list(state.jobs)
    next_id = state.next_id
    for session_id in sorted({j.session_id for j in jobs}):
        newest = state.newest_job(session_id)
        if newest is None or newest.status != DONE:
            continue
        succ = next_stage(newest.stage)
        if succ is not None:
            jobs.append(PipelineJob(id=next_id, session_id=session_id,
                                    stage=succ, status=QUEUED, created=now))
            next_id += 1
    return PipelineState(jobs=tuple(jobs), next_id=next_id)


def begin_manual(state: PipelineState, session_id: str, stage: str) -> tuple[PipelineState, int]:
    """Start a stage by hand (CLI verbs): reuse the session's queued job for
    that stage if one exists, otherwise record a fresh one."""
    if stage not in STAGES:
        raise SchedulerError(f"unknown stage {stage!r}")
    now = time.time()
    jobs = list(state.jobs)
    for i, job in enumerate(jobs):
        if job.session_id == session_id and job.stage == stage and job.status == QUEUED:
            jobs[i] = replace(job, status=RUNNING, started=now)
            return PipelineState(jobs=tuple(jobs), next_id=state.next_id), job.id
    job = PipelineJob(id=state.next_id, session_id=session_id, stage=stage,
                      status=RUNNING, created=now, started=now)
    return PipelineState(jobs=tuple(jobs) + (job,), next_id=state.next_id + 1), job.id


@dataclass(frozen=True)
class TickResult:
    state: PipelineState
    started: tuple[PipelineJob, ...] = ()


def scheduler_tick(
    state: PipelineState,
    limits: dict[str, int] | None = None,
    pass4_complete: Callable[[str], bool] = lambda _sid: False,
) -> TickResult:
    """One scheduling step.

    Unblocks annotate jobs whose session finished pass 4, advances done
    jobs to their next stage, then starts queued jobs up to each stage's
    concurrency limit.  Returns the new state plus the jobs that moved to
    running (their bodies are the caller's to execute).
    """
    limits = {**DEFAULT_STAGE_LIMITS, **(limits or {})}
    now = time.time()
    jobs = list(state.jobs)

    # annotate jobs wait on the human, not on a worker
    for i, job in enumerate(jobs):
        if job.stage == "annotate" and job.status == BLOCKED and pass4_complete(job.session_id):
            jobs[i] = replace(job, status=DONE, finished=now)

    # advance: a session whose newest job is done spawns the next stage
    advanced = advance_sessions(PipelineState(jobs=tuple(jobs), next_id=state.next_id), now)
    jobs = list(advanced.jobs)
    next_id = advanced.next_id

    # start queued jobs while capacity remains
    running = {stage: 0 for stage in STAGES}
    for job in jobs:
        if job.status == RUNNING:
            running[job.stage] += 1
    started: list[PipelineJob] = []
    for i in sorted(range(len(jobs)), key=lambda i: jobs[i].id):
        job = jobs[i]
        if job.status != QUEUED:
            continue
        if job.stage == "annotate":
            jobs[i] = replace(job, status=BLOCKED, started=now)
            continue
        if running[job.stage] < limits.get(job.stage, 1):
            running[job.stage] += 1
            jobs[i] = replace(job, status=RUNNING, started=now)
            started.append(jobs[i])

    return TickResult(state=PipelineState(jobs=tuple(jobs), next_id=next_id),
                      started=tuple(started))


def finish_job(state: PipelineState, job_id: int, ok: bool,
               error: str | None = None) -> PipelineState:
    jobs = list(state.jobs)
    for i, job in enumerate(jobs):
        if job.id == job_id:
            if job.status != RUNNING:
                raise SchedulerError(f"job {job_id} is {job.status}, not running")
            jobs[i] = replace(job, status=DONE if ok else FAILED,
                              finished=time.time(), error=error)
            return PipelineState(jobs=tuple(jobs), next_id=state.next_id)
    raise SchedulerError(f"job {job_id} not found")


def all_terminal(state: PipelineState) -> bool:
    """True when every session has finished its pipeline or failed."""
    for session_id in {j.session_id for j in state.jobs}:
        newest = state.newest_job(session_id)
        if newest.status == FAILED:
            continue
        if newest.stage == STAGES[-1] and newest.status == DONE:
            continue
        return False
    return True
