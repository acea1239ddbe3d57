"""Gateway: CLI, HTTP API, session store, and the staged pipeline scheduler."""

from .scheduler import (  # noqa: F401
    DEFAULT_STAGE_LIMITS,
    PipelineJob,
    PipelineState,
    STAGES,
    all_terminal,
    finish_job,
    scheduler_tick,
    submit_job,
)
from .store import SessionOwner, SessionRegistry, SessionStore  # noqa: F401
