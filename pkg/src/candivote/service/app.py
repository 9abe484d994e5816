"""HTTP service exposing the online learner and the experiment harness.

Sessions are in-memory learners addressed by id: open a task, stream
observation batches, finish the task, and ask for predictions at any point.
A separate one-shot endpoint runs a whole configured experiment and returns
its metrics. Handlers are synchronous; each session carries its own lock, so
concurrent requests against one session serialize while distinct sessions
proceed in parallel.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..engine import ContinualLearner
from ..errors import CandivoteError, ConfigError, DataError, NumericError
from ..exemplars import AugmentConfig
from ..harness import emit, run_experiment
from ..voting import VoteParams
from .schemas import (
    ErrorBody,
    ExperimentRequest,
    ExperimentResponse,
    HealthResponse,
    ObservationsRequest,
    ObservationsResponse,
    PredictionsRequest,
    PredictionsResponse,
    SessionCreateRequest,
    SessionDeleted,
    SessionInfo,
    SessionList,
    TaskFinishResponse,
    TaskStartRequest,
    TaskStartResponse,
)

__all__ = ["create_app"]


@dataclass
class _Session:
    learner: ContinualLearner
    mode: str
    lock: threading.Lock = field(default_factory=threading.Lock)


class _Registry:
    def __init__(self) -> None:
        self._sessions: dict[str, _Session] = {}
        self._lock = threading.Lock()

    def create(self, session: _Session) -> str:
        sid = uuid.uuid4().hex[:12]
        with self._lock:
            self._sessions[sid] = session
        return sid

    def get(self, sid: str) -> _Session:
        with self._lock:
            session = self._sessions.get(sid)
        if session is None:
            raise KeyError(sid)
        return session

    def remove(self, sid: str) -> None:
        with self._lock:
            if sid not in self._sessions:
                raise KeyError(sid)
            del self._sessions[sid]

    def items(self) -> list[tuple[str, _Session]]:
        with self._lock:
            return sorted(self._sessions.items())


def _info(sid: str, session: _Session) -> SessionInfo:
    learner = session.learner
    return SessionInfo(
        session_id=sid,
        dim=learner.dim,
        capacity=learner.exemplar_set.capacity,
        mode=session.mode,
        num_classes=learner.num_classes,
        tasks_completed=learner.tasks_completed,
        open_task=learner.current_task,
        records_trained=learner.records_trained,
        stored_exemplars=learner.exemplar_set.total_items,
        effective_beta=learner.effective_beta,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="candivote", version=__version__)
    registry = _Registry()

    @app.exception_handler(ConfigError)
    def _config_error(request: Request, exc: ConfigError) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content=ErrorBody(error="config_error", detail=str(exc)).model_dump(),
        )

    @app.exception_handler(DataError)
    def _data_error(request: Request, exc: DataError) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content=ErrorBody(error="data_error", detail=str(exc)).model_dump(),
        )

    @app.exception_handler(NumericError)
    def _numeric_error(request: Request, exc: NumericError) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content=ErrorBody(error="numeric_error", detail=str(exc)).model_dump(),
        )

    @app.exception_handler(KeyError)
    def _missing_session(request: Request, exc: KeyError) -> JSONResponse:
        return JSONResponse(
            status_code=404,
            content=ErrorBody(error="not_found", detail=f"no session {exc.args[0]}").model_dump(),
        )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/sessions", response_model=SessionInfo)
    def create_session(body: SessionCreateRequest) -> SessionInfo:
        augment_enabled = body.augment if body.augment is not None else body.mode != "baseline"
        learner = ContinualLearner(
            dim=body.dim,
            capacity=body.capacity,
            learning_rate=body.learning_rate,
            seed=body.seed,
            vote_params=VoteParams(
                beta=body.beta,
                eps_n=body.eps_n,
                eps_r=body.eps_r,
                beta_mode="pilot" if body.pilot_beta else "fixed",
            ),
            augment_cfg=AugmentConfig(alpha_r=body.alpha_r, enabled=augment_enabled),
            freeze=body.freeze,
            replay=body.replay,
        )
        session = _Session(learner=learner, mode=body.mode)
        sid = registry.create(session)
        return _info(sid, session)

    @app.get("/sessions", response_model=SessionList)
    def list_sessions() -> SessionList:
        return SessionList(sessions=[_info(sid, s) for sid, s in registry.items()])

    @app.get("/sessions/{sid}", response_model=SessionInfo)
    def get_session(sid: str) -> SessionInfo:
        return _info(sid, registry.get(sid))

    @app.delete("/sessions/{sid}", response_model=SessionDeleted)
    def delete_session(sid: str) -> SessionDeleted:
        registry.remove(sid)
        return SessionDeleted(deleted=sid)

    @app.post("/sessions/{sid}/tasks", response_model=TaskStartResponse)
    def start_task(sid: str, body: TaskStartRequest) -> TaskStartResponse:
        session = registry.get(sid)
        with session.lock:
            classes = session.learner.begin_task(body.num_classes)
            task = session.learner.current_task
        assert task is not None
        return TaskStartResponse(task=task, classes=classes)

    @app.post("/sessions/{sid}/observations", response_model=ObservationsResponse)
    def observe_batch(sid: str, body: ObservationsRequest) -> ObservationsResponse:
        session = registry.get(sid)
        if len(body.features) != len(body.labels):
            raise NumericError(
                f"{len(body.features)} feature rows but {len(body.labels)} labels"
            )
        feats = np.asarray(body.features, dtype=np.float32)
        with session.lock:
            loss = session.learner.learn_batch(feats, np.asarray(body.labels))
            trained = session.learner.records_trained
        return ObservationsResponse(loss=loss, records_trained=trained)

    @app.post("/sessions/{sid}/tasks/finish", response_model=TaskFinishResponse)
    def finish_task(sid: str) -> TaskFinishResponse:
        session = registry.get(sid)
        with session.lock:
            task = session.learner.current_task
            if task is None:
                raise ConfigError("no open task to finish")
            session.learner.end_task()
            return TaskFinishResponse(
                task=task,
                effective_beta=session.learner.effective_beta,
                stored_exemplars=session.learner.exemplar_set.total_items,
            )

    @app.post("/sessions/{sid}/predictions", response_model=PredictionsResponse)
    def predict(sid: str, body: PredictionsRequest) -> PredictionsResponse:
        session = registry.get(sid)
        feats = np.asarray(body.features, dtype=np.float32)
        mode = body.mode or session.mode
        with session.lock:
            labels = session.learner.predict_batch(feats, mode)
        return PredictionsResponse(labels=[int(x) for x in labels])

    @app.post("/experiments", response_model=ExperimentResponse)
    def run(body: ExperimentRequest) -> ExperimentResponse:
        report = run_experiment(body.config)
        written: list[str] = []
        if body.config.out_dir:
            written = emit(report, body.config.out_dir)
        return ExperimentResponse(
            metrics=report.to_dict(), timings=report.timings, written=written
        )

    # unreachable marker for linters; CandivoteError subclasses are handled above
    _ = CandivoteError
    return app
