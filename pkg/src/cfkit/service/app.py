"""FastAPI application serving interactive counterfactual sessions.

Sessions live in process memory with an idle TTL; expired ones are evicted
lazily before each session-store access. Requests for the same session are
serialized through a per-session lock, so the single-writer discipline the
session state machine demands holds under concurrent clients.
"""
from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from ..constraints import (ConstraintError, ConstraintSet, ConstraintUpdateError,
                           constraint_set_to_wire, update_from_wire)
from ..data import Dataset, DatasetError, FeatureSchema, Instance, normalize_matrix
from ..engine import GAParams, SearchResult, params_from_dict
from ..models import negative_indices
from ..session import (FIX_VIOLATORS, KNN_INIT, RANDOM_RESTART,
                       SYNTHETIC_INIT, InvalidTransition, Session, SessionError,
                       start_session, step_metrics)
from .schemas import (AcceptResponse, ConstraintUpdatesRequest,
                      ConstraintsResponse, CreateSessionRequest,
                      DatasetInfo, DatasetListResponse, DeleteResponse,
                      FeatureDiff, HistoryItem, HistoryResponse,
                      InstanceResponse, ProposeResponse, SessionInfo,
                      WireUpdate)

DEFAULT_TTL_SECONDS = 30 * 60


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _unknown_session(sid: str) -> ApiError:
    return ApiError(404, "unknown_session", f"no session {sid!r}")


@dataclass
class ServiceBundle:
    """One dataset the service can explain: model plus its train/test split."""
    name: str
    model: object
    train: Dataset
    test: Dataset

    @property
    def schema(self) -> FeatureSchema:
        return self.train.schema

    def negatives(self) -> list[int]:
        return [int(i) for i in negative_indices(self.model, self.test)]


def load_service_bundle(name: str, model_path: str, data_path: str,
                        schema_path: str) -> ServiceBundle:
    from ..bench import load_split_bundle
    model, train, test = load_split_bundle(model_path, data_path, schema_path)
    return ServiceBundle(name, model, train, test)


@dataclass
class _StoredSession:
    session: Session
    bundle: ServiceBundle
    instance_id: int
    last_used: float
    lock: threading.Lock = field(default_factory=threading.Lock)


def _raw_mapping(schema: FeatureSchema, x: Instance) -> dict:
    return {spec.name: v for spec, v in zip(schema.features, schema.instance_to_raw(x))}


def _diff(schema: FeatureSchema, x: Instance, cand: Instance,
          epsilon: float) -> list[FeatureDiff]:
    from ..data import feature_diffs
    xn = normalize_matrix(x.values[None, :], schema)[0]
    cn = normalize_matrix(cand.values[None, :], schema)[0]
    deltas = feature_diffs(schema, xn, cn)
    before = schema.instance_to_raw(x)
    after = schema.instance_to_raw(cand)
    return [FeatureDiff(feature=spec.name, before=b, after=a,
                        changed=bool(d > epsilon), delta=float(d))
            for spec, b, a, d in zip(schema.features, before, after, deltas)]


def _step_quality(entry_result: SearchResult, x: Instance, session: Session):
    """(proximity, sparsity) of a recorded step, None when the search failed."""
    rm = step_metrics(x, entry_result, session.weights, session.schema,
                      session.params)
    return rm.proximity, rm.sparsity


def create_app(bundles: dict[str, ServiceBundle],
               ttl_seconds: float = DEFAULT_TTL_SECONDS,
               cors_origins: list[str] | None = None) -> FastAPI:
    app = FastAPI(title="counterfactual session service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=cors_origins if cors_origins is not None else ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    sessions: dict[str, _StoredSession] = {}
    store_lock = threading.Lock()

    @app.exception_handler(ApiError)
    async def _api_error(_: Request, exc: ApiError) -> JSONResponse:
        return JSONResponse(status_code=exc.status,
                            content={"error": {"code": exc.code,
                                               "message": exc.message}})

    def _sweep(now: float | None = None) -> None:
        now = time.monotonic() if now is None else now
        with store_lock:
            dead = [sid for sid, e in sessions.items()
                    if now - e.last_used > ttl_seconds]
            for sid in dead:
                del sessions[sid]

    def _get_bundle(name: str) -> ServiceBundle:
        if name not in bundles:
            raise ApiError(404, "unknown_dataset", f"no dataset {name!r}")
        return bundles[name]

    def _get_entry(sid: str) -> _StoredSession:
        _sweep()
        with store_lock:
            entry = sessions.get(sid)
            if entry is None:
                raise _unknown_session(sid)
            entry.last_used = time.monotonic()
            return entry

    def _session_info(sid: str, entry: _StoredSession) -> SessionInfo:
        s = entry.session
        return SessionInfo(
            session_id=sid,
            dataset=entry.bundle.name,
            instance_id=entry.instance_id,
            status=s.status,
            iteration=s.iteration,
            constraints=constraint_set_to_wire(s.constraints, s.schema),
            epsilon=s.params.epsilon,
        )

    # -- datasets ---------------------------------------------------------

    @app.get("/datasets", response_model=DatasetListResponse)
    def list_datasets() -> DatasetListResponse:
        infos = []
        for name in sorted(bundles):
            b = bundles[name]
            infos.append(DatasetInfo(
                name=name,
                schema=b.schema.to_dict(),
                n_train=len(b.train.X),
                n_test=len(b.test.X),
                negatives=b.negatives(),
                epsilon=GAParams().epsilon,
            ))
        return DatasetListResponse(datasets=infos)

    @app.get("/datasets/{name}/instances/{instance_id}",
             response_model=InstanceResponse)
    def get_instance(name: str, instance_id: int) -> InstanceResponse:
        b = _get_bundle(name)
        if not (0 <= instance_id < len(b.test.X)):
            raise ApiError(404, "unknown_instance",
                           f"instance {instance_id} out of range for {name!r}")
        x = b.test.row(instance_id)
        return InstanceResponse(
            dataset=name,
            instance_id=instance_id,
            values=_raw_mapping(b.schema, x),
            prediction=int(b.model.predict(x)),
        )

    # -- session lifecycle --------------------------------------------------

    @app.post("/sessions", response_model=SessionInfo, status_code=201)
    def create_session(req: CreateSessionRequest) -> SessionInfo:
        _sweep()
        b = _get_bundle(req.dataset)
        if not (0 <= req.instance_id < len(b.test.X)):
            raise ApiError(404, "unknown_instance",
                           f"instance {req.instance_id} out of range for {req.dataset!r}")
        if req.init not in (KNN_INIT, SYNTHETIC_INIT):
            raise ApiError(422, "invalid_params", f"unknown init {req.init!r}")
        if req.strategy not in (FIX_VIOLATORS, RANDOM_RESTART):
            raise ApiError(422, "invalid_params",
                           f"unknown strategy {req.strategy!r}")
        try:
            params = params_from_dict(req.params)
        except ValueError as e:
            raise ApiError(422, "invalid_params", str(e)) from e
        x = b.test.row(req.instance_id)
        constraints = None
        if req.constraints:
            try:
                constraints = _apply_wire_updates(
                    ConstraintSet({}), req.constraints, b.schema)
            except (ConstraintUpdateError, ConstraintError) as e:
                raise ApiError(422, "invalid_update", str(e)) from e
        try:
            session = start_session(x, b.model, b.train, constraints, params,
                                    init=req.init, strategy=req.strategy)
        except SessionError as e:
            raise ApiError(422, "favorable_instance", str(e)) from e
        except (ConstraintError, DatasetError) as e:
            raise ApiError(422, "invalid_params", str(e)) from e
        sid = uuid.uuid4().hex
        entry = _StoredSession(session, b, req.instance_id, time.monotonic())
        with store_lock:
            sessions[sid] = entry
        return _session_info(sid, entry)

    def _apply_wire_updates(C: ConstraintSet, updates: list[WireUpdate],
                            schema: FeatureSchema) -> ConstraintSet:
        from ..constraints import apply_updates
        parsed = [update_from_wire(u.model_dump(exclude_none=True), schema)
                  for u in updates]
        return apply_updates(C, parsed, schema)

    @app.post("/sessions/{sid}/propose", response_model=ProposeResponse)
    def propose(sid: str) -> ProposeResponse:
        entry = _get_entry(sid)
        with entry.lock:
            s = entry.session
            try:
                result, _ = s.propose()
            except InvalidTransition as e:
                raise ApiError(409, "invalid_transition", str(e)) from e
            prox, spars = _step_quality(result, s.x, s)
            candidate = diff = None
            if result.success:
                candidate = _raw_mapping(s.schema, result.best.genome)
                diff = _diff(s.schema, s.x, result.best.genome, s.params.epsilon)
            return ProposeResponse(
                session_id=sid,
                status=s.status,
                iteration=s.iteration,
                success=result.success,
                generations=result.generations_run,
                elapsed=result.elapsed,
                proximity=prox,
                sparsity=spars,
                epsilon=s.params.epsilon,
                candidate=candidate,
                diff=diff or [],
            )

    @app.post("/sessions/{sid}/constraints", response_model=ConstraintsResponse)
    def update_constraints(sid: str, req: ConstraintUpdatesRequest) -> ConstraintsResponse:
        entry = _get_entry(sid)
        with entry.lock:
            s = entry.session
            try:
                parsed = [update_from_wire(u.model_dump(exclude_none=True), s.schema)
                          for u in req.updates]
            except (ConstraintUpdateError, ConstraintError) as e:
                raise ApiError(422, "invalid_update", str(e)) from e
            try:
                s.update_constraints(parsed)
            except InvalidTransition as e:
                raise ApiError(409, "invalid_transition", str(e)) from e
            except (ConstraintUpdateError, ConstraintError) as e:
                raise ApiError(422, "invalid_update", str(e)) from e
            return ConstraintsResponse(
                session_id=sid,
                status=s.status,
                iteration=s.iteration,
                constraints=constraint_set_to_wire(s.constraints, s.schema),
            )

    @app.post("/sessions/{sid}/accept", response_model=AcceptResponse)
    def accept(sid: str) -> AcceptResponse:
        entry = _get_entry(sid)
        with entry.lock:
            s = entry.session
            try:
                s.accept()
            except SessionError as e:
                raise ApiError(409, "invalid_transition", str(e)) from e
            last = s.history[-1]
            prox, spars = _step_quality(last.result, s.x, s)
            return AcceptResponse(
                session_id=sid,
                status=s.status,
                final=_raw_mapping(s.schema, s.final.genome),
                proximity=prox,
                sparsity=spars,
            )

    @app.get("/sessions/{sid}/history", response_model=HistoryResponse)
    def history(sid: str) -> HistoryResponse:
        entry = _get_entry(sid)
        with entry.lock:
            s = entry.session
            items = []
            for step, h in enumerate(s.history):
                prox, spars = _step_quality(h.result, s.x, s)
                candidate = None
                diff: list[FeatureDiff] = []
                if h.result.success:
                    candidate = _raw_mapping(s.schema, h.best.genome)
                    diff = _diff(s.schema, s.x, h.best.genome, s.params.epsilon)
                items.append(HistoryItem(
                    step=step,
                    constraints=constraint_set_to_wire(h.constraints, s.schema),
                    success=h.result.success,
                    generations=h.result.generations_run,
                    elapsed=h.result.elapsed,
                    proximity=prox,
                    sparsity=spars,
                    candidate=candidate,
                    diff=diff,
                ))
            return HistoryResponse(session_id=sid, status=s.status,
                                   iteration=s.iteration, items=items)

    @app.get("/sessions/{sid}", response_model=SessionInfo)
    def get_session(sid: str) -> SessionInfo:
        return _session_info(sid, _get_entry(sid))

    @app.delete("/sessions/{sid}", response_model=DeleteResponse)
    def delete_session(sid: str) -> DeleteResponse:
        _sweep()
        with store_lock:
            if sid not in sessions:
                raise _unknown_session(sid)
            del sessions[sid]
        return DeleteResponse(deleted=True)

    app.state.sessions = sessions
    app.state.bundles = bundles
    app.state.ttl_seconds = ttl_seconds
    return app
