"""HTTP service exposing inversion, the three manipulation methods,
preprocessing jobs, and artifact listing.

One backend per process, chosen by config at startup; channel stats and
mapper checkpoints are fingerprint-bound to it. Synchronous endpoints call
only pure operations; preprocessing, mapper training, and optimization run
as jobs on a small worker pool with persisted job records.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import os
import queue
import threading
import uuid
from contextlib import asynccontextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from . import directions as gd
from . import mapper as mp
from . import optimizer as opt
from .backends import load_backend
from .backends.base import ManipulationBackend
from .errors import (
    ArtifactNotFoundError,
    BackendUnavailableError,
    DegeneratePromptError,
    GeometryMismatchError,
    IdentityUnavailableError,
    InverterUnavailableError,
    ToolkitError,
)
from .geometry import StyleCode, WPlusCode
from .imaging import from_png_bytes, to_png_bytes
from .store import ArtifactKey, ArtifactStore

CONFIG_ENV_VAR = "STYLE_TOOLKIT_CONFIG"

_STATUS_BY_CODE = {
    DegeneratePromptError: 422,
    GeometryMismatchError: 409,
    IdentityUnavailableError: 409,
    InverterUnavailableError: 503,
    BackendUnavailableError: 503,
    ArtifactNotFoundError: 404,
}


@dataclass
class ServiceConfig:
    backend: dict
    store_root: str
    host: str = "127.0.0.1"
    port: int = 8600
    max_upload_bytes: int = 4 * 1024 * 1024
    max_inline_bytes: int = 4 * 1024 * 1024
    workers: int = 1
    # Optional directory with the built web editor; mounted at /editor.
    frontend_dir: str | None = None

    @classmethod
    def from_file(cls, path) -> "ServiceConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**raw)

    @classmethod
    def resolve(cls, path=None) -> "ServiceConfig":
        """Explicit path argument, else the STYLE_TOOLKIT_CONFIG override."""
        if path is None:
            path = os.environ.get(CONFIG_ENV_VAR)
        if path is None:
            raise ValueError(
                f"no config: pass a path or set {CONFIG_ENV_VAR}"
            )
        return cls.from_file(path)


@dataclass
class JobRecord:
    id: str
    kind: str
    state: str = "queued"  # queued | running | done | failed
    progress: float = 0.0
    result: dict | None = None
    error: str | None = None
    coalesce_key: str | None = None

    def public(self) -> dict:
        d = asdict(self)
        d.pop("coalesce_key")
        return d


@dataclass
class SessionImage:
    id: str
    png_bytes: bytes
    wplus: WPlusCode
    style: StyleCode


class JobManager:
    """In-process queue; one record per job, persisted on state transitions."""

    _STATE_ORDER = {"queued": 0, "running": 1, "done": 2, "failed": 2}

    def __init__(self, store: ArtifactStore, workers: int = 1):
        self.store = store
        self._queue: queue.Queue = queue.Queue()
        self._records: dict[str, JobRecord] = {}
        self._runners: dict[str, callable] = {}
        self._lock = threading.Lock()
        self._threads = [
            threading.Thread(target=self._worker, name=f"job-worker-{i}", daemon=True)
            for i in range(max(1, workers))
        ]

    def start(self) -> None:
        for t in self._threads:
            t.start()

    def stop(self) -> None:
        for _ in self._threads:
            self._queue.put(None)
        for t in self._threads:
            t.join(timeout=5)

    def _persist(self, record: JobRecord) -> None:
        self.store.put_mutable(
            ArtifactKey("job", record.id, label=record.kind),
            json.dumps(record.public()).encode("utf-8"),
        )

    def submit(self, kind: str, runner, coalesce_key: str | None = None) -> JobRecord:
        with self._lock:
            if coalesce_key is not None:
                for record in self._records.values():
                    if record.coalesce_key == coalesce_key and record.state in (
                        "queued",
                        "running",
                    ):
                        return record
            record = JobRecord(id=uuid.uuid4().hex, kind=kind, coalesce_key=coalesce_key)
            self._records[record.id] = record
            self._runners[record.id] = runner
            self._persist(record)
        self._queue.put(record.id)
        return record

    def get(self, job_id: str) -> JobRecord:
        with self._lock:
            record = self._records.get(job_id)
        if record is None:
            raise ArtifactNotFoundError(f"unknown job {job_id}")
        return record

    def _set_progress(self, record: JobRecord, fraction: float) -> None:
        record.progress = max(record.progress, min(1.0, fraction))

    def _worker(self) -> None:
        while True:
            job_id = self._queue.get()
            if job_id is None:
                return
            with self._lock:
                record = self._records[job_id]
                runner = self._runners.pop(job_id)
                record.state = "running"
                self._persist(record)
            try:
                result = runner(lambda done, total: self._set_progress(record, done / total))
            except Exception as exc:  # noqa: BLE001 - job boundary
                with self._lock:
                    record.state = "failed"
                    record.error = f"{type(exc).__name__}: {exc}"
                    self._persist(record)
            else:
                with self._lock:
                    record.state = "done"
                    record.progress = 1.0
                    record.result = result
                    self._persist(record)


class GlobalManipulationRequest(BaseModel):
    image_id: str
    target: str
    neutral: str
    alpha: float = 3.0
    beta: float | None = None
    k: int | None = None


class OptimizeRequest(BaseModel):
    image_id: str
    prompt: str
    lambda_l2: float = 0.0
    lambda_id: float = 0.0
    steps: int = 250
    learning_rate: float = 0.1
    seed: int = 0


class TrainMapperRequest(BaseModel):
    name: str
    prompt: str
    enabled_branches: list[str] = ["coarse", "medium", "fine"]
    hidden_dim: int = 32
    lambda_l2: float = 0.8
    lambda_id: float = 0.1
    steps: int = 200
    batch_size: int = 8
    learning_rate: float = 5e-4
    seed: int = 0
    latent_count: int = 24


class ApplyMapperRequest(BaseModel):
    image_id: str


class PrecomputeRequest(BaseModel):
    pair_count: int = gd.DEFAULT_PAIR_COUNT
    perturb_alpha: float = gd.DEFAULT_PERTURB_ALPHA
    seed: int = 0
    sample_count: int = gd.DEFAULT_SIGMA_SAMPLES


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def _mapper_store_fingerprint(name: str) -> str:
    return hashlib.sha256(f"mapper:{name}".encode("utf-8")).hexdigest()


class ServiceState:
    def __init__(self, config: ServiceConfig, backend: ManipulationBackend | None = None):
        self.config = config
        self.backend = backend if backend is not None else load_backend(config.backend)
        self.store = ArtifactStore(config.store_root)
        self.jobs = JobManager(self.store, workers=config.workers)
        self.sessions: dict[str, SessionImage] = {}
        self._stats_cache: dict[str, gd.ChannelStats] = {}
        self.mappers: dict[str, mp.MapperModel] = {}
        self._load_registered_mappers()

    def _load_registered_mappers(self) -> None:
        for key in self.store.list("mapper"):
            self.mappers[key.label] = mp.mapper_from_bytes(self.store.get(key))

    def find_stats(self) -> gd.ChannelStats | None:
        """Newest stored stats matching the active backend, if any."""
        return gd.latest_stats_from_store(
            self.store, self.backend.fingerprint(), cache=self._stats_cache
        )

    def image_response_fields(self, png: bytes) -> dict:
        if len(png) <= self.config.max_inline_bytes:
            return {"image_png_base64": base64.b64encode(png).decode("ascii")}
        digest = hashlib.sha256(png).hexdigest()
        self.store.put(ArtifactKey("image", digest, label="result"), png)
        return {"image_key": digest}


def create_app(
    config: ServiceConfig | dict, backend: ManipulationBackend | None = None
) -> FastAPI:
    if isinstance(config, dict):
        config = ServiceConfig(**config)
    state = ServiceState(config, backend=backend)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        state.jobs.start()
        yield
        state.jobs.stop()

    app = FastAPI(title="style-toolkit service", lifespan=lifespan)
    app.state.toolkit = state

    @app.exception_handler(ToolkitError)
    async def toolkit_error_handler(request: Request, exc: ToolkitError):
        status = 400
        for klass, code in _STATUS_BY_CODE.items():
            if isinstance(exc, klass):
                status = code
                break
        return _error(status, exc.code, str(exc))

    @app.exception_handler(RequestValidationError)
    async def validation_error_handler(request: Request, exc: RequestValidationError):
        # Keep every error body in the {code, message} shape.
        first = exc.errors()[0] if exc.errors() else {}
        location = ".".join(str(part) for part in first.get("loc", ()))
        message = f"{location}: {first.get('msg', 'invalid request')}" if location else "invalid request"
        return _error(422, "validation_error", message)

    # -- images ---------------------------------------------------------------

    @app.post("/images")
    async def upload_image(file: UploadFile):
        data = await file.read()
        if len(data) > config.max_upload_bytes:
            return _error(413, "image_too_large",
                          f"image exceeds {config.max_upload_bytes} bytes")
        try:
            image = from_png_bytes(data)
        except ValueError as exc:
            return _error(400, "malformed_image", str(exc))
        if not state.backend.has_inverter:
            return _error(503, "inverter_unavailable",
                          "active backend has no inverter; cannot ingest images")
        wplus = state.backend.invert_image(image)
        style = state.backend.wplus_to_style(wplus)
        image_id = hashlib.sha256(data).hexdigest()[:16]
        state.sessions[image_id] = SessionImage(image_id, data, wplus, style)
        state.store.put(ArtifactKey("image", image_id, label="upload"), data)
        return {"image_id": image_id}

    def _session_or_error(image_id: str) -> SessionImage:
        session = state.sessions.get(image_id)
        if session is None:
            raise ArtifactNotFoundError(f"unknown image {image_id}")
        return session

    # -- global directions ------------------------------------------------------

    @app.post("/manipulate/global")
    def manipulate_global(req: GlobalManipulationRequest):
        if (req.beta is None) == (req.k is None):
            return _error(400, "bad_threshold", "provide exactly one of beta or k")
        session = _session_or_error(req.image_id)
        stats = state.find_stats()
        if stats is None:
            return _error(
                409, "stats_missing",
                "no channel stats for the active backend; "
                "POST /directions/precompute first",
            )
        delta_t = gd.encode_prompt_pair(state.backend, gd.PromptSpec(req.target, req.neutral))
        if req.beta is not None:
            query = gd.DirectionQuery(delta_t, beta=req.beta, alpha=req.alpha)
            direction = gd.direction_for_query(stats, query)
            beta_used = req.beta
        else:
            direction, selection = gd.direction_from_k(stats, delta_t, req.k)
            beta_used = selection.beta
        _, image = gd.apply_global(state.backend, session.style, direction, req.alpha)
        png = to_png_bytes(image)
        return {
            "active_channels": direction.active_count,
            "beta_used": beta_used,
            "alpha": req.alpha,
            **state.image_response_fields(png),
        }

    @app.post("/directions/precompute")
    def precompute(req: PrecomputeRequest):
        fingerprint = gd.stats_fingerprint(
            state.backend.fingerprint(), req.seed, req.pair_count,
            req.perturb_alpha, req.sample_count,
        )

        def run(progress):
            if not state.store.exists("stats", fingerprint):
                stats = gd.precompute_channel_stats(
                    state.backend,
                    sample_count=req.sample_count,
                    pair_count=req.pair_count,
                    perturb_alpha=req.perturb_alpha,
                    seed=req.seed,
                    progress=progress,
                )
                state.store.put(
                    ArtifactKey("stats", fingerprint, label="channel-stats"),
                    gd.stats_to_bytes(stats),
                )
                state._stats_cache[fingerprint] = stats
            return {"stats_key": fingerprint}

        record = state.jobs.submit("precompute", run, coalesce_key=fingerprint)
        return {"job_id": record.id, "stats_key": fingerprint}

    # -- optimization -----------------------------------------------------------

    @app.post("/manipulate/optimize")
    def manipulate_optimize(req: OptimizeRequest):
        session = _session_or_error(req.image_id)
        if req.lambda_id > 0 and not state.backend.has_identity:
            return _error(409, "identity_unavailable",
                          "identity loss requested but the backend has no identity embedder")
        cfg = opt.OptimizeConfig(
            lambda_l2=req.lambda_l2, lambda_id=req.lambda_id, steps=req.steps,
            learning_rate=req.learning_rate, seed=req.seed,
        )

        def run(progress):
            trace = opt.optimize_latent(
                state.backend, session.wplus, req.prompt, cfg, progress=progress
            )
            png = to_png_bytes(state.backend.generate_from_wplus(trace.final_code))
            image_digest = hashlib.sha256(png).hexdigest()
            state.store.put(ArtifactKey("image", image_digest, label="optimize-result"), png)
            buf = io.StringIO()
            import csv as _csv

            writer = _csv.writer(buf)
            writer.writerow(["step", "total", "clip", "l2", "id"])
            for step, r in enumerate(trace.records):
                writer.writerow([step, repr(r.total), repr(r.clip), repr(r.l2), repr(r.id)])
            trace_bytes = buf.getvalue().encode("utf-8")
            trace_digest = hashlib.sha256(trace_bytes).hexdigest()
            state.store.put(ArtifactKey("trace", trace_digest, label="optimize-trace"),
                            trace_bytes)
            return {
                "image_key": image_digest,
                "trace_key": trace_digest,
                "final_total": trace.final_terms.total,
            }

        record = state.jobs.submit("optimize", run)
        return {"job_id": record.id}

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        return state.jobs.get(job_id).public()

    @app.get("/jobs/{job_id}/result")
    def get_job_result(job_id: str):
        record = state.jobs.get(job_id)
        if record.state != "done":
            return _error(409, "job_not_done", f"job is {record.state}")
        result = dict(record.result or {})
        image_key = result.get("image_key")
        if image_key is not None:
            png = state.store.get(ArtifactKey("image", image_key))
            if len(png) <= config.max_inline_bytes:
                result["image_png_base64"] = base64.b64encode(png).decode("ascii")
        return result

    # -- mappers ----------------------------------------------------------------

    @app.post("/mappers")
    def train_mapper_endpoint(req: TrainMapperRequest):
        if req.name in state.mappers:
            return _error(409, "mapper_exists", f"mapper {req.name!r} already registered")
        if req.lambda_id > 0 and not state.backend.has_identity:
            return _error(409, "identity_unavailable",
                          "identity loss requested but the backend has no identity embedder")
        cfg = mp.MapperConfig(
            enabled_branches=tuple(req.enabled_branches),
            hidden_dim=req.hidden_dim,
            lambda_l2=req.lambda_l2,
            lambda_id=req.lambda_id,
            steps=req.steps,
            batch_size=req.batch_size,
            learning_rate=req.learning_rate,
            seed=req.seed,
        )

        def run(progress):
            latents = mp.sample_training_latents(state.backend, req.latent_count, req.seed)
            model = mp.train_mapper(state.backend, latents, req.prompt, cfg, progress=progress)
            state.store.put(
                ArtifactKey("mapper", _mapper_store_fingerprint(req.name), label=req.name),
                mp.mapper_to_bytes(model),
            )
            state.mappers[req.name] = model
            return {"name": req.name, "final_loss": model.loss_history[-1]}

        record = state.jobs.submit("train-mapper", run, coalesce_key=f"mapper:{req.name}")
        return {"job_id": record.id}

    @app.get("/mappers")
    def list_mappers():
        return [
            {
                "name": name,
                "prompt": model.prompt,
                "steps_trained": model.steps_trained,
                "enabled_branches": list(model.config.enabled_branches),
            }
            for name, model in sorted(state.mappers.items())
        ]

    @app.post("/mappers/{name}/apply")
    def apply_mapper_endpoint(name: str, req: ApplyMapperRequest):
        model = state.mappers.get(name)
        if model is None:
            return _error(404, "mapper_not_found", f"unknown mapper {name!r}")
        session = _session_or_error(req.image_id)
        if mp.geometry_hash(model.geometry) != mp.geometry_hash(state.backend.geometry):
            return _error(409, "geometry_mismatch",
                          "mapper checkpoint geometry does not match the active backend")
        w_out, image = mp.apply_mapper(model, state.backend, session.wplus)
        png = to_png_bytes(image)
        return {"name": name, **state.image_response_fields(png)}

    # -- artifacts and health -----------------------------------------------------

    @app.get("/artifacts")
    def list_artifacts(kind: str):
        try:
            keys = state.store.list(kind)
        except ValueError as exc:
            return _error(400, "bad_kind", str(exc))
        return [
            {**state.store.record_info(k), "fingerprint": k.fingerprint, "kind": k.kind}
            for k in keys
        ]

    @app.get("/artifacts/{kind}/{fingerprint}")
    def fetch_artifact(kind: str, fingerprint: str):
        data = state.store.get(ArtifactKey(kind, fingerprint))
        return Response(content=data, media_type="application/octet-stream")

    if config.frontend_dir and Path(config.frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount(
            "/editor", StaticFiles(directory=config.frontend_dir, html=True), name="editor"
        )

    @app.get("/health")
    def health():
        return {
            "backend_kind": state.backend.kind,
            "fingerprint": state.backend.fingerprint(),
            "geometry": json.loads(state.backend.geometry.to_json()),
            "embed_dim": state.backend.embed_dim,
            "stats_available": state.find_stats() is not None,
            "identity_available": state.backend.has_identity,
            "inverter_available": state.backend.has_inverter,
            "interactive_defaults": {
                domain: {"alpha": d.alpha, "k": d.k}
                for domain, d in gd.INTERACTIVE_DEFAULTS.items()
            },
        }

    return app


def run_server(config: ServiceConfig) -> None:  # pragma: no cover - thin uvicorn wrapper
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port)
