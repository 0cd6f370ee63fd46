from __future__ import annotations

from collections.abc import Callable
import logging
import time

from fastapi import FastAPI, HTTPException, Query, Response
from fastapi.responses import JSONResponse, PlainTextResponse
from prometheus_client import CONTENT_TYPE_LATEST, generate_latest

from .config import OnhsSettings
from .errors import ErrorCode, OnhsError
from .handles import parse_handle, parse_label_path
from .models import ConfigResponse
from .registry import Registry
from .resolver import resolve
from .state import get_state
from .zone import export_zone

logger = logging.getLogger("onhs")

# Module-level Query defaults to satisfy lint rule B008
LABELS_Q = Query(default=None, description="Dotted label path below the handle")
UNSAFE_Q = Query(default=False, description="Return a compromised handle's last binding")
ORIGIN_Q = Query(default=None, description="Zone origin; defaults to the handle root")

_GONE = {ErrorCode.CANCELLED, ErrorCode.COMPROMISED, ErrorCode.EXPIRED}
_CONFLICT = {
    ErrorCode.HANDLE_EXISTS,
    ErrorCode.STATE_FINAL,
    ErrorCode.SEQ_REPLAY,
    ErrorCode.CYCLE,
    ErrorCode.CHAIN_TOO_LONG,
}


def status_for(code: ErrorCode) -> int:
    if code in (ErrorCode.NOT_FOUND, ErrorCode.NO_BINDING):
        return 404
    if code in _CONFLICT:
        return 409
    if code in _GONE:
        return 410
    return 400


def _http_error(exc: OnhsError) -> HTTPException:
    return HTTPException(
        status_code=status_for(exc.code),
        detail={
            "code": exc.code.value,
            "detail": exc.detail,
            "chain": [str(h) for h in exc.chain],
        },
    )


def create_app(
    initial_settings: OnhsSettings | None = None,
    registry: Registry | None = None,
    clock: Callable[[], float] = time.time,
) -> FastAPI:
    """Read-only admin surface; all mutations go through the wire protocol."""
    app = FastAPI(default_response_class=JSONResponse)

    state = get_state()
    if initial_settings is not None:
        state.settings = initial_settings
    if registry is not None:
        state.registry = registry

    @app.get("/health")
    def health() -> dict:
        with state.lock:
            count = len(state.registry) if state.registry is not None else 0
        return {"status": "ok", "handles": count}

    @app.get("/metrics")
    def metrics() -> Response:
        data = generate_latest()
        return Response(content=data, media_type=CONTENT_TYPE_LATEST)

    @app.get("/config", response_model=ConfigResponse)
    def get_config() -> ConfigResponse:
        with state.lock:
            return ConfigResponse(data=state.settings.to_public_dict())

    @app.get("/handles/{handle}")
    def get_handle(handle: str) -> dict:
        try:
            record = state.require_registry().require(parse_handle(handle))
        except OnhsError as exc:
            raise _http_error(exc) from exc
        data = record.model_dump(mode="json")
        data.pop("password_verifier", None)
        return data

    @app.get("/resolve/{handle}")
    def resolve_handle(handle: str, labels: str | None = LABELS_Q, unsafe: bool = UNSAFE_Q) -> dict:
        try:
            label_path = parse_label_path(labels) if labels else ()
            result = resolve(
                state.require_registry(),
                parse_handle(handle),
                label_path,
                clock(),
                max_depth=state.settings.max_depth,
                unsafe=unsafe,
            )
        except OnhsError as exc:
            raise _http_error(exc) from exc
        return result.model_dump(mode="json")

    @app.get("/zone", response_class=PlainTextResponse)
    def get_zone(origin: str | None = ORIGIN_Q) -> str:
        try:
            return export_zone(
                state.require_registry(),
                origin or state.settings.handle_root,
                clock(),
                state.settings.zone_txt_ttl,
            )
        except OnhsError as exc:
            raise _http_error(exc) from exc

    return app
