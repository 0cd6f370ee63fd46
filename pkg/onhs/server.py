"""Threaded TCP server speaking the line protocol over one authoritative registry."""

from __future__ import annotations

from collections.abc import Callable
from datetime import datetime, timezone
import logging
import signal
import socketserver
import threading
import time

import uvicorn

from .api import create_app
from .config import OnhsSettings
from .errors import ErrorCode, OnhsError
from .metrics import wire_requests_total
from .protocol import (
    PasswordCreate,
    Verb,
    WireRequest,
    decode_resolve,
    decode_update,
    format_error,
    format_hex_payload,
    format_record,
    format_resolution,
    parse_request,
)
from .registry import Registry
from .resolver import resolve
from .scheduler import OnhsScheduler
from .state import OnhsState, get_state
from .storage import write_snapshot
from .zone import export_zone

logger = logging.getLogger("onhs.server")


class OnhsService:
    """Verb dispatch: one request line in, one response line out, never an exception."""

    def __init__(
        self,
        registry: Registry,
        settings: OnhsSettings,
        clock: Callable[[], float] = time.time,
    ):
        self.registry = registry
        self.settings = settings
        self.clock = clock

    def handle_line(self, line: str) -> str:
        verb = "-"
        try:
            request = parse_request(line)
            verb = request.verb.value
            response = self._dispatch(request.verb, request)
            status = "OK"
        except OnhsError as exc:
            response = format_error(exc)
            status = exc.code.value
        except Exception:  # noqa: BLE001
            logger.exception("Unexpected failure handling %s request", verb)
            response = format_error(OnhsError(ErrorCode.INTERNAL, "internal-error"))
            status = ErrorCode.INTERNAL.value
        wire_requests_total.labels(verb=verb, status=status).inc()
        return response

    def _dispatch(self, verb: Verb, request: WireRequest) -> str:
        now = self.clock()
        if verb is Verb.RESOLVE:
            query = decode_resolve(request)
            result = resolve(
                self.registry,
                query.handle,
                query.labels,
                now,
                max_depth=self.settings.max_depth,
                unsafe=query.unsafe,
            )
            return format_resolution(result)
        if verb is Verb.EXPORT_ZONE:
            if len(request.fields) > 1:
                raise OnhsError(ErrorCode.BAD_REQUEST, "EXPORT-ZONE takes at most an origin")
            origin = request.fields[0] if request.fields else self.settings.handle_root
            text = export_zone(self.registry, origin, now, self.settings.zone_txt_ttl)
            return format_hex_payload(text)
        update = decode_update(request)
        if isinstance(update, PasswordCreate):
            record = self.registry.create_password_handle(update.password, now)
        else:
            record = self.registry.apply(update, now)
        return format_record(record)


class _LineHandler(socketserver.StreamRequestHandler):
    server: OnhsTCPServer

    def handle(self) -> None:
        limit = self.server.max_request_bytes
        while True:
            # the newline does not count towards the limit
            raw = self.rfile.readline(limit + 2)
            if not raw:
                return
            if len(raw.removesuffix(b"\n")) > limit:
                self._reply("ERR BAD_REQUEST too-long")
                # the rest of the oversized line cannot be framed; drop the connection
                return
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError:
                self._reply("ERR BAD_REQUEST bad-encoding")
                continue
            self._reply(self.server.service.handle_line(line))

    def _reply(self, response: str) -> None:
        self.wfile.write(response.encode("utf-8") + b"\n")
        self.wfile.flush()


class OnhsTCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: OnhsService, max_request_bytes: int):
        self.service = service
        self.max_request_bytes = max_request_bytes
        super().__init__(address, _LineHandler)


def build_server(
    settings: OnhsSettings, registry: Registry, clock: Callable[[], float] = time.time
) -> OnhsTCPServer:
    service = OnhsService(registry, settings, clock)
    return OnhsTCPServer(
        (settings.bind_host, settings.bind_port), service, settings.max_request_bytes
    )


def _start_admin(state: OnhsState) -> threading.Thread | None:
    port = state.settings.admin_port
    if port is None:
        return None
    config = uvicorn.Config(
        create_app(state.settings), host=state.settings.bind_host, port=port, log_level="warning"
    )
    thread = threading.Thread(
        target=uvicorn.Server(config).run, name="onhs-admin", daemon=True
    )
    thread.start()
    logger.info("Admin surface on %s:%d", state.settings.bind_host, port)
    return thread


def shutdown_service(state: OnhsState) -> None:
    """Stop jobs, flush the log and leave a final snapshot behind."""
    if state.scheduler is not None:
        state.scheduler.shutdown()
        state.scheduler = None
    registry = state.registry
    if registry is None:
        return
    registry.close()
    try:
        digest = write_snapshot(state.settings.resolved_snapshot_path, registry.records())
        state.last_snapshot_hash = digest
    except OSError as exc:
        logger.warning("Final snapshot failed: %s", exc)


def serve(settings: OnhsSettings, registry: Registry | None = None) -> None:
    """Run until interrupted; the log is flushed and a snapshot written on the way out."""
    state = get_state()
    state.settings = settings
    if registry is None:
        registry = Registry.open(
            settings.resolved_log_path, password_iterations=settings.password_iterations
        )
    state.registry = registry
    state.started_at = datetime.now(timezone.utc)
    server = build_server(settings, registry)
    state.scheduler = OnhsScheduler(state)
    state.scheduler.start()
    _start_admin(state)

    def _stop(signum, frame) -> None:  # noqa: ARG001
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, _stop)
    host, port = server.server_address[:2]
    logger.info("Serving %d handles on %s:%d", len(registry), host, port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        shutdown_service(state)
        logger.info("Shut down cleanly")
