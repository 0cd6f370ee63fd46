from __future__ import annotations

from collections.abc import Sequence
import logging
import re
import socket

from tenacity import (
    Retrying,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from .errors import ErrorCode, OnhsError
from .handles import Handle
from .models import ResolutionResult
from .protocol import (
    encode_export_zone,
    encode_password_create,
    encode_resolve,
    encode_update,
    parse_hex_payload,
    parse_record_response,
    parse_resolution,
)
from .resolver import verify_result
from .updates import UpdateRequest

logger = logging.getLogger("onhs.client")

_PORT_RE = re.compile(r"[0-9]{1,5}")


def parse_server_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host or not _PORT_RE.fullmatch(port) or not 0 < int(port) <= 65535:
        raise OnhsError(ErrorCode.USAGE, "server must be host:port")
    return host, int(port)


class OnhsClient:
    """One short-lived connection per request; connection failures are retried."""

    def __init__(self, host: str, port: int, timeout: float = 5.0, retries: int = 2):
        self.host = host
        self.port = port
        self.timeout = timeout
        self.retries = retries

    def request(self, line: str) -> str:
        retrying = Retrying(
            reraise=True,
            stop=stop_after_attempt(self.retries + 1),
            wait=wait_exponential(multiplier=0.2, min=0.2, max=2),
            retry=retry_if_exception_type(ConnectionError),
        )
        return retrying(self._exchange, line)

    def _exchange(self, line: str) -> str:
        with socket.create_connection((self.host, self.port), timeout=self.timeout) as sock:
            sock.sendall(line.encode("utf-8") + b"\n")
            with sock.makefile("rb") as stream:
                raw = stream.readline()
        if not raw:
            raise ConnectionError("server closed the connection without answering")
        return raw.decode("utf-8", errors="replace").rstrip("\n")

    def submit(self, update: UpdateRequest) -> tuple[Handle, int, str]:
        return parse_record_response(self.request(encode_update(update)))

    def create_password_handle(self, password: str) -> tuple[Handle, int, str]:
        return parse_record_response(self.request(encode_password_create(password)))

    def resolve(
        self,
        handle: Handle | str,
        labels: Sequence[str] = (),
        now: int = 0,
        unsafe: bool = False,
    ) -> ResolutionResult:
        line = self.request(encode_resolve(handle, labels, unsafe))
        return parse_resolution(line, handle, labels, now)

    def __call__(self, handle: Handle, labels: tuple, now: int) -> ResolutionResult:
        return self.resolve(handle, labels, now)

    def export_zone(self, origin: str | None = None) -> str:
        return parse_hex_payload(self.request(encode_export_zone(origin)))


def response_verifies(
    line: str, handle: Handle | str, labels: Sequence[str] = (), strict: bool = False
) -> bool:
    """End-to-end check of a raw RESOLVE response line; any decoding failure is False."""
    try:
        result = parse_resolution(line, handle, labels)
    except (OnhsError, ValueError):
        return False
    return verify_result(result, strict=strict)
