"""Signed lifecycle updates and their line encodings.

Canonical message (the exact bytes that get signed, UTF-8)::

    ONHSv1|<OP>|<handle>|<seq>|<field>|...|<field>

Fields per op: CREATE ``<pubhex>`` (or the password verifier for type 0); ASSIGN
``<labels|@>|<address>|<ttl>|<expiry>``; DELEGATE ``<target>|<expiry>``; TRANSFER
``<target>``; CANCEL and COMPROMISE none.

A proof line appends ``|<sighex>|<pubhex>`` (``|pw|-`` for password-authenticated updates) and
a log line appends ``|<accepted_at>`` to the proof line.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import re

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .crypto import KeyPair, Signature, sign
from .errors import ErrorCode, OnhsError
from .handles import (
    Handle,
    format_label_path,
    parse_handle,
    parse_label_path,
    validate_labels,
)
from .models import Address, parse_address

PROTOCOL_TAG = "ONHSv1"
PASSWORD_MARK = "pw"

MAX_UINT_DIGITS = 20

_HEX_RE = re.compile(r"[0-9a-f]+")
_UINT_RE = re.compile(rf"0|[1-9][0-9]{{0,{MAX_UINT_DIGITS - 1}}}")


class Op(str, Enum):
    CREATE = "CREATE"
    ASSIGN = "ASSIGN"
    DELEGATE = "DELEGATE"
    CANCEL = "CANCEL"
    TRANSFER = "TRANSFER"
    COMPROMISE = "COMPROMISE"


FIELD_COUNTS = {
    Op.CREATE: 1,
    Op.ASSIGN: 4,
    Op.DELEGATE: 2,
    Op.TRANSFER: 1,
    Op.CANCEL: 0,
    Op.COMPROMISE: 0,
}


def is_lower_hex(text: str) -> bool:
    return bool(_HEX_RE.fullmatch(text)) and len(text) % 2 == 0


def parse_uint(text: str, what: str, code: ErrorCode = ErrorCode.BAD_REQUEST) -> int:
    if not _UINT_RE.fullmatch(text):
        raise OnhsError(code, f"{what} must be a non-negative integer")
    return int(text)


class UpdateRequest(BaseModel):
    """One of the six lifecycle operations plus its authentication material."""

    model_config = ConfigDict(frozen=True)

    op: Op
    handle: Handle
    seq: int = Field(ge=0)
    labels: tuple[str, ...] = ()
    address: Address | None = None
    ttl_seconds: int | None = Field(default=None, ge=0)
    expiry: int | None = None
    target: Handle | None = None
    # CREATE field for type 0 handles; set by the registry, never by clients
    verifier: str | None = Field(default=None, repr=False)
    signature_hex: str | None = None
    pub_hex: str | None = None
    password: str | None = Field(default=None, repr=False)

    @model_validator(mode="after")
    def _check_fields(self) -> UpdateRequest:
        if self.op is Op.ASSIGN:
            if self.address is None or self.ttl_seconds is None or self.expiry is None:
                raise ValueError("ASSIGN needs address, ttl and expiry")
        if self.op is Op.DELEGATE and (self.target is None or self.expiry is None):
            raise ValueError("DELEGATE needs target and expiry")
        if self.op is Op.TRANSFER and self.target is None:
            raise ValueError("TRANSFER needs a target")
        validate_labels(self.labels)
        if self.expiry is not None and self.expiry < 0:
            raise ValueError("expiry must be non-negative")
        for value in (self.signature_hex, self.pub_hex):
            if value is not None and not is_lower_hex(value):
                raise ValueError("signature and public key must be lowercase hex")
        return self

    def fields(self) -> list[str]:
        if self.op is Op.CREATE:
            if self.handle.is_public_key:
                return [self.pub_hex or ""]
            return [self.verifier or ""]
        if self.op is Op.ASSIGN:
            return [
                format_label_path(self.labels),
                str(self.address),
                str(self.ttl_seconds),
                str(self.expiry),
            ]
        if self.op is Op.DELEGATE:
            return [str(self.target), str(self.expiry)]
        if self.op is Op.TRANSFER:
            return [str(self.target)]
        return []

    def message(self) -> str:
        head = [PROTOCOL_TAG, self.op.value, str(self.handle), str(self.seq)]
        return "|".join([*head, *self.fields()])

    def message_bytes(self) -> bytes:
        return self.message().encode("utf-8")

    @property
    def signature(self) -> Signature | None:
        if self.signature_hex is None or self.handle.alg_code is None:
            return None
        return Signature(self.handle.alg_code, bytes.fromhex(self.signature_hex))

    def sign(self, kp: KeyPair) -> UpdateRequest:
        # pub_hex is part of the CREATE message, so it must be set before signing
        unsigned = self.model_copy(update={"pub_hex": kp.public_key_bytes.hex()})
        sig = sign(unsigned.message_bytes(), kp)
        return unsigned.model_copy(update={"signature_hex": sig.hex()})

    def with_password(self, password: str) -> UpdateRequest:
        return self.model_copy(update={"password": password})

    @property
    def password_auth(self) -> bool:
        return not self.handle.is_public_key

    def proof_line(self) -> str:
        if self.password_auth:
            return f"{self.message()}|{PASSWORD_MARK}|-"
        return f"{self.message()}|{self.signature_hex}|{self.pub_hex}"


@dataclass(frozen=True)
class LogEntry:
    request: UpdateRequest
    accepted_at: int

    def line(self) -> str:
        return f"{self.request.proof_line()}|{self.accepted_at}"


def parse_proof_line(line: str) -> UpdateRequest:
    """Decode a proof line back into the request it records.

    Raises BAD_REQUEST on anything that is not byte-for-byte canonical.
    """
    parts = line.split("|")
    if len(parts) < 6 or parts[0] != PROTOCOL_TAG:
        raise OnhsError(ErrorCode.BAD_REQUEST, "not a proof line")
    try:
        op = Op(parts[1])
    except ValueError:
        raise OnhsError(ErrorCode.BAD_REQUEST, "unknown op") from None
    count = FIELD_COUNTS[op]
    if len(parts) != 4 + count + 2:
        raise OnhsError(ErrorCode.BAD_REQUEST, "wrong field count")
    handle = parse_handle(parts[2])
    seq = parse_uint(parts[3], "seq")
    fields = parts[4 : 4 + count]
    sig_text, pub_text = parts[-2], parts[-1]

    data: dict = {"op": op, "handle": handle, "seq": seq}
    if (sig_text, pub_text) == (PASSWORD_MARK, "-"):
        if handle.is_public_key:
            raise OnhsError(ErrorCode.BAD_REQUEST, "public-key handles need signatures")
    else:
        if not (is_lower_hex(sig_text) and is_lower_hex(pub_text)):
            raise OnhsError(ErrorCode.BAD_REQUEST, "signature and key must be lowercase hex")
        data["signature_hex"] = sig_text
        data["pub_hex"] = pub_text

    if op is Op.CREATE:
        if handle.is_public_key:
            if fields[0] != pub_text:
                raise OnhsError(ErrorCode.BAD_REQUEST, "create key differs from signing key")
        else:
            data["verifier"] = fields[0]
    elif op is Op.ASSIGN:
        data["labels"] = parse_label_path(fields[0])
        data["address"] = parse_address(fields[1])
        data["ttl_seconds"] = parse_uint(fields[2], "ttl")
        data["expiry"] = parse_uint(fields[3], "expiry")
    elif op is Op.DELEGATE:
        data["target"] = parse_handle(fields[0])
        data["expiry"] = parse_uint(fields[1], "expiry")
    elif op is Op.TRANSFER:
        data["target"] = parse_handle(fields[0])

    try:
        request = UpdateRequest(**data)
    except ValidationError as exc:
        raise OnhsError(ErrorCode.BAD_REQUEST, "invalid update fields") from exc
    if request.proof_line() != line:
        raise OnhsError(ErrorCode.BAD_REQUEST, "non-canonical proof line")
    return request


def parse_log_line(line: str) -> LogEntry:
    head, sep, accepted = line.rstrip("\n").rpartition("|")
    if not sep:
        raise OnhsError(ErrorCode.CORRUPT_LOG, "missing acceptance time")
    try:
        request = parse_proof_line(head)
        accepted_at = parse_uint(accepted, "accepted_at")
    except OnhsError as exc:
        raise OnhsError(ErrorCode.CORRUPT_LOG, exc.detail) from exc
    return LogEntry(request=request, accepted_at=accepted_at)
