from __future__ import annotations

from enum import Enum
import ipaddress
import re
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, model_serializer, model_validator

from .errors import ErrorCode, OnhsError
from .handles import ROOT_LABEL_PATH, Handle, format_label_path


class AddressKind(str, Enum):
    IPV4 = "ipv4"
    UDP = "udp"
    URL = "url"


_PORT_RE = re.compile(r"0|[1-9][0-9]{0,4}")
# printable ASCII without space or the log field separator
_URL_RE = re.compile(r"[!-{}~]+")


def _parse_ipv4(text: str) -> ipaddress.IPv4Address:
    try:
        return ipaddress.IPv4Address(text)
    except ValueError:
        raise OnhsError(ErrorCode.BAD_ADDRESS, "invalid dotted-quad address") from None


class Address(BaseModel):
    """Where a handle currently lives.

    Text forms: ``192.0.2.7``, ``udp:192.0.2.7:5353`` and ``url:<url>``.
    """

    model_config = ConfigDict(frozen=True)

    kind: AddressKind
    ip: int | None = None
    port: int | None = Field(default=None, ge=0, le=65535)
    url: str | None = None

    @model_validator(mode="before")
    @classmethod
    def _from_text(cls, data: Any) -> Any:
        if isinstance(data, str):
            try:
                parsed = parse_address(data)
            except OnhsError as exc:
                raise ValueError(str(exc)) from exc
            return {"kind": parsed.kind, "ip": parsed.ip, "port": parsed.port, "url": parsed.url}
        return data

    @model_validator(mode="after")
    def _check_kind(self) -> Address:
        if self.kind is AddressKind.URL:
            if not self.url or not _URL_RE.fullmatch(self.url):
                raise ValueError("url addresses need printable text without spaces or '|'")
        else:
            if self.ip is None or not 0 <= self.ip <= 0xFFFFFFFF:
                raise ValueError("ip must be a 32-bit unsigned integer")
            if self.kind is AddressKind.UDP and self.port is None:
                raise ValueError("udp endpoints need a port")
        return self

    @model_serializer(mode="plain")
    def _to_text(self) -> str:
        return self.text

    @property
    def dotted_quad(self) -> str | None:
        return str(ipaddress.IPv4Address(self.ip)) if self.ip is not None else None

    @property
    def text(self) -> str:
        if self.kind is AddressKind.IPV4:
            return str(self.dotted_quad)
        if self.kind is AddressKind.UDP:
            return f"udp:{self.dotted_quad}:{self.port}"
        return f"url:{self.url}"

    def __str__(self) -> str:
        return self.text


def parse_address(text: str) -> Address:
    if text.startswith("udp:"):
        host, sep, port = text[4:].rpartition(":")
        if not sep or not _PORT_RE.fullmatch(port) or int(port) > 65535:
            raise OnhsError(ErrorCode.BAD_ADDRESS, "udp endpoint needs ip:port")
        return Address(kind=AddressKind.UDP, ip=int(_parse_ipv4(host)), port=int(port))
    if text.startswith("url:"):
        url = text[4:]
        if not _URL_RE.fullmatch(url):
            raise OnhsError(ErrorCode.BAD_ADDRESS, "url must be printable without spaces or '|'")
        return Address(kind=AddressKind.URL, url=url)
    return Address(kind=AddressKind.IPV4, ip=int(_parse_ipv4(text)))


class Binding(BaseModel):
    model_config = ConfigDict(frozen=True)

    labels: tuple[str, ...] = ()
    address: Address
    ttl_seconds: int = Field(ge=0)
    expiry: int
    # signed Assign line that produced this binding
    proof: str

    def is_live(self, now: float) -> bool:
        return now < self.expiry


class Delegation(BaseModel):
    model_config = ConfigDict(frozen=True)

    target: Handle
    expiry: int
    proof: str

    def is_live(self, now: float) -> bool:
        return now < self.expiry


class RecordState(str, Enum):
    ACTIVE = "active"
    CANCELLED = "cancelled"
    TRANSFERRED = "transferred"
    COMPROMISED = "compromised"

    @property
    def is_terminal(self) -> bool:
        return self is not RecordState.ACTIVE


class HandleRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    handle: Handle
    state: RecordState = RecordState.ACTIVE
    transfer_target: Handle | None = None
    owner_pub_hex: str | None = None
    password_verifier: str | None = Field(default=None, repr=False)
    seq: int = Field(default=0, ge=0)
    bindings: dict[str, Binding] = Field(default_factory=dict)
    delegation: Delegation | None = None
    # signed line of the Cancel/Transfer/Compromise that ended the record
    state_proof: str | None = None
    created_at: int
    updated_at: int

    @property
    def key(self) -> str:
        return str(self.handle)

    @property
    def owner_pub(self) -> bytes | None:
        return bytes.fromhex(self.owner_pub_hex) if self.owner_pub_hex is not None else None

    def live_delegation(self, now: float) -> Delegation | None:
        if self.delegation is not None and self.delegation.is_live(now):
            return self.delegation
        return None

    def binding_for(self, labels: tuple[str, ...]) -> Binding | None:
        """Labeled binding, falling back to the handle's own binding."""
        found = self.bindings.get(format_label_path(labels))
        if found is None:
            found = self.bindings.get(ROOT_LABEL_PATH)
        return found


class ResolutionResult(BaseModel):
    address: Address
    chain: list[Handle]
    labels: tuple[str, ...] = ()
    binding_proof: str
    # signed Delegate/Transfer line for every hop except the last
    hop_proofs: list[str] = Field(default_factory=list)
    verified: bool
    ttl_seconds: int = Field(ge=0)
    compromised: bool = False
    resolved_at: int


class ConfigResponse(BaseModel):
    data: dict
