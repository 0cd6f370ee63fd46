"""Handle tokens and their embedding as DNS labels.

Grammar::

    handle := "h" type rest
    type "1": rest := "g" alg-decimal "k" digest-hex      (self-assigned public-key handle)
    type "0": rest := digest-hex                           (sponsor-assigned, password updates)

Structural characters are lowercase and case-sensitive; hex digits parse in either case and
format as uppercase. The canonical text is the only representation used on the wire and on disk.
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
from enum import Enum
import re
from typing import Any

from pydantic import BaseModel, ConfigDict, field_validator, model_serializer, model_validator

from .errors import ErrorCode, OnhsError


class AuthType(str, Enum):
    PUBLIC_KEY = "1"
    SPONSOR_PASSWORD = "0"


MAX_LABEL_LEN = 63
MAX_NAME_LEN = 253
# room for one handle label, two dots and a one-character root
MAX_LABEL_PATH_LEN = MAX_NAME_LEN - MAX_LABEL_LEN - 3
ROOT_LABEL_PATH = "@"

_DIGEST_BOUNDS = {
    AuthType.PUBLIC_KEY: (8, 40),
    AuthType.SPONSOR_PASSWORD: (15, 40),
}

_HANDLE_RE = re.compile(r"h(?:1g([1-9][0-9]*)k([0-9A-Fa-f]+)|0([0-9A-Fa-f]+))")
_HEX_RE = re.compile(r"[0-9A-Fa-f]+")
_LABEL_RE = re.compile(r"[a-z](?:[a-z0-9-]*[a-z0-9])?")
_ROOT_LABEL_RE = re.compile(r"[a-z0-9](?:[a-z0-9-]*[a-z0-9])?")


def digest_bounds(auth_type: AuthType) -> tuple[int, int]:
    return _DIGEST_BOUNDS[auth_type]


class Handle(BaseModel):
    model_config = ConfigDict(frozen=True)

    auth_type: AuthType
    alg_code: int | None = None
    digest_hex: str

    @model_validator(mode="before")
    @classmethod
    def _from_text(cls, data: Any) -> Any:
        if isinstance(data, str):
            try:
                parsed = parse_handle(data)
            except OnhsError as exc:
                raise ValueError(str(exc)) from exc
            return {
                "auth_type": parsed.auth_type,
                "alg_code": parsed.alg_code,
                "digest_hex": parsed.digest_hex,
            }
        return data

    @field_validator("digest_hex")
    @classmethod
    def _canonical_digest(cls, value: str) -> str:
        if not _HEX_RE.fullmatch(value):
            raise ValueError("digest must be hexadecimal")
        return value.upper()

    @model_validator(mode="after")
    def _check_shape(self) -> Handle:
        lo, hi = digest_bounds(self.auth_type)
        if not lo <= len(self.digest_hex) <= hi:
            raise ValueError(f"digest length must be within {lo}..{hi}")
        if self.auth_type is AuthType.PUBLIC_KEY:
            if self.alg_code is None or self.alg_code < 1:
                raise ValueError("public-key handles need an algorithm code >= 1")
        elif self.alg_code is not None:
            raise ValueError("password handles carry no algorithm code")
        if len(format_handle(self)) > MAX_LABEL_LEN:
            raise ValueError("handle longer than a DNS label")
        return self

    @model_serializer(mode="plain")
    def _to_text(self) -> str:
        return format_handle(self)

    @property
    def is_public_key(self) -> bool:
        return self.auth_type is AuthType.PUBLIC_KEY

    def __str__(self) -> str:
        return format_handle(self)


def parse_handle(text: str) -> Handle:
    if not isinstance(text, str):
        raise OnhsError(ErrorCode.BAD_HANDLE, "handle must be text")
    if len(text) > MAX_LABEL_LEN:
        raise OnhsError(ErrorCode.BAD_HANDLE, "longer than a DNS label")
    match = _HANDLE_RE.fullmatch(text)
    if match is None:
        raise OnhsError(ErrorCode.BAD_HANDLE, "malformed handle")
    alg, key_digest, password_digest = match.groups()
    if alg is not None:
        auth_type, digest = AuthType.PUBLIC_KEY, key_digest
    else:
        auth_type, digest = AuthType.SPONSOR_PASSWORD, password_digest
    lo, hi = digest_bounds(auth_type)
    if not lo <= len(digest) <= hi:
        raise OnhsError(ErrorCode.BAD_HANDLE, f"digest length must be within {lo}..{hi}")
    return Handle(
        auth_type=auth_type,
        alg_code=int(alg) if alg is not None else None,
        digest_hex=digest,
    )


def format_handle(h: Handle) -> str:
    if h.auth_type is AuthType.PUBLIC_KEY:
        return f"h1g{h.alg_code}k{h.digest_hex}"
    return f"h0{h.digest_hex}"


def validate_label(label: str) -> str:
    if len(label) > MAX_LABEL_LEN or not _LABEL_RE.fullmatch(label):
        raise OnhsError(ErrorCode.BAD_LABEL, "labels are lowercase letters, digits and hyphens")
    return label


def validate_labels(labels: Iterable[str]) -> tuple[str, ...]:
    checked = tuple(validate_label(label) for label in labels)
    if len(".".join(checked)) > MAX_LABEL_PATH_LEN:
        raise OnhsError(ErrorCode.BAD_LABEL, "label path too long to embed under a root")
    return checked


def format_label_path(labels: Iterable[str]) -> str:
    """Single-token form of a label path: '@' for the handle itself."""
    labels = tuple(labels)
    return ".".join(labels) if labels else ROOT_LABEL_PATH


def parse_label_path(text: str) -> tuple[str, ...]:
    if text == ROOT_LABEL_PATH:
        return ()
    return validate_labels(text.split("."))


def normalize_root(root: str) -> str:
    name = root[:-1] if root.endswith(".") else root
    name = name.lower()
    if not name or len(name) > MAX_NAME_LEN:
        raise OnhsError(ErrorCode.BAD_LABEL, "invalid root domain")
    for part in name.split("."):
        if len(part) > MAX_LABEL_LEN or not _ROOT_LABEL_RE.fullmatch(part):
            raise OnhsError(ErrorCode.BAD_LABEL, "invalid root domain")
    return name


@dataclass(frozen=True)
class HandleFqdn:
    labels: tuple[str, ...]
    handle: Handle
    root: str

    @property
    def text(self) -> str:
        return ".".join((*self.labels, format_handle(self.handle), self.root))

    def __str__(self) -> str:
        return self.text


def embed_fqdn(h: Handle, labels: Iterable[str], root: str) -> HandleFqdn:
    fqdn = HandleFqdn(labels=validate_labels(labels), handle=h, root=normalize_root(root))
    if len(fqdn.text) > MAX_NAME_LEN:
        raise OnhsError(ErrorCode.BAD_LABEL, "domain name too long")
    return fqdn


def extract_fqdn(text: str, root: str) -> HandleFqdn:
    root_name = normalize_root(root)
    name = text[:-1] if text.endswith(".") else text
    suffix = "." + root_name
    if not name.lower().endswith(suffix):
        raise OnhsError(ErrorCode.WRONG_ROOT, f"not under {root_name}")
    head = name[: -len(suffix)]
    if not head:
        raise OnhsError(ErrorCode.BAD_HANDLE, "missing handle label")
    parts = head.split(".")
    handle = parse_handle(parts[-1])
    return HandleFqdn(labels=validate_labels(parts[:-1]), handle=handle, root=root_name)
