"""Line-oriented wire protocol: one UTF-8 request line in, one response line out.

Requests (fields separated by single spaces)::

    CREATE <handle> <pubhex> <sighex>          CREATE h0 <password-hex>
    ASSIGN <h> <seq> <labels|@> <address> <ttl> <expiry> <auth>
    DELEGATE <h> <seq> <target> <expiry> <auth>
    TRANSFER <h> <seq> <target> <auth>
    CANCEL <h> <seq> <auth>                    COMPROMISE <h> <seq> <auth>
    RESOLVE <h> <n> <label1> .. <labeln> [unsafe]
    EXPORT-ZONE [origin]

``<auth>`` is ``<sighex> <pubhex>`` for public-key handles and ``<password-hex>`` for type 0.
Responses start with ``OK`` or ``ERR <CODE> <detail>``.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
import re

from pydantic import ValidationError

from .errors import ErrorCode, OnhsError
from .handles import Handle, parse_handle, parse_label_path, validate_labels
from .models import HandleRecord, ResolutionResult, parse_address
from .updates import (
    FIELD_COUNTS,
    MAX_UINT_DIGITS,
    Op,
    UpdateRequest,
    is_lower_hex,
    parse_uint,
)

MAX_REQUEST_BYTES = 8192
PASSWORD_CREATE_TOKEN = "h0"
UNSAFE_FLAG = "unsafe"


class Verb(str, Enum):
    CREATE = "CREATE"
    ASSIGN = "ASSIGN"
    DELEGATE = "DELEGATE"
    CANCEL = "CANCEL"
    TRANSFER = "TRANSFER"
    COMPROMISE = "COMPROMISE"
    RESOLVE = "RESOLVE"
    EXPORT_ZONE = "EXPORT-ZONE"


@dataclass(frozen=True)
class WireRequest:
    verb: Verb
    fields: tuple[str, ...]


@dataclass(frozen=True)
class PasswordCreate:
    password: str


@dataclass(frozen=True)
class ResolveQuery:
    handle: Handle
    labels: tuple[str, ...]
    unsafe: bool


def bad_request(detail: str) -> OnhsError:
    return OnhsError(ErrorCode.BAD_REQUEST, detail)


def parse_request(line: str) -> WireRequest:
    text = line.rstrip("\r\n")
    if not text:
        raise bad_request("empty-request")
    tokens = text.split(" ")
    if any(not token for token in tokens):
        raise bad_request("fields must be separated by single spaces")
    try:
        verb = Verb(tokens[0])
    except ValueError:
        raise bad_request("unknown-verb") from None
    return WireRequest(verb=verb, fields=tuple(tokens[1:]))


def _hex_text(token: str, what: str) -> str:
    if not is_lower_hex(token):
        raise bad_request(f"{what} must be lowercase hex")
    try:
        return bytes.fromhex(token).decode("utf-8")
    except UnicodeDecodeError:
        raise bad_request(f"{what} is not UTF-8") from None


def decode_update(req: WireRequest) -> UpdateRequest | PasswordCreate:
    """Turn a mutating wire request into the registry request it asks for."""
    fields = req.fields
    op = Op(req.verb.value)
    if op is Op.CREATE:
        if len(fields) == 2 and fields[0] == PASSWORD_CREATE_TOKEN:
            return PasswordCreate(password=_hex_text(fields[1], "password"))
        if len(fields) != 3:
            raise bad_request("CREATE takes handle pubhex sighex")
        handle = parse_handle(fields[0])
        data: dict = {"op": op, "handle": handle, "seq": 0}
        auth = [fields[2], fields[1]]
    else:
        if len(fields) < 2:
            raise bad_request(f"{op.value} needs handle and seq")
        handle = parse_handle(fields[0])
        data = {"op": op, "handle": handle, "seq": parse_uint(fields[1], "seq")}
        count = FIELD_COUNTS[op]
        auth_len = 2 if handle.is_public_key else 1
        if len(fields) != 2 + count + auth_len:
            raise bad_request(f"{op.value} takes {2 + count + auth_len} fields")
        params = fields[2 : 2 + count]
        auth = list(fields[2 + count :])
        if op is Op.ASSIGN:
            data["labels"] = parse_label_path(params[0])
            data["address"] = parse_address(params[1])
            data["ttl_seconds"] = parse_uint(params[2], "ttl")
            data["expiry"] = parse_uint(params[3], "expiry")
        elif op is Op.DELEGATE:
            data["target"] = parse_handle(params[0])
            data["expiry"] = parse_uint(params[1], "expiry")
        elif op is Op.TRANSFER:
            data["target"] = parse_handle(params[0])

    if handle.is_public_key:
        sig, pub = auth
        if not (is_lower_hex(sig) and is_lower_hex(pub)):
            raise bad_request("signature and key must be lowercase hex")
        data["signature_hex"] = sig
        data["pub_hex"] = pub
    else:
        if op is Op.CREATE:
            raise bad_request("type 0 handles are created with CREATE h0")
        data["password"] = _hex_text(auth[0], "password")
    try:
        return UpdateRequest(**data)
    except ValidationError as exc:
        raise bad_request("invalid update fields") from exc


def decode_resolve(req: WireRequest) -> ResolveQuery:
    fields = list(req.fields)
    if len(fields) < 2:
        raise bad_request("RESOLVE takes handle and label count")
    handle = parse_handle(fields[0])
    count = parse_uint(fields[1], "label count")
    rest = fields[2:]
    unsafe = False
    if len(rest) == count + 1 and rest[-1] == UNSAFE_FLAG:
        unsafe = True
        rest = rest[:-1]
    if len(rest) != count:
        raise bad_request("label count does not match")
    return ResolveQuery(handle=handle, labels=validate_labels(rest), unsafe=unsafe)


# Encoding requests (client side)


def encode_update(req: UpdateRequest) -> str:
    if req.op is Op.CREATE:
        return f"CREATE {req.handle} {req.pub_hex} {req.signature_hex}"
    if req.handle.is_public_key:
        auth = f"{req.signature_hex} {req.pub_hex}"
    else:
        auth = (req.password or "").encode("utf-8").hex()
    parts = [req.op.value, str(req.handle), str(req.seq), *req.fields(), auth]
    return " ".join(parts)


def encode_password_create(password: str) -> str:
    return f"CREATE {PASSWORD_CREATE_TOKEN} {password.encode('utf-8').hex()}"


def encode_resolve(handle: Handle | str, labels: Sequence[str] = (), unsafe: bool = False) -> str:
    parts = ["RESOLVE", str(handle), str(len(labels)), *labels]
    if unsafe:
        parts.append(UNSAFE_FLAG)
    return " ".join(parts)


def encode_export_zone(origin: str | None = None) -> str:
    return "EXPORT-ZONE" if origin is None else f"EXPORT-ZONE {origin}"


# Responses


def format_error(exc: OnhsError) -> str:
    return f"ERR {exc.code.value} {exc.wire_detail()}"


def format_record(record: HandleRecord) -> str:
    return f"OK {record.handle} seq={record.seq} state={record.state.value}"


def format_resolution(result: ResolutionResult) -> str:
    path = ",".join(str(h) for h in result.chain)
    hops = ",".join(p.encode("utf-8").hex() for p in result.hop_proofs) or "-"
    line = (
        f"OK {result.address} ttl={result.ttl_seconds} chain={len(result.chain)} "
        f"verified={int(result.verified)} proof={result.binding_proof.encode('utf-8').hex()} "
        f"path={path} hops={hops}"
    )
    if result.compromised:
        line += " compromised=1"
    return line


def format_hex_payload(text: str) -> str:
    return f"OK {text.encode('utf-8').hex()}"


_UINT = rf"(?:0|[1-9][0-9]{{0,{MAX_UINT_DIGITS - 1}}})"
_HEX = r"(?:[0-9a-f]{2})+"
_RESOLVE_OK_RE = re.compile(
    rf"OK (\S+) ttl=({_UINT}) chain=([1-9][0-9]{{0,3}}) verified=([01]) proof=({_HEX}) "
    rf"path=(\S+) hops=(-|{_HEX}(?:,{_HEX})*)( compromised=1)?"
)
_RECORD_OK_RE = re.compile(rf"OK (\S+) seq=({_UINT}) state=([a-z]+)")


def raise_for_error(line: str) -> str:
    """Return the OK payload, or raise the error the server reported."""
    text = line.rstrip("\r\n")
    if text.startswith("ERR "):
        parts = text.split(" ", 2)
        try:
            code = ErrorCode(parts[1])
        except ValueError:
            code = ErrorCode.INTERNAL
        detail = parts[2] if len(parts) > 2 else ""
        raise OnhsError(code, detail.replace("-", " ") if detail != "-" else "")
    if text == "OK" or text.startswith("OK "):
        return text
    raise bad_request("malformed response")


def parse_resolution(
    line: str, handle: Handle | str, labels: Sequence[str] = (), now: int = 0
) -> ResolutionResult:
    """Strictly decode a RESOLVE response for ``handle``.

    Anything that is not exactly what an honest server would send is rejected, so a rewritten
    response can never decode to the same result.
    """
    text = raise_for_error(line)
    match = _RESOLVE_OK_RE.fullmatch(text)
    if match is None:
        raise bad_request("malformed resolve response")
    addr_text, ttl, chain_len, verified, proof_hex, path_text, hops_text, compromised = (
        match.groups()
    )
    address = parse_address(addr_text)
    if str(address) != addr_text:
        raise bad_request("non-canonical address")
    chain = []
    for token in path_text.split(","):
        h = parse_handle(token)
        if str(h) != token:
            raise bad_request("non-canonical handle in path")
        chain.append(h)
    if len(chain) != int(chain_len) or str(chain[0]) != str(handle):
        raise bad_request("path does not match the query")
    hop_proofs: list[str] = []
    if hops_text != "-":
        hop_proofs = [_hex_text(h, "hop proof") for h in hops_text.split(",")]
    if len(hop_proofs) != len(chain) - 1:
        raise bad_request("hop proof count does not match the path")
    return ResolutionResult(
        address=address,
        chain=chain,
        labels=validate_labels(labels),
        binding_proof=_hex_text(proof_hex, "proof"),
        hop_proofs=hop_proofs,
        verified=verified == "1",
        ttl_seconds=int(ttl),
        compromised=compromised is not None,
        resolved_at=now,
    )


def parse_record_response(line: str) -> tuple[Handle, int, str]:
    text = raise_for_error(line)
    match = _RECORD_OK_RE.fullmatch(text)
    if match is None:
        raise bad_request("malformed update response")
    return parse_handle(match.group(1)), int(match.group(2)), match.group(3)


def parse_hex_payload(line: str) -> str:
    text = raise_for_error(line)
    payload = text[3:] if text.startswith("OK ") else ""
    return _hex_text(payload, "payload") if payload else ""
