from __future__ import annotations

from collections.abc import Sequence
from enum import Enum
from typing import Any


class ErrorCode(str, Enum):
    # handle codec
    BAD_HANDLE = "BAD_HANDLE"
    BAD_LABEL = "BAD_LABEL"
    WRONG_ROOT = "WRONG_ROOT"
    # crypto
    UNKNOWN_ALG = "UNKNOWN_ALG"
    BAD_DIGEST_LEN = "BAD_DIGEST_LEN"
    USAGE = "USAGE"
    # registry
    HANDLE_EXISTS = "HANDLE_EXISTS"
    KEY_MISMATCH = "KEY_MISMATCH"
    BAD_SIGNATURE = "BAD_SIGNATURE"
    BAD_PASSWORD = "BAD_PASSWORD"
    NOT_FOUND = "NOT_FOUND"
    STATE_FINAL = "STATE_FINAL"
    SEQ_REPLAY = "SEQ_REPLAY"
    BAD_ADDRESS = "BAD_ADDRESS"
    SELF_DELEGATION = "SELF_DELEGATION"
    SELF_TRANSFER = "SELF_TRANSFER"
    CORRUPT_LOG = "CORRUPT_LOG"
    CORRUPT_SNAPSHOT = "CORRUPT_SNAPSHOT"
    # resolution
    CANCELLED = "CANCELLED"
    COMPROMISED = "COMPROMISED"
    NO_BINDING = "NO_BINDING"
    EXPIRED = "EXPIRED"
    CYCLE = "CYCLE"
    CHAIN_TOO_LONG = "CHAIN_TOO_LONG"
    UNVERIFIED = "UNVERIFIED"
    # reference model
    BAD_ROUTE = "BAD_ROUTE"
    DISCONTIGUOUS = "DISCONTIGUOUS"
    NOT_ADJACENT = "NOT_ADJACENT"
    BAD_TOPOLOGY = "BAD_TOPOLOGY"
    NO_ROUTE = "NO_ROUTE"
    OVERLAPPING_RANGES = "OVERLAPPING_RANGES"
    LOOP = "LOOP"
    HOP_LIMIT = "HOP_LIMIT"
    UNKNOWN_NAME = "UNKNOWN_NAME"
    SCRIPT_ERROR = "SCRIPT_ERROR"
    # service
    BAD_REQUEST = "BAD_REQUEST"
    INTERNAL = "INTERNAL"


class OnhsError(Exception):
    """Domain failure carrying a stable error code.

    Resolution failures also carry the chain of handles traversed before the failure,
    so callers can report where a delegation or transfer went dangling.
    """

    def __init__(self, code: ErrorCode, detail: str = "", chain: Sequence[Any] = ()):
        self.code = code
        self.detail = detail
        self.chain = tuple(chain)
        super().__init__(f"{code.value} {detail}".rstrip())

    def wire_detail(self) -> str:
        # single token for the line protocol
        return "-".join(self.detail.split()) if self.detail else "-"
