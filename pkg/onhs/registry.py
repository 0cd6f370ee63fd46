"""The sponsor-side authoritative handle registry.

Every accepted update is written to the append-only log before the in-memory record changes,
so replaying the log reproduces the live state exactly. Updates to one handle are linearized by
a per-handle lock; records are immutable values swapped atomically, so readers never observe a
torn record.
"""

from __future__ import annotations

from collections.abc import Iterable
import logging
import os
import secrets
from threading import Lock

from .crypto import check_password, digest_matches, make_password_verifier, verify
from .errors import ErrorCode, OnhsError
from .handles import AuthType, Handle, format_label_path
from .metrics import registry_handles, registry_updates_total
from .models import Binding, Delegation, HandleRecord, RecordState
from .storage import UpdateLog, read_snapshot, state_hash
from .updates import LogEntry, Op, UpdateRequest, parse_log_line

logger = logging.getLogger("onhs.registry")

PASSWORD_DIGEST_LEN = 15


class Registry:
    def __init__(
        self,
        log: UpdateLog | None = None,
        password_iterations: int = 200_000,
    ):
        self._records: dict[str, HandleRecord] = {}
        self._handle_locks: dict[str, Lock] = {}
        self._locks_guard = Lock()
        self._log = log
        self.password_iterations = password_iterations

    @classmethod
    def open(cls, log_path: str | os.PathLike, password_iterations: int = 200_000) -> Registry:
        """Replay an existing log, then keep appending to it."""
        log = UpdateLog(log_path)
        registry = cls(password_iterations=password_iterations)
        registry.apply_log(log.read_lines())
        registry._log = log
        logger.info("Opened registry from %s with %d records", log_path, len(registry))
        return registry

    @classmethod
    def from_records(cls, records: Iterable[HandleRecord]) -> Registry:
        """Read-only view over snapshot records; updates are accepted but not logged."""
        registry = cls()
        for record in records:
            registry._records[record.key] = record
        registry_handles.set(len(registry._records))
        return registry

    def __len__(self) -> int:
        return len(self._records)

    def close(self) -> None:
        if self._log is not None:
            self._log.close()

    # Reads

    def get(self, handle: Handle | str) -> HandleRecord | None:
        return self._records.get(str(handle))

    def require(self, handle: Handle | str) -> HandleRecord:
        record = self.get(handle)
        if record is None:
            raise OnhsError(ErrorCode.NOT_FOUND, str(handle))
        return record

    def records(self) -> list[HandleRecord]:
        return sorted(self._records.values(), key=lambda r: r.key)

    def state_hash(self) -> str:
        return state_hash(self.records())

    # The six lifecycle operations

    def create(self, request: UpdateRequest, now: float) -> HandleRecord:
        return self._submit(Op.CREATE, request, now)

    def assign(self, request: UpdateRequest, now: float) -> HandleRecord:
        return self._submit(Op.ASSIGN, request, now)

    def delegate(self, request: UpdateRequest, now: float) -> HandleRecord:
        return self._submit(Op.DELEGATE, request, now)

    def cancel(self, request: UpdateRequest, now: float) -> HandleRecord:
        return self._submit(Op.CANCEL, request, now)

    def transfer(self, request: UpdateRequest, now: float) -> HandleRecord:
        return self._submit(Op.TRANSFER, request, now)

    def compromise(self, request: UpdateRequest, now: float) -> HandleRecord:
        return self._submit(Op.COMPROMISE, request, now)

    def create_password_handle(self, password: str, now: float) -> HandleRecord:
        """Mint a fresh random type-0 handle protected by ``password``."""
        if not password:
            raise OnhsError(ErrorCode.BAD_PASSWORD, "empty password")
        verifier = make_password_verifier(password, self.password_iterations)
        while True:
            digest = secrets.token_hex(8)[:PASSWORD_DIGEST_LEN].upper()
            handle = Handle(auth_type=AuthType.SPONSOR_PASSWORD, digest_hex=digest)
            if self.get(handle) is not None:
                continue
            request = UpdateRequest(op=Op.CREATE, handle=handle, seq=0, verifier=verifier)
            try:
                return self.apply(request, now)
            except OnhsError as exc:
                # lost a race for the same random digest
                if exc.code is not ErrorCode.HANDLE_EXISTS:
                    raise

    def apply(self, request: UpdateRequest, now: float) -> HandleRecord:
        return self._apply(request, int(now), replay=False)

    def _submit(self, op: Op, request: UpdateRequest, now: float) -> HandleRecord:
        if request.op is not op:
            raise OnhsError(ErrorCode.USAGE, f"expected a {op.value} request")
        return self.apply(request, now)

    # Log replay

    def apply_log(self, lines: Iterable[str]) -> Registry:
        """Rebuild state from log lines in acceptance order.

        Any line the live registry would have rejected makes the whole log CORRUPT_LOG.
        """
        for lineno, line in enumerate(lines, start=1):
            try:
                entry = parse_log_line(line)
                self._apply(entry.request, entry.accepted_at, replay=True)
            except OnhsError as exc:
                raise OnhsError(
                    ErrorCode.CORRUPT_LOG, f"line {lineno}: {exc.code.value} {exc.detail}"
                ) from exc
        return self

    # Internals

    def _lock_for(self, key: str) -> Lock:
        with self._locks_guard:
            lock = self._handle_locks.get(key)
            if lock is None:
                lock = self._handle_locks[key] = Lock()
            return lock

    def _apply(self, request: UpdateRequest, now: int, replay: bool) -> HandleRecord:
        key = str(request.handle)
        with self._lock_for(key):
            try:
                current = self._records.get(key)
                if request.op is Op.CREATE:
                    updated = self._check_create(current, request, now)
                else:
                    updated = self._check_update(current, request, now, replay)
            except OnhsError as exc:
                registry_updates_total.labels(op=request.op.value, result=exc.code.value).inc()
                if not replay:
                    logger.info(
                        "Rejected %s %s seq=%d: %s",
                        request.op.value,
                        key,
                        request.seq,
                        exc.code.value,
                    )
                raise
            if not replay and self._log is not None:
                self._log.append(LogEntry(request=request, accepted_at=now).line())
            self._records[key] = updated
        registry_updates_total.labels(op=request.op.value, result="OK").inc()
        registry_handles.set(len(self._records))
        if not replay:
            logger.info("Accepted %s %s seq=%d", request.op.value, key, request.seq)
        return updated

    def _check_create(
        self, current: HandleRecord | None, request: UpdateRequest, now: int
    ) -> HandleRecord:
        if current is not None:
            if current.state.is_terminal:
                raise OnhsError(ErrorCode.STATE_FINAL, current.state.value)
            raise OnhsError(ErrorCode.HANDLE_EXISTS, str(request.handle))
        if request.seq != 0:
            raise OnhsError(ErrorCode.BAD_REQUEST, "create must use seq 0")
        if request.handle.is_public_key:
            pub = self._authenticate_key(request.handle, request)
            return HandleRecord(
                handle=request.handle,
                owner_pub_hex=pub.hex(),
                seq=0,
                created_at=now,
                updated_at=now,
            )
        if not request.verifier:
            raise OnhsError(ErrorCode.BAD_PASSWORD, "type 0 handles are minted by the registry")
        return HandleRecord(
            handle=request.handle,
            password_verifier=request.verifier,
            seq=0,
            created_at=now,
            updated_at=now,
        )

    def _check_update(
        self, current: HandleRecord | None, request: UpdateRequest, now: int, replay: bool
    ) -> HandleRecord:
        if current is None:
            raise OnhsError(ErrorCode.NOT_FOUND, str(request.handle))
        if current.state.is_terminal:
            raise OnhsError(ErrorCode.STATE_FINAL, current.state.value)
        self._authenticate(current, request, replay)
        if request.seq <= current.seq:
            raise OnhsError(ErrorCode.SEQ_REPLAY, f"last={current.seq}")

        proof = request.proof_line()
        changes: dict = {"seq": request.seq, "updated_at": now}
        if request.op is Op.ASSIGN:
            assert request.address is not None
            binding = Binding(
                labels=request.labels,
                address=request.address,
                ttl_seconds=request.ttl_seconds or 0,
                expiry=request.expiry or 0,
                proof=proof,
            )
            bindings = dict(current.bindings)
            bindings[format_label_path(request.labels)] = binding
            changes["bindings"] = bindings
        elif request.op is Op.DELEGATE:
            assert request.target is not None
            if request.target == request.handle:
                raise OnhsError(ErrorCode.SELF_DELEGATION, str(request.handle))
            changes["delegation"] = Delegation(
                target=request.target, expiry=request.expiry or 0, proof=proof
            )
        elif request.op is Op.TRANSFER:
            assert request.target is not None
            if request.target == request.handle:
                raise OnhsError(ErrorCode.SELF_TRANSFER, str(request.handle))
            changes.update(
                state=RecordState.TRANSFERRED, transfer_target=request.target, state_proof=proof
            )
        elif request.op is Op.CANCEL:
            changes.update(state=RecordState.CANCELLED, state_proof=proof)
        elif request.op is Op.COMPROMISE:
            changes.update(state=RecordState.COMPROMISED, state_proof=proof)
        return current.model_copy(update=changes)

    def _authenticate(self, current: HandleRecord, request: UpdateRequest, replay: bool) -> None:
        if current.handle.is_public_key:
            pub = self._authenticate_key(current.handle, request)
            if current.owner_pub is not None and pub != current.owner_pub:
                raise OnhsError(ErrorCode.KEY_MISMATCH, "key differs from the owner key")
            return
        if replay:
            # password lines are the registry's own record
            return
        if request.password is None or current.password_verifier is None:
            raise OnhsError(ErrorCode.BAD_PASSWORD, "password required")
        if not check_password(request.password, current.password_verifier):
            raise OnhsError(ErrorCode.BAD_PASSWORD, "password does not match")

    @staticmethod
    def _authenticate_key(handle: Handle, request: UpdateRequest) -> bytes:
        if request.pub_hex is None or request.signature is None:
            raise OnhsError(ErrorCode.BAD_SIGNATURE, "signature and public key required")
        pub = bytes.fromhex(request.pub_hex)
        if not digest_matches(handle, pub):
            raise OnhsError(ErrorCode.KEY_MISMATCH, "key digest does not match the handle")
        if not verify(request.message_bytes(), request.signature, pub, handle.alg_code):
            raise OnhsError(ErrorCode.BAD_SIGNATURE, "signature does not verify")
        return pub


def load_registry(log_path: str | None = None, snapshot_path: str | None = None) -> Registry:
    """Registry for local CLI use: a live log if given, else a read-only snapshot."""
    if log_path is not None:
        return Registry.open(log_path)
    if snapshot_path is not None:
        return Registry.from_records(read_snapshot(snapshot_path))
    raise OnhsError(ErrorCode.USAGE, "need a log or a snapshot")

