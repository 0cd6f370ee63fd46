"""Client-side resolution.

The registry is treated as an untrusted facilitator: a result is only as good as the signed
Assign line it carries, checked against the key digest embedded in the terminal handle.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass
import logging
from threading import Lock
from typing import Protocol

from .crypto import digest_matches, verify
from .errors import ErrorCode, OnhsError
from .handles import Handle, parse_handle, validate_labels
from .metrics import resolutions_total, resolver_cache_hits_total, resolver_cache_misses_total
from .models import HandleRecord, RecordState, ResolutionResult
from .updates import Op, UpdateRequest, parse_proof_line

logger = logging.getLogger("onhs.resolver")

DEFAULT_MAX_DEPTH = 16


class RecordSource(Protocol):
    def get(self, handle: Handle | str) -> HandleRecord | None: ...


Upstream = Callable[[Handle, tuple, int], ResolutionResult]


def _as_handle(handle: Handle | str) -> Handle:
    return handle if isinstance(handle, Handle) else parse_handle(handle)


def resolve(
    source: RecordSource,
    handle: Handle | str,
    labels: Sequence[str] = (),
    now: float = 0,
    max_depth: int = DEFAULT_MAX_DEPTH,
    unsafe: bool = False,
) -> ResolutionResult:
    """Follow transfers and live delegations to a terminal binding.

    Failures carry the chain traversed so far. ``unsafe`` returns a compromised handle's last
    binding, always marked ``compromised``.
    """
    start = _as_handle(handle)
    labels = validate_labels(labels)
    at = int(now)
    chain = [start]
    hop_proofs: list[str] = []
    hop_ttls: list[int] = []
    current = start
    try:
        while True:
            record = source.get(current)
            if record is None:
                raise OnhsError(ErrorCode.NOT_FOUND, str(current), chain)
            compromised = False
            nxt: Handle | None = None
            hop_proof: str | None = None
            hop_ttl: int | None = None
            if record.state is RecordState.CANCELLED:
                raise OnhsError(ErrorCode.CANCELLED, str(current), chain)
            if record.state is RecordState.COMPROMISED:
                if not unsafe:
                    raise OnhsError(ErrorCode.COMPROMISED, str(current), chain)
                compromised = True
            elif record.state is RecordState.TRANSFERRED:
                nxt = record.transfer_target
                hop_proof = record.state_proof
            else:
                delegation = record.live_delegation(at)
                if delegation is not None:
                    nxt = delegation.target
                    hop_proof = delegation.proof
                    hop_ttl = max(0, delegation.expiry - at)

            if nxt is None:
                result = _terminal(record, chain, labels, hop_proofs, hop_ttls, at, compromised)
                resolutions_total.labels(result="OK").inc()
                return result
            if any(str(nxt) == str(h) for h in chain):
                raise OnhsError(ErrorCode.CYCLE, str(nxt), chain + [nxt])
            if len(chain) - 1 >= max_depth:
                raise OnhsError(ErrorCode.CHAIN_TOO_LONG, f"more than {max_depth} hops", chain)
            chain.append(nxt)
            hop_proofs.append(hop_proof or "")
            if hop_ttl is not None:
                hop_ttls.append(hop_ttl)
            current = nxt
    except OnhsError as exc:
        resolutions_total.labels(result=exc.code.value).inc()
        raise


def _terminal(
    record: HandleRecord,
    chain: list[Handle],
    labels: tuple[str, ...],
    hop_proofs: list[str],
    hop_ttls: list[int],
    at: int,
    compromised: bool,
) -> ResolutionResult:
    binding = record.binding_for(labels)
    if binding is None:
        raise OnhsError(ErrorCode.NO_BINDING, str(record.handle), chain)
    if not binding.is_live(at):
        raise OnhsError(ErrorCode.EXPIRED, str(record.handle), chain)
    result = ResolutionResult(
        address=binding.address,
        chain=list(chain),
        labels=labels,
        binding_proof=binding.proof,
        hop_proofs=list(hop_proofs),
        verified=True,
        ttl_seconds=min([binding.ttl_seconds, *hop_ttls]),
        compromised=compromised,
        resolved_at=at,
    )
    return result.model_copy(update={"verified": _result_checks(result, strict=False)})


def verify_result(result: ResolutionResult, strict: bool = False) -> bool:
    """Recheck a result without trusting whoever produced it.

    True iff the result claims to be verified, the proof key matches the terminal handle's
    digest, the Assign signature checks, and the proof's address, labels and TTL agree with
    the result. ``strict`` also checks every Delegate/Transfer hop.
    """
    if not result.verified:
        return False
    return _result_checks(result, strict)


def _result_checks(result: ResolutionResult, strict: bool) -> bool:
    chain = result.chain
    if not chain or len({str(h) for h in chain}) != len(chain):
        return False
    if len(result.hop_proofs) != len(chain) - 1:
        return False
    try:
        proof = parse_proof_line(result.binding_proof)
    except OnhsError:
        return False
    if proof.op is not Op.ASSIGN or proof.handle != chain[-1]:
        return False
    if not _signed_by_handle_key(proof):
        return False
    if proof.address != result.address or proof.labels not in (result.labels, ()):
        return False
    assert proof.ttl_seconds is not None
    if result.ttl_seconds > proof.ttl_seconds:
        return False
    if len(chain) == 1 and result.ttl_seconds != proof.ttl_seconds:
        return False
    if strict:
        for i, line in enumerate(result.hop_proofs):
            try:
                hop = parse_proof_line(line)
            except OnhsError:
                return False
            if hop.op not in (Op.DELEGATE, Op.TRANSFER):
                return False
            if hop.handle != chain[i] or hop.target != chain[i + 1]:
                return False
            if hop.op is Op.DELEGATE and (hop.expiry or 0) <= result.resolved_at:
                return False
            if not _signed_by_handle_key(hop):
                return False
    return True


def _signed_by_handle_key(request: UpdateRequest) -> bool:
    if not request.handle.is_public_key or request.pub_hex is None or request.signature is None:
        return False
    pub = bytes.fromhex(request.pub_hex)
    try:
        if not digest_matches(request.handle, pub):
            return False
        return verify(request.message_bytes(), request.signature, pub, request.handle.alg_code)
    except OnhsError:
        return False


class Resolver:
    """A querier with its own identity; identity never influences results."""

    def __init__(
        self,
        source: RecordSource,
        identity: str = "resolver",
        max_depth: int = DEFAULT_MAX_DEPTH,
        strict: bool = False,
    ):
        self.source = source
        self.identity = identity
        self.max_depth = max_depth
        self.strict = strict

    def resolve(
        self,
        handle: Handle | str,
        labels: Sequence[str] = (),
        now: float = 0,
        unsafe: bool = False,
    ) -> ResolutionResult:
        result = resolve(self.source, handle, labels, now, self.max_depth, unsafe)
        if self.strict and not verify_result(result, strict=True):
            raise OnhsError(ErrorCode.UNVERIFIED, str(result.chain[-1]), result.chain)
        return result

    def __call__(self, handle: Handle, labels: tuple, now: int) -> ResolutionResult:
        return self.resolve(handle, labels, now)


@dataclass(frozen=True)
class CacheEntry:
    key: tuple[str, tuple[str, ...]]
    result: ResolutionResult
    inserted_at: int
    binding_expiry: int

    def is_live(self, now: float) -> bool:
        return now < self.inserted_at + self.result.ttl_seconds and now < self.binding_expiry


class ResolverCache:
    """Local table of recent resolutions, shared safely between threads.

    Only verified results are cached; on identical keys the last writer wins.
    """

    def __init__(self, upstream: Upstream, strict: bool = False):
        self.upstream = upstream
        self.strict = strict
        self.entries: dict[tuple[str, tuple[str, ...]], CacheEntry] = {}
        self.hits = 0
        self.misses = 0
        self._lock = Lock()

    def lookup(self, key: tuple[str, tuple[str, ...]], now: float) -> CacheEntry | None:
        with self._lock:
            entry = self.entries.get(key)
            if entry is None:
                return None
            if not entry.is_live(now):
                del self.entries[key]
                return None
            self.hits += 1
        resolver_cache_hits_total.inc()
        return entry

    def record_miss(self) -> None:
        with self._lock:
            self.misses += 1
        resolver_cache_misses_total.inc()

    def insert(self, entry: CacheEntry) -> None:
        with self._lock:
            self.entries[entry.key] = entry

    def clear(self) -> None:
        with self._lock:
            self.entries.clear()


def cached_resolve(
    cache: ResolverCache,
    handle: Handle | str,
    labels: Sequence[str] = (),
    now: float = 0,
) -> ResolutionResult:
    h = _as_handle(handle)
    key_labels = validate_labels(labels)
    key = (str(h), key_labels)
    entry = cache.lookup(key, now)
    if entry is not None:
        return entry.result
    cache.record_miss()
    at = int(now)
    result = cache.upstream(h, key_labels, at)
    if not verify_result(result, strict=cache.strict):
        if cache.strict:
            raise OnhsError(ErrorCode.UNVERIFIED, str(result.chain[-1]), result.chain)
        logger.debug("Not caching unverified result for %s", h)
        return result
    if result.ttl_seconds > 0:
        proof = parse_proof_line(result.binding_proof)
        cache.insert(
            CacheEntry(key=key, result=result, inserted_at=at, binding_expiry=proof.expiry or 0)
        )
    return result
