"""Export the registry as an unsigned DNS master file under the handle domain."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
import logging

from .crypto import ALGORITHMS, key_digest
from .errors import OnhsError
from .handles import Handle, embed_fqdn, normalize_root
from .models import AddressKind, HandleRecord, RecordState
from .registry import Registry

DEFAULT_TXT_TTL = 3600

logger = logging.getLogger("onhs.zone")


@dataclass(frozen=True, order=True)
class ZoneRecord:
    owner: str
    rtype: str
    rdata: str
    ttl: int

    def line(self) -> str:
        return f"{self.owner}. {self.ttl} IN {self.rtype} {self.rdata}"


def zone_header(origin: str) -> str:
    return f"; onhs zone for {origin}."


def _txt_rdata(record: HandleRecord, now: int) -> str:
    fields = [f"state={record.state.value}", f"seq={record.seq}"]
    pub = record.owner_pub
    if pub is not None and record.handle.alg_code in ALGORITHMS:
        fields.append(f"keydigest={key_digest(pub, record.handle.alg_code)}")
    else:
        fields.append("keydigest=-")
    if record.state is RecordState.TRANSFERRED and record.transfer_target is not None:
        fields.append(f"target={record.transfer_target}")
    delegation = record.live_delegation(now) if record.state is RecordState.ACTIVE else None
    if delegation is not None:
        fields.append(f"delegate={delegation.target}")
    return '"' + " ".join(fields) + '"'


def _owner_name(handle: Handle, labels: tuple[str, ...], root: str) -> str | None:
    try:
        return embed_fqdn(handle, labels, root).text
    except OnhsError as exc:
        logger.warning("Skipping zone owner for %s labels=%s: %s", handle, labels, exc.detail)
        return None


def zone_records(
    records: Iterable[HandleRecord], origin: str, now: float, txt_ttl: int = DEFAULT_TXT_TTL
) -> list[ZoneRecord]:
    root = normalize_root(origin)
    at = int(now)
    out: list[ZoneRecord] = []
    for record in records:
        owner = _owner_name(record.handle, (), root)
        if owner is not None:
            out.append(ZoneRecord(owner, "TXT", _txt_rdata(record, at), txt_ttl))
        if record.state is not RecordState.ACTIVE:
            continue
        for binding in record.bindings.values():
            if binding.address.kind is not AddressKind.IPV4 or not binding.is_live(at):
                continue
            fqdn = _owner_name(record.handle, binding.labels, root)
            if fqdn is None:
                continue
            out.append(
                ZoneRecord(fqdn, "A", str(binding.address.dotted_quad), binding.ttl_seconds)
            )
    return sorted(out)


def export_zone(
    registry: Registry, origin: str, now: float, txt_ttl: int = DEFAULT_TXT_TTL
) -> str:
    """Master-file text: header comment, then records sorted by owner, type and rdata.

    Identical state and clock always give byte-identical output.
    """
    root = normalize_root(origin)
    lines = [zone_header(root)]
    lines.extend(r.line() for r in zone_records(registry.records(), root, now, txt_ttl))
    return "\n".join(lines) + "\n"
