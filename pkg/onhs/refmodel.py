"""Executable four-layer model: routes, addresses, handles and names.

Each layer resolves to the one below it. Routes are bang paths checked against the live
topology; addresses are 32-bit numbers forwarded through range tables; handles resolve to
addresses through one owner-controlled table; names resolve to handles per community.
"""

from __future__ import annotations

import bisect
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
import ipaddress

import networkx as nx

from .errors import ErrorCode, OnhsError

DEFAULT_ENTRY_TTL = 300
DEFAULT_MAX_HOPS = 64
ROUTE_SEPARATOR = "!"


# Routes


@dataclass(frozen=True)
class Route:
    hops: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.hops)

    def __str__(self) -> str:
        return format_route(self)


def parse_route(text: str) -> Route:
    if text == "":
        return Route()
    hops = tuple(text.split(ROUTE_SEPARATOR))
    if any(not hop or hop != hop.strip() for hop in hops):
        raise OnhsError(ErrorCode.BAD_ROUTE, "empty hop name")
    return Route(hops)


def format_route(route: Route) -> str:
    return ROUTE_SEPARATOR.join(route.hops)


def concat_routes(prefix: Route, suffix: Route) -> Route:
    """Join two routes at their shared host, keeping it once."""
    if not prefix.hops:
        return suffix
    if not suffix.hops:
        return prefix
    if prefix.hops[-1] != suffix.hops[0]:
        raise OnhsError(
            ErrorCode.DISCONTIGUOUS, f"{prefix.hops[-1]} does not meet {suffix.hops[0]}"
        )
    return Route(prefix.hops + suffix.hops[1:])


class Topology:
    """Routers and the direct links between them."""

    def __init__(self, links: Iterable[tuple[str, str]] = ()):
        self.graph = nx.Graph()
        for a, b in links:
            self.link(a, b)

    @property
    def routers(self) -> set[str]:
        return set(self.graph.nodes)

    def add_router(self, router: str) -> None:
        if not router:
            raise OnhsError(ErrorCode.BAD_TOPOLOGY, "empty router name")
        self.graph.add_node(router)

    def link(self, a: str, b: str) -> None:
        if a == b:
            raise OnhsError(ErrorCode.BAD_TOPOLOGY, f"self-link at {a}")
        self.add_router(a)
        self.add_router(b)
        self.graph.add_edge(a, b)

    def unlink(self, a: str, b: str) -> None:
        if self.graph.has_edge(a, b):
            self.graph.remove_edge(a, b)

    def adjacent(self, a: str, b: str) -> bool:
        return self.graph.has_edge(a, b)

    def reachable(self, start: str, dst: str) -> bool:
        if start not in self.graph or dst not in self.graph:
            return False
        return dst in nx.node_connected_component(self.graph, start)

    def copy(self) -> Topology:
        clone = Topology()
        clone.graph = self.graph.copy()
        return clone


def deliver_by_route(t: Topology, start: str, r: Route) -> str:
    """Walk the route hop by hop; every consecutive pair must be a live link."""
    if not r.hops:
        return start
    if r.hops[0] != start:
        raise OnhsError(ErrorCode.BAD_ROUTE, f"route starts at {r.hops[0]}, not {start}")
    for index in range(len(r.hops) - 1):
        if not t.adjacent(r.hops[index], r.hops[index + 1]):
            raise OnhsError(
                ErrorCode.NOT_ADJACENT,
                f"index {index}: {r.hops[index]} to {r.hops[index + 1]}",
            )
    return r.hops[-1]


# Addresses


@dataclass(frozen=True, order=True)
class Address32:
    value: int

    def __post_init__(self) -> None:
        if not 0 <= self.value <= 0xFFFFFFFF:
            raise OnhsError(ErrorCode.BAD_ADDRESS, "address must fit in 32 bits")

    @classmethod
    def parse(cls, text: str) -> Address32:
        try:
            return cls(int(ipaddress.IPv4Address(text)))
        except ValueError:
            raise OnhsError(ErrorCode.BAD_ADDRESS, "invalid dotted-quad address") from None

    def __str__(self) -> str:
        return str(ipaddress.IPv4Address(self.value))


@dataclass(frozen=True)
class RangeEntry:
    lo: Address32
    hi: Address32
    next_hop: str


@dataclass(frozen=True)
class ForwardingTable:
    owner: str
    ranges: tuple[RangeEntry, ...] = ()
    default: str | None = None
    # address ranges that terminate at the owner itself
    owned: tuple[tuple[Address32, Address32], ...] = ()
    _starts: tuple[int, ...] = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.ranges, key=lambda e: e.lo))
        for entry in ordered:
            if entry.lo > entry.hi:
                raise OnhsError(ErrorCode.OVERLAPPING_RANGES, f"empty range at {entry.lo}")
        for left, right in zip(ordered, ordered[1:]):
            if right.lo <= left.hi:
                raise OnhsError(
                    ErrorCode.OVERLAPPING_RANGES, f"{left.lo}-{left.hi} overlaps {right.lo}"
                )
        object.__setattr__(self, "ranges", ordered)
        object.__setattr__(self, "_starts", tuple(e.lo.value for e in ordered))

    def owns(self, a: Address32) -> bool:
        return any(lo <= a <= hi for lo, hi in self.owned)


def forward_lookup(ft: ForwardingTable, a: Address32) -> str:
    index = bisect.bisect_right(ft._starts, a.value) - 1
    if index >= 0 and ft.ranges[index].hi >= a:
        return ft.ranges[index].next_hop
    if ft.default is not None:
        return ft.default
    raise OnhsError(ErrorCode.NO_ROUTE, f"{ft.owner} has no route to {a}")


def route_by_address(
    net: Mapping[str, ForwardingTable],
    t: Topology,
    start: str,
    dst: Address32,
    max_hops: int = DEFAULT_MAX_HOPS,
) -> Route:
    """Forward hop by hop from ``start`` until the router owning ``dst`` is reached."""
    hops = [start]
    current = start
    while True:
        table = net.get(current)
        if table is None:
            raise OnhsError(ErrorCode.NO_ROUTE, f"{current} has no forwarding table")
        if table.owns(dst):
            return Route(tuple(hops))
        nxt = forward_lookup(table, dst)
        if not t.adjacent(current, nxt):
            raise OnhsError(ErrorCode.NO_ROUTE, f"{current} forwards to unlinked {nxt}")
        if nxt in hops:
            raise OnhsError(ErrorCode.LOOP, f"revisited {nxt}")
        if len(hops) - 1 >= max_hops:
            raise OnhsError(ErrorCode.HOP_LIMIT, f"more than {max_hops} hops")
        hops.append(nxt)
        current = nxt


def tree_forwarding_tables(
    t: Topology, owned: Mapping[str, Iterable[tuple[Address32, Address32]]]
) -> dict[str, ForwardingTable]:
    """Range tables that forward along a breadth-first spanning forest of the topology."""
    owned_ranges = {router: tuple(ranges) for router, ranges in owned.items()}
    forest = nx.Graph()
    forest.add_nodes_from(t.graph.nodes)
    for component in nx.connected_components(t.graph):
        root = min(component)
        forest.add_edges_from(nx.bfs_edges(t.graph, root))

    tables: dict[str, ForwardingTable] = {}
    for router in sorted(forest.nodes):
        paths = nx.single_source_shortest_path(forest, router)
        entries = []
        for target, ranges in owned_ranges.items():
            if target == router or target not in paths:
                continue
            next_hop = paths[target][1]
            entries.extend(RangeEntry(lo, hi, next_hop) for lo, hi in ranges)
        tables[router] = ForwardingTable(
            owner=router,
            ranges=tuple(entries),
            owned=owned_ranges.get(router, ()),
        )
    return tables


def address_owner(net: Mapping[str, ForwardingTable], a: Address32) -> str | None:
    for router, table in net.items():
        if table.owns(a):
            return router
    return None


# Handles and names


@dataclass(frozen=True)
class HandleEntry:
    address: Address32
    ttl: int = DEFAULT_ENTRY_TTL


@dataclass
class HandleTable:
    """Handle to address bindings; each handle's owner is the only authority over its entry."""

    entries: dict[str, HandleEntry] = field(default_factory=dict)

    def lookup(self, handle: str) -> HandleEntry:
        try:
            return self.entries[handle]
        except KeyError:
            raise OnhsError(ErrorCode.NOT_FOUND, handle) from None


@dataclass(frozen=True)
class NameEntry:
    handle: str
    ttl: int = DEFAULT_ENTRY_TTL


@dataclass
class CommunityNameTable:
    community: str
    entries: dict[str, NameEntry] = field(default_factory=dict)

    def lookup(self, name: str) -> NameEntry:
        try:
            return self.entries[name]
        except KeyError:
            raise OnhsError(ErrorCode.UNKNOWN_NAME, f"{name!r} in {self.community}") from None


def resolve_name(table: CommunityNameTable, name: str) -> str:
    return table.lookup(name).handle


def resolve_handle(ht: HandleTable, handle: str) -> Address32:
    return ht.lookup(handle).address


def rebind_name(
    table: CommunityNameTable, name: str, new_handle: str, ttl: int = DEFAULT_ENTRY_TTL
) -> None:
    table.entries[name] = NameEntry(new_handle, ttl)


def rebind_handle(
    ht: HandleTable, handle: str, new_addr: Address32, ttl: int = DEFAULT_ENTRY_TTL
) -> None:
    ht.entries[handle] = HandleEntry(new_addr, ttl)


@dataclass
class ResolutionTables:
    handles: HandleTable = field(default_factory=HandleTable)
    communities: dict[str, CommunityNameTable] = field(default_factory=dict)

    def community(self, name: str) -> CommunityNameTable:
        table = self.communities.get(name)
        if table is None:
            table = self.communities[name] = CommunityNameTable(name)
        return table


@dataclass(frozen=True)
class TransitiveCacheEntry:
    name: str
    community: str
    address: Address32
    ttl: int
    inserted_at: float

    def is_live(self, now: float) -> bool:
        return now < self.inserted_at + self.ttl


def compose_cache(
    name: str, community: str, tables: ResolutionTables, now: float
) -> TransitiveCacheEntry:
    """Compose name to handle to address into one direct entry."""
    table = tables.communities.get(community)
    if table is None:
        raise OnhsError(ErrorCode.UNKNOWN_NAME, f"no community {community}")
    name_entry = table.lookup(name)
    handle_entry = tables.handles.lookup(name_entry.handle)
    return TransitiveCacheEntry(
        name=name,
        community=community,
        address=handle_entry.address,
        ttl=min(name_entry.ttl, handle_entry.ttl),
        inserted_at=now,
    )


class TransitiveCache:
    def __init__(self, tables: ResolutionTables):
        self.tables = tables
        self.entries: dict[tuple[str, str], TransitiveCacheEntry] = {}
        self.compositions = 0
        self.hits = 0

    def lookup(self, community: str, name: str, now: float) -> Address32:
        key = (community, name)
        entry = self.entries.get(key)
        if entry is not None and entry.is_live(now):
            self.hits += 1
            return entry.address
        entry = compose_cache(name, community, self.tables, now)
        self.compositions += 1
        self.entries[key] = entry
        return entry.address
