"""Scripted replays of the reference model.

One event per line, ``#`` comments, shell-style quoting so names may contain spaces::

    LINK a b | UNLINK a b | MOVE host n1.n2.n3.n4 | BIND-HANDLE h addr [ttl]
    BIND-NAME community name h [ttl] | ADVANCE seconds
    QUERY-ROUTE start route[++route...] EXPECT router|ERR CODE
    QUERY-ADDRESS start addr EXPECT ...
    QUERY-HANDLE start h EXPECT ...
    QUERY-NAME start community name EXPECT ...
    QUERY-CACHED community name EXPECT addr|ERR CODE

Every mutating event is tagged with the authority that owns the table it changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
import logging
from pathlib import Path
import shlex

from .errors import ErrorCode, OnhsError
from .handles import parse_handle
from .refmodel import (
    DEFAULT_ENTRY_TTL,
    Address32,
    ForwardingTable,
    ResolutionTables,
    Route,
    Topology,
    TransitiveCache,
    concat_routes,
    deliver_by_route,
    parse_route,
    rebind_handle,
    rebind_name,
    resolve_handle,
    resolve_name,
    route_by_address,
    tree_forwarding_tables,
)
from .updates import parse_uint

logger = logging.getLogger("onhs.scenario")

NETWORK_AUTHORITY = "network-administration"
HANDLE_AUTHORITY = "handle-owner"
CONCAT_MARK = "++"


@dataclass
class ScenarioResult:
    name: str
    log: list[str] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


class ReferenceModel:
    """Mutable world state a scenario runs against, with a simulated clock."""

    def __init__(self) -> None:
        self.topology = Topology()
        self.owned: dict[str, set[Address32]] = {}
        self.tables = ResolutionTables()
        self.cache = TransitiveCache(self.tables)
        self.clock = 0
        self._net: dict[str, ForwardingTable] | None = None

    @property
    def net(self) -> dict[str, ForwardingTable]:
        # network administration rebuilds range tables after any topology or address change
        if self._net is None:
            owned = {
                router: [(a, a) for a in sorted(addrs)] for router, addrs in self.owned.items()
            }
            self._net = tree_forwarding_tables(self.topology, owned)
        return self._net

    def invalidate(self) -> None:
        self._net = None

    def require_router(self, router: str) -> None:
        if router not in self.topology.routers:
            raise OnhsError(ErrorCode.SCRIPT_ERROR, f"unknown router {router}")

    def deliver_to_address(self, start: str, dst: Address32) -> str:
        route = route_by_address(self.net, self.topology, start, dst)
        return deliver_by_route(self.topology, start, route)


def _handle_token(text: str) -> str:
    try:
        return str(parse_handle(text))
    except OnhsError as exc:
        raise OnhsError(ErrorCode.SCRIPT_ERROR, f"bad handle {text!r}") from exc


def _uint(text: str) -> int:
    try:
        return parse_uint(text, "number")
    except OnhsError:
        raise OnhsError(ErrorCode.SCRIPT_ERROR, f"expected a number, got {text!r}") from None


def _address(text: str) -> Address32:
    try:
        return Address32.parse(text)
    except OnhsError as exc:
        raise OnhsError(ErrorCode.SCRIPT_ERROR, f"bad address {text!r}") from exc


def _split_expectation(tokens: list[str]) -> tuple[list[str], str]:
    if "EXPECT" not in tokens:
        raise OnhsError(ErrorCode.SCRIPT_ERROR, "query without EXPECT")
    at = tokens.index("EXPECT")
    expected = tokens[at + 1 :]
    if len(expected) == 2 and expected[0] == "ERR":
        return tokens[:at], f"ERR {expected[1]}"
    if len(expected) != 1:
        raise OnhsError(ErrorCode.SCRIPT_ERROR, "EXPECT takes a value or ERR CODE")
    return tokens[:at], expected[0]


class ScenarioEngine:
    def __init__(self, model: ReferenceModel | None = None):
        self.model = model or ReferenceModel()
        self.step = 0

    def run(self, text: str, name: str = "script") -> ScenarioResult:
        result = ScenarioResult(name=name)
        for lineno, line in enumerate(text.splitlines(), start=1):
            try:
                tokens = shlex.split(line, comments=True)
            except ValueError as exc:
                raise OnhsError(ErrorCode.SCRIPT_ERROR, f"line {lineno}: {exc}") from exc
            if not tokens:
                continue
            try:
                self._event(tokens, result)
            except OnhsError as exc:
                if exc.code is ErrorCode.SCRIPT_ERROR:
                    raise OnhsError(ErrorCode.SCRIPT_ERROR, f"line {lineno}: {exc.detail}") from exc
                raise
        if result.failures:
            logger.warning("Scenario %s failed %d checks", name, len(result.failures))
        return result

    def _record(self, result: ScenarioResult, authority: str, text: str) -> None:
        self.step += 1
        result.log.append(f"{self.step:04d} [{authority}] {text}")

    def _event(self, tokens: list[str], result: ScenarioResult) -> None:
        verb, args = tokens[0], tokens[1:]
        model = self.model
        text = shlex.join(tokens)

        if verb in ("LINK", "UNLINK"):
            self._arity(verb, args, 2)
            if verb == "LINK":
                try:
                    model.topology.link(args[0], args[1])
                except OnhsError as exc:
                    raise OnhsError(ErrorCode.SCRIPT_ERROR, exc.detail) from exc
            else:
                model.require_router(args[0])
                model.require_router(args[1])
                model.topology.unlink(args[0], args[1])
            model.invalidate()
            self._record(result, NETWORK_AUTHORITY, text)
        elif verb == "MOVE":
            self._arity(verb, args, 2)
            model.require_router(args[0])
            addr = _address(args[1])
            for addrs in model.owned.values():
                addrs.discard(addr)
            model.owned.setdefault(args[0], set()).add(addr)
            model.invalidate()
            self._record(result, NETWORK_AUTHORITY, text)
        elif verb == "BIND-HANDLE":
            self._arity(verb, args, 2, 3)
            ttl = _uint(args[2]) if len(args) == 3 else DEFAULT_ENTRY_TTL
            rebind_handle(model.tables.handles, _handle_token(args[0]), _address(args[1]), ttl)
            self._record(result, HANDLE_AUTHORITY, text)
        elif verb == "BIND-NAME":
            self._arity(verb, args, 3, 4)
            ttl = _uint(args[3]) if len(args) == 4 else DEFAULT_ENTRY_TTL
            table = model.tables.community(args[0])
            rebind_name(table, args[1], _handle_token(args[2]), ttl)
            self._record(result, f"community:{args[0]}", text)
        elif verb == "ADVANCE":
            self._arity(verb, args, 1)
            model.clock += _uint(args[0])
            self._record(result, "clock", f"{text} now={model.clock}")
        elif verb.startswith("QUERY-"):
            query, expected = _split_expectation(args)
            try:
                actual = self._query(verb, query)
            except OnhsError as exc:
                if exc.code is ErrorCode.SCRIPT_ERROR:
                    raise
                actual = f"ERR {exc.code.value}"
            outcome = "PASS" if actual == expected else "FAIL"
            self.step += 1
            line = f"{self.step:04d} [query] {text} => {actual} {outcome}"
            result.log.append(line)
            if outcome == "FAIL":
                result.failures.append(line)
        else:
            raise OnhsError(ErrorCode.SCRIPT_ERROR, f"unknown event {verb}")

    @staticmethod
    def _arity(verb: str, args: list[str], *allowed: int) -> None:
        if len(args) not in allowed:
            raise OnhsError(ErrorCode.SCRIPT_ERROR, f"{verb} takes {allowed} arguments")

    def _query(self, verb: str, args: list[str]) -> str:
        model = self.model
        if verb == "QUERY-ROUTE":
            self._arity(verb, args, 2)
            model.require_router(args[0])
            route = Route()
            for part in args[1].split(CONCAT_MARK):
                route = concat_routes(route, parse_route(part))
            return deliver_by_route(model.topology, args[0], route)
        if verb == "QUERY-ADDRESS":
            self._arity(verb, args, 2)
            model.require_router(args[0])
            return model.deliver_to_address(args[0], _address(args[1]))
        if verb == "QUERY-HANDLE":
            self._arity(verb, args, 2)
            model.require_router(args[0])
            addr = resolve_handle(model.tables.handles, _handle_token(args[1]))
            return model.deliver_to_address(args[0], addr)
        if verb == "QUERY-NAME":
            self._arity(verb, args, 3)
            model.require_router(args[0])
            table = model.tables.communities.get(args[1])
            if table is None:
                raise OnhsError(ErrorCode.UNKNOWN_NAME, f"no community {args[1]}")
            handle = resolve_name(table, args[2])
            addr = resolve_handle(model.tables.handles, handle)
            return model.deliver_to_address(args[0], addr)
        if verb == "QUERY-CACHED":
            self._arity(verb, args, 2)
            return str(model.cache.lookup(args[0], args[1], model.clock))
        raise OnhsError(ErrorCode.SCRIPT_ERROR, f"unknown event {verb}")


def run_scenario(script: str, name: str = "script") -> ScenarioResult:
    return ScenarioEngine().run(script, name)


def bundled_scenarios() -> list[str]:
    folder = resources.files("onhs") / "scenarios"
    return sorted(p.name[: -len(".txt")] for p in folder.iterdir() if p.name.endswith(".txt"))


def load_script(name_or_path: str) -> tuple[str, str]:
    """Script text and display name, from a file path or a bundled script name."""
    path = Path(name_or_path)
    if path.is_file():
        return path.read_text(encoding="utf-8"), path.stem
    stem = path.name[: -len(".txt")] if path.name.endswith(".txt") else path.name
    bundled = resources.files("onhs") / "scenarios" / f"{stem}.txt"
    if bundled.is_file():
        return bundled.read_text(encoding="utf-8"), stem
    raise OnhsError(ErrorCode.SCRIPT_ERROR, f"no script {name_or_path}")
