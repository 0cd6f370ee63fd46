"""Command-line entry point.

Mutations and reads go to ``--server host:port`` when given, otherwise they run locally
against ``--log`` (reads may use ``--snapshot`` instead). Secrets are only ever read from
files: ``--key-file``/``ONHS_SECRET_KEY_FILE`` and ``--password-file``/``ONHS_PASSWORD_FILE``.

Exit codes: 0 success, 1 usage, 2 operation error.
"""

from __future__ import annotations

import argparse
from collections.abc import Sequence
import logging
import sys
import time
from typing import NoReturn

from pydantic import ValidationError

from .client import OnhsClient, parse_server_address, response_verifies
from .config import OnhsSettings
from .crypto import KeyPair, derive_handle, generate_keypair
from .errors import ErrorCode, OnhsError
from .handles import Handle, parse_handle, parse_label_path
from .models import HandleRecord, ResolutionResult, parse_address
from .protocol import format_resolution
from .registry import Registry, load_registry
from .resolver import resolve, verify_result
from .scenario import bundled_scenarios, load_script, run_scenario
from .server import serve
from .updates import Op, UpdateRequest
from .zone import export_zone

logger = logging.getLogger("onhs.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILED = 2

DEFAULT_LIFETIME = 86_400


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# Helpers


def _settings(args: argparse.Namespace) -> OnhsSettings:
    settings = OnhsSettings()
    overrides = {
        "handle_root": args.root,
        "log_path": args.log,
        "snapshot_path": args.snapshot,
        "secret_key_file": args.key_file,
        "password_file": args.password_file,
    }
    for name, value in overrides.items():
        if value is not None:
            setattr(settings, name, value)
    if args.strict:
        settings.strict = True
    return settings


def _now(args: argparse.Namespace) -> int:
    return args.now if args.now is not None else int(time.time())


def _client(args: argparse.Namespace, settings: OnhsSettings) -> OnhsClient | None:
    if args.server is None:
        return None
    host, port = parse_server_address(args.server)
    return OnhsClient(
        host, port, timeout=settings.client_timeout_seconds, retries=settings.client_retries
    )


def _local_registry(args: argparse.Namespace, settings: OnhsSettings, write: bool) -> Registry:
    if write or args.snapshot is None:
        return Registry.open(
            settings.resolved_log_path, password_iterations=settings.password_iterations
        )
    return load_registry(snapshot_path=settings.resolved_snapshot_path)


def _load_key(settings: OnhsSettings) -> KeyPair:
    if not settings.secret_key_file:
        raise OnhsError(ErrorCode.USAGE, "signing needs --key-file or ONHS_SECRET_KEY_FILE")
    return KeyPair.load(settings.secret_key_file)


def _read_password(settings: OnhsSettings) -> str:
    if not settings.password_file:
        raise OnhsError(
            ErrorCode.USAGE, "type 0 handles need --password-file or ONHS_PASSWORD_FILE"
        )
    with open(settings.password_file, encoding="utf-8") as f:
        password = f.read().rstrip("\r\n")
    if not password:
        raise OnhsError(ErrorCode.BAD_PASSWORD, "password file is empty")
    return password


def _authorize(request: UpdateRequest, settings: OnhsSettings) -> UpdateRequest:
    if request.password_auth:
        return request.with_password(_read_password(settings))
    return request.sign(_load_key(settings))


def _build_request(op: Op, handle: Handle, seq: int, **fields) -> UpdateRequest:
    try:
        return UpdateRequest(op=op, handle=handle, seq=seq, **fields)
    except ValidationError as exc:
        raise OnhsError(ErrorCode.BAD_REQUEST, exc.errors()[0]["msg"]) from exc


def _expiry(args: argparse.Namespace, now: int) -> int:
    return args.expiry if args.expiry is not None else now + args.lifetime


def _print_record(record: HandleRecord) -> None:
    print(f"{record.handle} seq={record.seq} state={record.state.value}")


def _submit(args: argparse.Namespace, request: UpdateRequest) -> int:
    settings = _settings(args)
    signed = _authorize(request, settings)
    client = _client(args, settings)
    if client is not None:
        handle, seq, state = client.submit(signed)
        print(f"{handle} seq={seq} state={state}")
        return EXIT_OK
    registry = _local_registry(args, settings, write=True)
    try:
        _print_record(registry.apply(signed, _now(args)))
    finally:
        registry.close()
    return EXIT_OK


# Commands


def cmd_keygen(args: argparse.Namespace) -> int:
    """Write a fresh key pair and print the handle it owns."""
    settings = _settings(args)
    seed = args.seed.encode("utf-8") if args.seed is not None else None
    kp = generate_keypair(args.alg, rng_seed=seed, bits=args.bits or settings.key_bits)
    kp.save(args.out)
    if args.pub:
        with open(args.pub, "w", encoding="utf-8") as f:
            f.write(kp.public_key_bytes.hex() + "\n")
    print(derive_handle(kp.public_key_bytes, kp.alg_code, settings.default_digest_len))
    return EXIT_OK


def cmd_derive(args: argparse.Namespace) -> int:
    settings = _settings(args)
    if args.pub:
        with open(args.pub, encoding="utf-8") as f:
            text = f.read().strip()
        try:
            pub = bytes.fromhex(text)
        except ValueError as exc:
            raise OnhsError(ErrorCode.USAGE, "public key file must hold hex") from exc
        alg = args.alg
    else:
        kp = _load_key(settings)
        pub, alg = kp.public_key_bytes, kp.alg_code
    print(derive_handle(pub, alg, args.len or settings.default_digest_len))
    return EXIT_OK


def cmd_create(args: argparse.Namespace) -> int:
    settings = _settings(args)
    if args.password:
        password = _read_password(settings)
        client = _client(args, settings)
        if client is not None:
            handle, seq, state = client.create_password_handle(password)
            print(f"{handle} seq={seq} state={state}")
            return EXIT_OK
        registry = _local_registry(args, settings, write=True)
        try:
            _print_record(registry.create_password_handle(password, _now(args)))
        finally:
            registry.close()
        return EXIT_OK
    kp = _load_key(settings)
    if args.handle is not None:
        handle = parse_handle(args.handle)
    else:
        handle = derive_handle(kp.public_key_bytes, kp.alg_code, settings.default_digest_len)
    return _submit(args, _build_request(Op.CREATE, handle, 0))


def cmd_assign(args: argparse.Namespace) -> int:
    now = _now(args)
    request = _build_request(
        Op.ASSIGN,
        parse_handle(args.handle),
        args.seq,
        labels=parse_label_path(args.labels) if args.labels else (),
        address=parse_address(args.address),
        ttl_seconds=args.ttl,
        expiry=_expiry(args, now),
    )
    return _submit(args, request)


def cmd_delegate(args: argparse.Namespace) -> int:
    now = _now(args)
    request = _build_request(
        Op.DELEGATE,
        parse_handle(args.handle),
        args.seq,
        target=parse_handle(args.target),
        expiry=_expiry(args, now),
    )
    return _submit(args, request)


def cmd_transfer(args: argparse.Namespace) -> int:
    request = _build_request(
        Op.TRANSFER, parse_handle(args.handle), args.seq, target=parse_handle(args.target)
    )
    return _submit(args, request)


def cmd_cancel(args: argparse.Namespace) -> int:
    return _submit(args, _build_request(Op.CANCEL, parse_handle(args.handle), args.seq))


def cmd_compromise(args: argparse.Namespace) -> int:
    return _submit(args, _build_request(Op.COMPROMISE, parse_handle(args.handle), args.seq))


def cmd_resolve(args: argparse.Namespace) -> int:
    """Resolve, verify end to end and print the result line with its verified status."""
    settings = _settings(args)
    handle = parse_handle(args.handle)
    labels = parse_label_path(args.labels) if args.labels else ()
    now = _now(args)
    client = _client(args, settings)
    result: ResolutionResult
    if client is not None:
        result = client.resolve(handle, labels, now, unsafe=args.unsafe)
    else:
        registry = _local_registry(args, settings, write=False)
        try:
            result = resolve(
                registry, handle, labels, now, max_depth=settings.max_depth, unsafe=args.unsafe
            )
        finally:
            registry.close()
    verified = verify_result(result, strict=settings.strict)
    print(format_resolution(result.model_copy(update={"verified": verified})))
    if settings.strict and not verified:
        raise OnhsError(ErrorCode.UNVERIFIED, "result does not verify against the handle key")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    """Check a raw RESOLVE response line (``-`` reads it from stdin)."""
    settings = _settings(args)
    line = sys.stdin.readline() if args.response == "-" else args.response
    labels = parse_label_path(args.labels) if args.labels else ()
    if response_verifies(line, args.handle, labels, strict=settings.strict):
        print("verified")
        return EXIT_OK
    raise OnhsError(ErrorCode.UNVERIFIED, "response does not verify")


def cmd_export_zone(args: argparse.Namespace) -> int:
    settings = _settings(args)
    origin = args.origin or settings.handle_root
    client = _client(args, settings)
    if client is not None:
        text = client.export_zone(origin)
    else:
        registry = _local_registry(args, settings, write=False)
        try:
            text = export_zone(registry, origin, _now(args), settings.zone_txt_ttl)
        finally:
            registry.close()
    sys.stdout.write(text)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    settings = _settings(args)
    if args.bind is not None:
        host, port = parse_server_address(args.bind)
        settings.bind_host = host
        settings.bind_port = port
    if args.admin_port is not None:
        settings.admin_port = args.admin_port
    serve(settings)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.list:
        for name in bundled_scenarios():
            print(name)
        return EXIT_OK
    if args.script is None:
        raise OnhsError(ErrorCode.USAGE, "simulate needs a script path or bundled script name")
    text, name = load_script(args.script)
    result = run_scenario(text, name)
    for line in result.log:
        print(line)
    if not result.passed:
        raise OnhsError(
            ErrorCode.SCRIPT_ERROR,
            f"{len(result.failures)} expectation(s) failed: " + "; ".join(result.failures),
        )
    print(f"{name}: all expectations met")
    return EXIT_OK


# Parser


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--root", help="Handle domain root (default from ONHS_HANDLE_ROOT)")
    common.add_argument("--server", help="Talk to a running server at host:port")
    common.add_argument("--log", help="Update log for local operation")
    common.add_argument("--snapshot", help="Registry snapshot for local reads")
    common.add_argument("--strict", action="store_true", help="Treat unverified results as errors")
    common.add_argument("--key-file", help="Signing key file (or ONHS_SECRET_KEY_FILE)")
    common.add_argument("--password-file", help="Password file for type 0 handles")
    common.add_argument("--now", type=int, help="Override the current epoch time")
    return common


def _add_seq(p: argparse.ArgumentParser) -> None:
    p.add_argument("handle")
    p.add_argument("seq", type=int)


def _add_expiry(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group()
    group.add_argument("--expiry", type=int, help="Absolute expiry, epoch seconds")
    group.add_argument(
        "--lifetime", type=int, default=DEFAULT_LIFETIME, help="Expiry relative to now"
    )


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = _Parser(prog="onhs", description="Open Network Handle System")
    sub = ap.add_subparsers(dest="cmd", required=True)

    k = sub.add_parser("keygen", parents=[common], help="Generate a signing key pair")
    k.add_argument("--alg", type=int, default=5)
    k.add_argument("--out", required=True, help="Private key file (written 0600)")
    k.add_argument("--pub", help="Also write the public key as hex")
    k.add_argument("--seed", help="Deterministic key material (tests only)")
    k.add_argument("--bits", type=int)
    k.set_defaults(func=cmd_keygen)

    d = sub.add_parser("derive", parents=[common], help="Print the handle a public key owns")
    d.add_argument("--pub", help="Public key hex file (default: the signing key)")
    d.add_argument("--len", type=int, help="Digest length in hex digits")
    d.add_argument("--alg", type=int, default=5)
    d.set_defaults(func=cmd_derive)

    c = sub.add_parser("create", parents=[common], help="Register a handle")
    c.add_argument("handle", nargs="?", help="Defaults to the handle the key derives")
    c.add_argument(
        "--password", action="store_true", help="Mint a random type 0 handle behind a password"
    )
    c.set_defaults(func=cmd_create)

    a = sub.add_parser("assign", parents=[common], help="Bind an address")
    _add_seq(a)
    a.add_argument("address", help="Dotted quad, udp:<ip>:<port> or url:<url>")
    a.add_argument("--labels", help="Dotted label path below the handle")
    a.add_argument("--ttl", type=int, default=3600)
    _add_expiry(a)
    a.set_defaults(func=cmd_assign)

    g = sub.add_parser("delegate", parents=[common], help="Delegate to another handle")
    _add_seq(g)
    g.add_argument("target")
    _add_expiry(g)
    g.set_defaults(func=cmd_delegate)

    t = sub.add_parser("transfer", parents=[common], help="Transfer irrevocably")
    _add_seq(t)
    t.add_argument("target")
    t.set_defaults(func=cmd_transfer)

    x = sub.add_parser("cancel", parents=[common], help="Cancel irrevocably")
    _add_seq(x)
    x.set_defaults(func=cmd_cancel)

    m = sub.add_parser("compromise", parents=[common], help="Report the key compromised")
    _add_seq(m)
    m.set_defaults(func=cmd_compromise)

    r = sub.add_parser("resolve", parents=[common], help="Resolve and verify a handle")
    r.add_argument("handle")
    r.add_argument("--labels")
    r.add_argument("--unsafe", action="store_true", help="Follow a compromised handle anyway")
    r.set_defaults(func=cmd_resolve)

    v = sub.add_parser("verify", parents=[common], help="Verify a RESOLVE response line")
    v.add_argument("handle")
    v.add_argument("response", help="Response line, or - for stdin")
    v.add_argument("--labels")
    v.set_defaults(func=cmd_verify)

    z = sub.add_parser("export-zone", parents=[common], help="Print the DNS zone file")
    z.add_argument("--origin")
    z.set_defaults(func=cmd_export_zone)

    s = sub.add_parser("serve", parents=[common], help="Run the authoritative server")
    s.add_argument("--bind", help="host:port (default from settings)")
    s.add_argument("--admin-port", type=int)
    s.set_defaults(func=cmd_serve)

    sim = sub.add_parser("simulate", parents=[common], help="Run a reference-model scenario")
    sim.add_argument("script", nargs="?", help="Script path or bundled script name")
    sim.add_argument("--list", action="store_true", help="List bundled scripts")
    sim.set_defaults(func=cmd_simulate)

    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = _settings(args)
    except ValidationError as exc:
        print(f"onhs: invalid settings: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=settings.log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except OnhsError as exc:
        if exc.code is ErrorCode.USAGE:
            print(f"onhs: {exc.detail}", file=sys.stderr)
            return EXIT_USAGE
        print(f"onhs: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except OSError as exc:
        print(f"onhs: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
