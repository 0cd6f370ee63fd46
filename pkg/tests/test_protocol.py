import random

import pytest

from onhs.client import response_verifies
from onhs.config import OnhsSettings
from onhs.errors import ErrorCode, OnhsError
from onhs.protocol import (
    PasswordCreate,
    Verb,
    decode_resolve,
    decode_update,
    encode_password_create,
    encode_resolve,
    encode_update,
    parse_hex_payload,
    parse_record_response,
    parse_request,
    parse_resolution,
)
from onhs.resolver import verify_result
from onhs.server import OnhsService
from onhs.updates import parse_uint

NOW = 1_700_000_000
EXPIRY = NOW + 86_400


@pytest.fixture
def service(tmp_path, registry):
    settings = OnhsSettings(data_dir=str(tmp_path))
    return OnhsService(registry, settings, clock=lambda: NOW)


@pytest.fixture
def alice_bound(service, owners):
    alice = owners[0]
    assert service.handle_line(encode_update(alice.create())).startswith("OK ")
    assert service.handle_line(encode_update(alice.assign(2, "192.0.2.7", EXPIRY))) == (
        f"OK {alice.handle} seq=2 state=active"
    )
    return alice


def test_unknown_and_empty_requests(service):
    assert service.handle_line("FROB x") == "ERR BAD_REQUEST unknown-verb"
    assert service.handle_line("") == "ERR BAD_REQUEST empty-request"
    assert service.handle_line("\n") == "ERR BAD_REQUEST empty-request"
    assert service.handle_line("RESOLVE  h1g5k0061A38F9A3540B9 0").startswith("ERR BAD_REQUEST")


def test_stale_sequence_is_reported(service, alice_bound):
    response = service.handle_line(encode_update(alice_bound.assign(2, "192.0.2.8", EXPIRY)))
    assert response == "ERR SEQ_REPLAY last=2"


def test_resolve_response_shape(service, alice_bound):
    line = service.handle_line(encode_resolve(alice_bound.handle))
    assert line.startswith("OK 192.0.2.7 ttl=3600 chain=1 verified=1 proof=")
    assert line.endswith(f" path={alice_bound.handle} hops=-")

    result = parse_resolution(line, alice_bound.handle, (), NOW)
    assert str(result.address) == "192.0.2.7"
    assert verify_result(result, strict=True)
    assert response_verifies(line, alice_bound.handle)

    missing = service.handle_line("RESOLVE h1g5k0061A38F9A3540B9 0")
    assert missing == "ERR NOT_FOUND h1g5k0061A38F9A3540B9"
    with pytest.raises(OnhsError) as exc:
        parse_resolution(missing, "h1g5k0061A38F9A3540B9")
    assert exc.value.code is ErrorCode.NOT_FOUND


def test_export_zone_over_the_wire(service, alice_bound):
    zone = parse_hex_payload(service.handle_line("EXPORT-ZONE handleroot.nicesponsor.org"))
    assert zone.startswith("; onhs zone for handleroot.nicesponsor.org.\n")
    assert f"{alice_bound.handle}.handleroot.nicesponsor.org. 3600 IN A 192.0.2.7" in zone
    assert service.handle_line("EXPORT-ZONE a b").startswith("ERR BAD_REQUEST")


def test_password_handles_over_the_wire(service):
    handle, seq, state = parse_record_response(service.handle_line(encode_password_create("pw")))
    assert str(handle).startswith("h0")
    assert (seq, state) == (0, "active")
    pw_hex = "pw".encode().hex()
    ok = service.handle_line(f"ASSIGN {handle} 1 @ 192.0.2.44 60 {EXPIRY} {pw_hex}")
    assert ok == f"OK {handle} seq=1 state=active"
    bad = service.handle_line(f"ASSIGN {handle} 2 @ 192.0.2.45 60 {EXPIRY} {'nope'.encode().hex()}")
    assert bad.startswith("ERR BAD_PASSWORD")
    unverified = service.handle_line(f"RESOLVE {handle} 0")
    assert " verified=0 " in unverified


def test_request_decoding(owners):
    alice = owners[0]
    req = decode_update(parse_request(encode_update(alice.assign(4, "udp:192.0.2.1:53", EXPIRY))))
    assert req == alice.assign(4, "udp:192.0.2.1:53", EXPIRY)
    assert isinstance(decode_update(parse_request("CREATE h0 7077")), PasswordCreate)

    upper = encode_update(alice.cancel(5)).upper().replace("CANCEL H1G5K", "CANCEL h1g5k")
    with pytest.raises(OnhsError) as exc:
        decode_update(parse_request(upper))
    assert exc.value.code is ErrorCode.BAD_REQUEST

    query = decode_resolve(parse_request("RESOLVE h1g5k0061A38F9A3540B9 2 www shop unsafe"))
    assert query.labels == ("www", "shop")
    assert query.unsafe
    assert parse_request("EXPORT-ZONE").verb is Verb.EXPORT_ZONE
    with pytest.raises(OnhsError) as exc:
        decode_resolve(parse_request("RESOLVE h1g5k0061A38F9A3540B9 2 www"))
    assert exc.value.code is ErrorCode.BAD_REQUEST


def test_service_survives_random_lines(service, alice_bound):
    rng = random.Random(5)
    verbs = [v.value for v in Verb] + ["", "OK", "ERR"]
    alphabet = "abcdefh0123456789ABCDEF @.:|-\t\x00é"
    for _ in range(2_000):
        body = "".join(rng.choices(alphabet, k=rng.randint(0, rng.choice([16, 200, 8000]))))
        line = f"{rng.choice(verbs)} {body}"[:8191]
        response = service.handle_line(line)
        assert "\n" not in response
        assert response.startswith(("OK", "ERR "))


def test_single_byte_rewrites_never_verify(service, alice_bound):
    line = service.handle_line(encode_resolve(alice_bound.handle))
    assert response_verifies(line, alice_bound.handle)
    rng = random.Random(9)
    checked = 0
    while checked < 1_000:
        at = rng.randrange(len(line))
        replacement = chr(rng.randrange(32, 127))
        if replacement == line[at]:
            continue
        mutated = line[:at] + replacement + line[at + 1 :]
        assert not response_verifies(mutated, alice_bound.handle), mutated
        checked += 1


def test_oversized_numbers_are_bad_requests(service, alice_bound):
    for line in (
        f"RESOLVE {alice_bound.handle} {'9' * 5000}",
        f"RESOLVE {alice_bound.handle} ²",
        "CANCEL h1g5k0061A38F9A3540B9 " + "9" * 5000 + " 00 00",
    ):
        assert service.handle_line(line).startswith("ERR BAD_REQUEST")

    with pytest.raises(OnhsError) as exc:
        parse_uint("9" * 5000, "seq")
    assert exc.value.code is ErrorCode.BAD_REQUEST
    assert parse_uint("9" * 20, "seq") == int("9" * 20)

    ok = f"OK {alice_bound.handle} seq={'9' * 5000} state=active"
    with pytest.raises(OnhsError) as exc:
        parse_record_response(ok)
    assert exc.value.code is ErrorCode.BAD_REQUEST
