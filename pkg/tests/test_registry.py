import random
import re
from threading import Thread

import pytest

from onhs.errors import ErrorCode, OnhsError
from onhs.handles import parse_handle
from onhs.models import RecordState
from onhs.registry import Registry, load_registry
from onhs.storage import read_snapshot, write_snapshot
from onhs.updates import Op, UpdateRequest, parse_log_line

NOW = 1_700_000_000
EXPIRY = NOW + 86_400


def _code(fn, *args) -> ErrorCode:
    with pytest.raises(OnhsError) as exc:
        fn(*args)
    return exc.value.code


def test_create_then_assign(registry, owners):
    alice = owners[0]
    record = registry.create(alice.create(), NOW)
    assert record.state is RecordState.ACTIVE
    assert record.seq == 0
    assert record.bindings == {}
    assert record.delegation is None
    assert record.owner_pub == alice.key.public_key_bytes

    record = registry.assign(alice.assign(1, "192.0.2.7", EXPIRY), NOW)
    assert record.seq == 1
    assert str(record.bindings["@"].address) == "192.0.2.7"

    # re-assigning moves the handle
    record = registry.assign(alice.assign(2, "192.0.2.8", EXPIRY), NOW + 5)
    assert str(record.binding_for(()).address) == "192.0.2.8"
    assert record.updated_at == NOW + 5
    assert record.created_at == NOW


def test_subdomain_bindings_are_distinct(registry, owners):
    alice = owners[0]
    registry.create(alice.create(), NOW)
    registry.assign(alice.assign(1, "192.0.2.7", EXPIRY), NOW)
    record = registry.assign(alice.assign(3, "192.0.2.9", EXPIRY, labels=["chocolate"]), NOW)
    assert str(record.bindings["@"].address) == "192.0.2.7"
    assert str(record.bindings["chocolate"].address) == "192.0.2.9"


def test_create_errors(registry, owners):
    alice, bob = owners[0], owners[1]
    registry.create(alice.create(), NOW)
    assert _code(registry.create, alice.create(), NOW) is ErrorCode.HANDLE_EXISTS

    # Alice's key does not hash to the digest in Bob's handle
    forged = UpdateRequest(op=Op.CREATE, handle=bob.handle, seq=0).sign(alice.key)
    assert _code(registry.create, forged, NOW) is ErrorCode.KEY_MISMATCH

    unsigned = UpdateRequest(op=Op.CREATE, handle=bob.handle, seq=0)
    assert _code(registry.create, unsigned, NOW) is ErrorCode.BAD_SIGNATURE

    wrong_sig = bob.create().model_copy(update={"signature_hex": alice.create().signature_hex})
    assert _code(registry.create, wrong_sig, NOW) is ErrorCode.BAD_SIGNATURE

    nonzero = bob.signed(Op.CREATE, 3)
    assert _code(registry.create, nonzero, NOW) is ErrorCode.BAD_REQUEST
    assert registry.get(bob.handle) is None


def test_operation_must_match_method(registry, owners):
    assert _code(registry.assign, owners[0].create(), NOW) is ErrorCode.USAGE


def test_update_errors(registry, owners):
    alice, bob = owners[0], owners[1]
    assert _code(registry.assign, alice.assign(1, "192.0.2.7", EXPIRY), NOW) is ErrorCode.NOT_FOUND

    registry.create(alice.create(), NOW)
    registry.assign(alice.assign(2, "192.0.2.7", EXPIRY), NOW)
    with pytest.raises(OnhsError) as exc:
        registry.assign(alice.assign(2, "192.0.2.8", EXPIRY), NOW)
    assert exc.value.code is ErrorCode.SEQ_REPLAY
    assert exc.value.detail == "last=2"
    assert _code(registry.assign, alice.assign(1, "192.0.2.8", EXPIRY), NOW) is ErrorCode.SEQ_REPLAY

    # Bob signing an update for Alice's handle
    hijack = UpdateRequest(
        op=Op.ASSIGN,
        handle=alice.handle,
        seq=9,
        address="203.0.113.66",
        ttl_seconds=60,
        expiry=EXPIRY,
    ).sign(bob.key)
    assert _code(registry.assign, hijack, NOW) is ErrorCode.KEY_MISMATCH

    assert _code(registry.delegate, alice.delegate(3, alice.handle, EXPIRY), NOW) is (
        ErrorCode.SELF_DELEGATION
    )
    assert _code(registry.transfer, alice.transfer(3, alice.handle), NOW) is ErrorCode.SELF_TRANSFER
    assert registry.require(alice.handle).seq == 2


def test_delegate_target_need_not_exist(registry, owners):
    alice = owners[0]
    registry.create(alice.create(), NOW)
    target = parse_handle("h1g5k0061A38F9A3540B9")
    record = registry.delegate(alice.delegate(1, target, EXPIRY), NOW)
    assert record.delegation.target == target
    assert record.live_delegation(EXPIRY - 1) is not None
    assert record.live_delegation(EXPIRY) is None


TERMINAL = {
    RecordState.CANCELLED: lambda o: o.cancel(1),
    RecordState.TRANSFERRED: lambda o: o.transfer(1, parse_handle("h1g5k0061A38F9A3540B9")),
    RecordState.COMPROMISED: lambda o: o.compromise(1),
}

ATTEMPTS = {
    Op.CREATE: lambda o: o.create(),
    Op.ASSIGN: lambda o: o.assign(5, "192.0.2.7", EXPIRY),
    Op.DELEGATE: lambda o: o.delegate(5, parse_handle("h1g5kB16C0A9DEADBEEF0"), EXPIRY),
    Op.CANCEL: lambda o: o.cancel(5),
    Op.TRANSFER: lambda o: o.transfer(5, parse_handle("h1g5kB16C0A9DEADBEEF0")),
    Op.COMPROMISE: lambda o: o.compromise(5),
}


@pytest.mark.parametrize("state", list(TERMINAL))
@pytest.mark.parametrize("op", list(ATTEMPTS))
def test_terminal_states_are_final(owners, state, op):
    registry = Registry(password_iterations=1)
    alice = owners[0]
    registry.create(alice.create(), NOW)
    ended = registry.apply(TERMINAL[state](alice), NOW)
    assert ended.state is state
    assert ended.state_proof is not None

    assert _code(registry.apply, ATTEMPTS[op](alice), NOW + 10) is ErrorCode.STATE_FINAL
    assert registry.require(alice.handle) == ended


def test_password_handles(registry):
    record = registry.create_password_handle("open sesame", NOW)
    assert re.fullmatch(r"h0[0-9A-F]{15}", str(record.handle))
    assert record.owner_pub is None
    assert record.password_verifier.startswith("pbkdf2-sha256$")

    assign = UpdateRequest(
        op=Op.ASSIGN,
        handle=record.handle,
        seq=1,
        address="192.0.2.7",
        ttl_seconds=60,
        expiry=EXPIRY,
    )
    assert _code(registry.assign, assign, NOW) is ErrorCode.BAD_PASSWORD
    assert _code(registry.assign, assign.with_password("guess"), NOW) is ErrorCode.BAD_PASSWORD
    updated = registry.assign(assign.with_password("open sesame"), NOW)
    assert updated.seq == 1

    with pytest.raises(OnhsError) as exc:
        registry.create_password_handle("", NOW)
    assert exc.value.code is ErrorCode.BAD_PASSWORD


def test_promiscuous_password_handles_never_collide(registry):
    handles = {str(registry.create_password_handle("pw", NOW).handle) for _ in range(10_000)}
    assert len(handles) == 10_000
    assert len(registry) == 10_000


def test_log_replay_reproduces_state(tmp_path, owners):
    log_path = tmp_path / "updates.log"
    alice, bob = owners[0], owners[1]
    live = Registry.open(log_path, password_iterations=1)
    live.create(alice.create(), NOW)
    live.create(bob.create(), NOW)
    live.assign(alice.assign(1, "192.0.2.7", EXPIRY), NOW + 1)
    live.assign(bob.assign(1, "udp:192.0.2.9:5353", EXPIRY, ttl=60, labels=["www"]), NOW + 2)
    live.delegate(alice.delegate(2, bob.handle, EXPIRY), NOW + 3)
    pw = live.create_password_handle("open sesame", NOW + 4)
    live.apply(
        UpdateRequest(op=Op.CANCEL, handle=pw.handle, seq=1).with_password("open sesame"), NOW + 5
    )
    with pytest.raises(OnhsError):
        live.assign(alice.assign(1, "192.0.2.1", EXPIRY), NOW + 6)
    live.close()

    lines = log_path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 7
    assert [parse_log_line(line).accepted_at for line in lines] == [
        NOW, NOW, NOW + 1, NOW + 2, NOW + 3, NOW + 4, NOW + 5,
    ]
    # the password itself never reaches the log
    text = "\n".join(lines)
    assert "open sesame" not in text
    assert "open sesame".encode().hex() not in text

    replayed = Registry.open(log_path, password_iterations=1)
    assert replayed.state_hash() == live.state_hash()
    assert replayed.records() == live.records()
    replayed.close()


def test_tampered_log_is_corrupt(tmp_path, owners):
    log_path = tmp_path / "updates.log"
    alice = owners[0]
    live = Registry.open(log_path)
    live.create(alice.create(), NOW)
    live.assign(alice.assign(1, "192.0.2.7", EXPIRY), NOW)
    live.close()

    text = log_path.read_text(encoding="utf-8")
    log_path.write_text(text.replace("192.0.2.7", "192.0.2.66"), encoding="utf-8")
    with pytest.raises(OnhsError) as exc:
        Registry.open(log_path)
    assert exc.value.code is ErrorCode.CORRUPT_LOG
    assert exc.value.detail.startswith("line 2:")

    log_path.write_text(text + "not a log line\n", encoding="utf-8")
    with pytest.raises(OnhsError) as exc:
        Registry.open(log_path)
    assert exc.value.code is ErrorCode.CORRUPT_LOG


def test_snapshot_round_trip_and_corruption(tmp_path, registry, owners):
    alice = owners[0]
    registry.create(alice.create(), NOW)
    registry.assign(alice.assign(1, "192.0.2.7", EXPIRY), NOW)
    registry.create_password_handle("pw", NOW)
    path = tmp_path / "registry.snapshot"
    digest = write_snapshot(path, registry.records())
    assert digest == registry.state_hash()

    restored = load_registry(snapshot_path=str(path))
    assert restored.records() == registry.records()
    assert restored.state_hash() == digest

    raw = path.read_text(encoding="utf-8")
    path.write_text(raw.replace('"seq":1', '"seq":7'), encoding="utf-8")
    with pytest.raises(OnhsError) as exc:
        read_snapshot(path)
    assert exc.value.code is ErrorCode.CORRUPT_SNAPSHOT

    path.write_text("", encoding="utf-8")
    with pytest.raises(OnhsError) as exc:
        read_snapshot(path)
    assert exc.value.code is ErrorCode.CORRUPT_SNAPSHOT


def test_load_registry_needs_a_source():
    with pytest.raises(OnhsError) as exc:
        load_registry()
    assert exc.value.code is ErrorCode.USAGE


def test_concurrent_updates_are_linearized(tmp_path, owners):
    alice = owners[0]
    log_path = tmp_path / "updates.log"
    registry = Registry.open(log_path)
    registry.create(alice.create(), NOW)
    requests = [alice.assign(seq, f"192.0.2.{seq}", EXPIRY) for seq in range(1, 9)]

    def submit(request):
        try:
            registry.assign(request, NOW)
        except OnhsError as exc:
            assert exc.code is ErrorCode.SEQ_REPLAY

    threads = [Thread(target=submit, args=(r,)) for r in reversed(requests)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    registry.close()

    assert registry.require(alice.handle).seq == 8
    seqs = [parse_log_line(line).request.seq for line in log_path.read_text().splitlines()]
    assert seqs[0] == 0
    assert seqs[1:] == sorted(set(seqs[1:]))
    assert seqs[-1] == 8


def test_oversized_numbers_in_the_log_are_corrupt(tmp_path, owners):
    log_path = tmp_path / "updates.log"
    alice = owners[0]
    live = Registry.open(log_path)
    live.create(alice.create(), NOW)
    live.cancel(alice.cancel(1), NOW)
    live.close()

    cancel_line = log_path.read_text(encoding="utf-8").splitlines()[1]
    parts = cancel_line.split("|")
    huge_seq = "|".join([*parts[:3], "9" * 5000, *parts[4:]])
    superscript_time = "|".join([*parts[:-1], "²"])
    for bad in (huge_seq, superscript_time):
        with pytest.raises(OnhsError) as exc:
            parse_log_line(bad)
        assert exc.value.code is ErrorCode.CORRUPT_LOG

    log_path.write_text(
        log_path.read_text(encoding="utf-8").replace(cancel_line, huge_seq), encoding="utf-8"
    )
    with pytest.raises(OnhsError) as exc:
        Registry.open(log_path)
    assert exc.value.code is ErrorCode.CORRUPT_LOG
    assert exc.value.detail.startswith("line 2:")


def _stream(owners) -> list[UpdateRequest]:
    alice, bob = owners[0], owners[1]
    return [
        alice.create(),
        alice.assign(1, "192.0.2.1", EXPIRY),
        alice.assign(2, "192.0.2.2", EXPIRY, labels=["www"]),
        alice.delegate(4, bob.handle, EXPIRY),
        alice.assign(7, "192.0.2.7", EXPIRY),
        bob.create(),
        bob.assign(3, "198.51.100.3", EXPIRY),
        bob.assign(5, "198.51.100.5", EXPIRY, labels=["mail"]),
    ]


def test_permuted_streams_match_a_monotone_stream(owners):
    stream = _stream(owners)
    rng = random.Random(13)
    for _ in range(1_000):
        order = rng.sample(stream, len(stream))
        registry = Registry(password_iterations=1)
        accepted = []
        for request in order:
            try:
                registry.apply(request, NOW)
            except OnhsError as exc:
                assert exc.code in (ErrorCode.SEQ_REPLAY, ErrorCode.NOT_FOUND)
            else:
                accepted.append(request)

        for handle in {str(r.handle) for r in accepted}:
            seqs = [r.seq for r in accepted if str(r.handle) == handle]
            assert seqs == sorted(set(seqs))

        monotone = Registry(password_iterations=1)
        for request in sorted(accepted, key=lambda r: (str(r.handle), r.seq)):
            monotone.apply(request, NOW)
        assert monotone.state_hash() == registry.state_hash()


def _random_history(registry: Registry, owners, rng: random.Random, count: int) -> None:
    """Drive exactly ``count`` accepted updates through the registry."""
    keyed = [owners[i] for i in range(4)]
    seqs: dict[str, int] = {}
    passwords = []
    now = NOW
    for owner in keyed:
        registry.create(owner.create(), now)
        seqs[str(owner.handle)] = 0
    for _ in range(2):
        record = registry.create_password_handle("pw", now)
        seqs[str(record.handle)] = 0
        passwords.append(record.handle)
    accepted = len(keyed) + len(passwords)

    while accepted < count:
        now += rng.randint(0, 5)
        labels = rng.choice([(), ("www",), ("mail",), ("www", "shop")])
        address = f"192.0.2.{rng.randrange(256)}"
        if rng.random() < 0.2:
            handle = rng.choice(passwords)
            seq = seqs[str(handle)] + rng.randint(1, 3)
            request = UpdateRequest(
                op=Op.ASSIGN,
                handle=handle,
                seq=seq,
                labels=labels,
                address=address,
                ttl_seconds=60,
                expiry=EXPIRY,
            ).with_password("pw")
        else:
            owner = rng.choice(keyed)
            seq = seqs[str(owner.handle)] + rng.randint(1, 3)
            if rng.random() < 0.25:
                target = rng.choice([o for o in keyed if o is not owner]).handle
                request = owner.delegate(seq, target, EXPIRY)
            else:
                ttl = rng.choice([0, 60, 3600])
                request = owner.assign(seq, address, EXPIRY, ttl=ttl, labels=labels)
        registry.apply(request, now)
        seqs[str(request.handle)] = seq
        accepted += 1


def test_replay_after_many_random_updates(tmp_path, owners):
    log_path = tmp_path / "updates.log"
    live = Registry.open(log_path, password_iterations=1)
    _random_history(live, owners, random.Random(17), 1_000)
    live.close()

    assert len(log_path.read_text(encoding="utf-8").splitlines()) == 1_000
    replayed = Registry.open(log_path, password_iterations=1)
    assert replayed.state_hash() == live.state_hash()
    replayed.close()


def test_replay_without_an_entry_diverges(tmp_path, owners):
    log_path = tmp_path / "updates.log"
    live = Registry.open(log_path, password_iterations=1)
    _random_history(live, owners, random.Random(19), 60)
    live.close()
    lines = log_path.read_text(encoding="utf-8").splitlines()

    entries = [parse_log_line(line).request for line in lines]
    latest = {str(request.handle): i for i, request in enumerate(entries)}
    creates = {i for i, request in enumerate(entries) if request.op is Op.CREATE}
    for dropped in sorted(set(latest.values()) | creates):
        shortened = lines[:dropped] + lines[dropped + 1 :]
        try:
            replayed = Registry(password_iterations=1).apply_log(shortened)
        except OnhsError as exc:
            assert exc.code is ErrorCode.CORRUPT_LOG
            continue
        assert replayed.state_hash() != live.state_hash()
