import random

import pytest

from onhs.crypto import (
    TEST_KEY_BITS,
    KeyPair,
    Signature,
    check_password,
    decode_rsa_public_key,
    derive_handle,
    digest_matches,
    encode_rsa_public_key,
    generate_keypair,
    key_digest,
    make_password_verifier,
    sign,
    verify,
)
from onhs.errors import ErrorCode, OnhsError
from onhs.handles import parse_handle


def test_derive_handle_takes_trailing_sha1_digits():
    assert str(derive_handle(b"", 5, 16)) == "h1g5k95601890AFD80709"
    assert str(derive_handle(b"abc", 5, 16)) == "h1g5k7850C26C9CD0D89D"
    assert key_digest(b"abc", 5) == "A9993E364706816ABA3E25717850C26C9CD0D89D"


def test_digest_length_bounds():
    assert len(derive_handle(b"abc", 5, 8).digest_hex) == 8
    assert len(derive_handle(b"abc", 5, 40).digest_hex) == 40
    for n in (7, 41):
        with pytest.raises(OnhsError) as exc:
            derive_handle(b"abc", 5, n)
        assert exc.value.code is ErrorCode.BAD_DIGEST_LEN


def test_unknown_algorithm():
    with pytest.raises(OnhsError) as exc:
        derive_handle(b"abc", 99, 16)
    assert exc.value.code is ErrorCode.UNKNOWN_ALG
    # a well-formed handle with an unregistered algorithm simply never matches
    assert not digest_matches(parse_handle("h1g99k7850C26C9CD0D89D"), b"abc")


def test_digest_matches_and_single_bit_flips(owners):
    pub = owners[0].key.public_key_bytes
    h = derive_handle(pub)
    assert digest_matches(h, pub)
    rng = random.Random(3)
    matched = 0
    for _ in range(1_000):
        bit = rng.randrange(len(pub) * 8)
        flipped = bytearray(pub)
        flipped[bit // 8] ^= 1 << (bit % 8)
        matched += digest_matches(h, bytes(flipped))
    assert matched <= 1


def test_derived_digests_do_not_collide():
    rng = random.Random(4)
    digests = {derive_handle(rng.randbytes(132), 5, 16).digest_hex for _ in range(10_000)}
    assert len(digests) == 10_000


def test_digest_matches_rejects_password_handles():
    with pytest.raises(OnhsError) as exc:
        digest_matches(parse_handle("h0061A38F9A3540B9"), b"abc")
    assert exc.value.code is ErrorCode.USAGE


def test_seeded_generation_is_deterministic(owners):
    again = generate_keypair(5, rng_seed=b"onhs-test-key-0", bits=TEST_KEY_BITS)
    assert again.public_key_bytes == owners[0].key.public_key_bytes
    assert owners[1].key.public_key_bytes != owners[0].key.public_key_bytes


def test_fresh_keys_are_distinct():
    keys = {generate_keypair(5, bits=TEST_KEY_BITS).public_key_bytes for _ in range(10)}
    assert len(keys) == 10


def test_sign_and_verify(owners):
    kp = owners[0].key
    sig = sign(b"ONHSv1|CANCEL|h|1", kp)
    assert verify(b"ONHSv1|CANCEL|h|1", sig, kp.public_key_bytes)
    assert verify(b"ONHSv1|CANCEL|h|1", sig, kp.public_key_bytes, alg_code=5)
    assert not verify(b"ONHSv1|CANCEL|h|2", sig, kp.public_key_bytes)
    assert not verify(b"ONHSv1|CANCEL|h|1", sig, owners[1].key.public_key_bytes)
    assert not verify(b"ONHSv1|CANCEL|h|1", sig, kp.public_key_bytes, alg_code=8)
    assert not verify(b"ONHSv1|CANCEL|h|1", Signature(5, b"\x00" * 128), kp.public_key_bytes)
    assert not verify(b"x", sig, b"\x01")


def test_empty_message_round_trip(owners):
    kp = owners[0].key
    sig = sign(b"", kp)
    assert verify(b"", sig, kp.public_key_bytes)
    assert not verify(b"\x00", sig, kp.public_key_bytes)


def test_perturbed_messages_and_signatures_never_verify(owners):
    kp = owners[0].key
    msg = b"ONHSv1|ASSIGN|h1g5k0061A38F9A3540B9|4|www|192.0.2.7|3600|1700086400"
    sig = sign(msg, kp)
    assert verify(msg, sig, kp.public_key_bytes)
    rng = random.Random(6)
    for i in range(1_000):
        if i % 2:
            bit = rng.randrange(len(sig.value) * 8)
            value = bytearray(sig.value)
            value[bit // 8] ^= 1 << (bit % 8)
            assert not verify(msg, Signature(sig.alg_code, bytes(value)), kp.public_key_bytes)
            continue
        data = bytearray(msg)
        at = rng.randrange(len(data))
        edit = rng.choice(["flip", "drop", "insert"])
        if edit == "flip":
            data[at] ^= 1 << rng.randrange(8)
        elif edit == "drop":
            del data[at]
        else:
            data.insert(at, rng.randrange(256))
        assert not verify(bytes(data), sig, kp.public_key_bytes)


def test_public_key_wire_encoding(owners):
    kp = owners[0].key
    key = decode_rsa_public_key(kp.public_key_bytes)
    assert key.n == kp.private_key_material.n
    assert key.e == 65537
    assert kp.public_key_bytes[:4] == bytes([3, 1, 0, 1])
    assert encode_rsa_public_key(key.n, key.e) == kp.public_key_bytes
    # exponents longer than 255 bytes use the three-byte length prefix
    long_exp = encode_rsa_public_key(key.n, (1 << 2100) + 1)
    assert long_exp[0] == 0
    assert int.from_bytes(long_exp[1:3], "big") == 263


def test_key_file_round_trip(tmp_path, owners):
    path = tmp_path / "key.sec"
    owners[0].key.save(str(path))
    assert (path.stat().st_mode & 0o777) == 0o600
    loaded = KeyPair.load(str(path))
    assert loaded.public_key_bytes == owners[0].key.public_key_bytes
    assert loaded.alg_code == 5


def test_password_verifier():
    verifier = make_password_verifier("open sesame", iterations=1)
    assert verifier.startswith("pbkdf2-sha256$1$")
    assert check_password("open sesame", verifier)
    assert not check_password("open sesame!", verifier)
    assert not check_password("open sesame", "garbage")
