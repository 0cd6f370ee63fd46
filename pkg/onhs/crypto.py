"""Key pairs, key digests and signatures for self-assigned handles.

Public keys travel in the DNSKEY RSA wire encoding: one exponent-length byte (or a zero byte
followed by a two-byte big-endian length when the exponent is longer than 255 bytes), the
exponent, then the modulus, all big-endian. The key digest of a handle is the trailing hex
digits of the algorithm's hash over exactly those bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
import hashlib
import hmac
import json
import os
import random
import secrets
import struct
from typing import Any

from Cryptodome.Hash import SHA1, SHA256, SHA512
from Cryptodome.PublicKey import RSA
from Cryptodome.Signature import pkcs1_15
from Cryptodome.Util.number import bytes_to_long, long_to_bytes

from .errors import ErrorCode, OnhsError
from .handles import AuthType, Handle

MIN_DIGEST_LEN = 8
MAX_DIGEST_LEN = 40
DEFAULT_KEY_BITS = 2048
TEST_KEY_BITS = 1024


@dataclass(frozen=True)
class Algorithm:
    code: int
    name: str
    hash_name: str
    signing_hash: Any


# IANA DNSSEC algorithm numbers
ALGORITHMS: dict[int, Algorithm] = {
    5: Algorithm(5, "RSA/SHA1", "sha1", SHA1),
    8: Algorithm(8, "RSA/SHA256", "sha256", SHA256),
    10: Algorithm(10, "RSA/SHA512", "sha512", SHA512),
}


def get_algorithm(alg_code: int) -> Algorithm:
    try:
        return ALGORITHMS[alg_code]
    except KeyError:
        raise OnhsError(ErrorCode.UNKNOWN_ALG, f"algorithm {alg_code} is not registered") from None


@dataclass(frozen=True)
class Signature:
    alg_code: int
    value: bytes

    def hex(self) -> str:
        return self.value.hex()


@dataclass(frozen=True)
class KeyPair:
    alg_code: int
    public_key_bytes: bytes
    private_key_material: RSA.RsaKey

    def save(self, path: str) -> None:
        data = {
            "alg": self.alg_code,
            "private_key_pem": self.private_key_material.export_key(format="PEM").decode(),
        }
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True)

    @staticmethod
    def load(path: str) -> KeyPair:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        alg = get_algorithm(int(raw["alg"]))
        key = RSA.import_key(raw["private_key_pem"])
        return KeyPair(alg.code, encode_rsa_public_key(key.n, key.e), key)


def encode_rsa_public_key(modulus: int, exponent: int) -> bytes:
    exp = long_to_bytes(exponent)
    if len(exp) <= 255:
        prefix = struct.pack("B", len(exp))
    else:
        prefix = struct.pack("!BH", 0, len(exp))
    return prefix + exp + long_to_bytes(modulus)


def decode_rsa_public_key(data: bytes) -> RSA.RsaKey:
    try:
        exp_len = data[0]
        offset = 1
        if exp_len == 0:
            exp_len = struct.unpack("!H", data[1:3])[0]
            offset = 3
        if offset + exp_len >= len(data):
            raise ValueError("truncated key")
        exponent = bytes_to_long(data[offset : offset + exp_len])
        modulus = bytes_to_long(data[offset + exp_len :])
        return RSA.construct((modulus, exponent))
    except (IndexError, ValueError, struct.error) as exc:
        raise OnhsError(ErrorCode.BAD_SIGNATURE, "undecodable public key") from exc


def generate_keypair(
    alg_code: int = 5, rng_seed: bytes | None = None, bits: int = DEFAULT_KEY_BITS
) -> KeyPair:
    """Create a fresh key pair.

    With ``rng_seed`` every random byte comes from a private generator seeded with it, so
    the pair is reproducible (test mode). Each call owns its generator, so concurrent
    generation is safe.
    """
    alg = get_algorithm(alg_code)
    randfunc = random.Random(rng_seed).randbytes if rng_seed is not None else None
    key = RSA.generate(bits, randfunc=randfunc)
    return KeyPair(alg.code, encode_rsa_public_key(key.n, key.e), key)


def key_digest(pub: bytes, alg_code: int) -> str:
    """Full uppercase hex hash of the public key under the algorithm's hash."""
    alg = get_algorithm(alg_code)
    return hashlib.new(alg.hash_name, pub).hexdigest().upper()


def derive_handle(pub: bytes, alg_code: int = 5, digest_len: int = 16) -> Handle:
    get_algorithm(alg_code)
    if not MIN_DIGEST_LEN <= digest_len <= MAX_DIGEST_LEN:
        raise OnhsError(
            ErrorCode.BAD_DIGEST_LEN,
            f"digest length must be within {MIN_DIGEST_LEN}..{MAX_DIGEST_LEN}",
        )
    digest = key_digest(pub, alg_code)[-digest_len:]
    return Handle(auth_type=AuthType.PUBLIC_KEY, alg_code=alg_code, digest_hex=digest)


def digest_matches(h: Handle, pub: bytes) -> bool:
    if h.auth_type is not AuthType.PUBLIC_KEY or h.alg_code is None:
        raise OnhsError(ErrorCode.USAGE, "digest_matches needs a public-key handle")
    if h.alg_code not in ALGORITHMS:
        return False
    full = key_digest(pub, h.alg_code)
    return hmac.compare_digest(full[-len(h.digest_hex) :], h.digest_hex)


def sign(msg: bytes, kp: KeyPair) -> Signature:
    alg = get_algorithm(kp.alg_code)
    value = pkcs1_15.new(kp.private_key_material).sign(alg.signing_hash.new(msg))
    return Signature(alg.code, value)


def verify(msg: bytes, sig: Signature, pub: bytes, alg_code: int | None = None) -> bool:
    if alg_code is not None and alg_code != sig.alg_code:
        return False
    alg = get_algorithm(sig.alg_code)
    try:
        key = decode_rsa_public_key(pub)
    except OnhsError:
        return False
    try:
        pkcs1_15.new(key).verify(alg.signing_hash.new(msg), sig.value)
    except (ValueError, TypeError):
        return False
    return True


# Password verifiers for sponsor-assigned (type 0) handles

_VERIFIER_SCHEME = "pbkdf2-sha256"


def make_password_verifier(password: str, iterations: int = 200_000) -> str:
    salt = secrets.token_bytes(16)
    derived = hashlib.pbkdf2_hmac("sha256", password.encode(), salt, iterations)
    return f"{_VERIFIER_SCHEME}${iterations}${salt.hex()}${derived.hex()}"


def check_password(password: str, verifier: str) -> bool:
    try:
        scheme, iterations, salt_hex, hash_hex = verifier.split("$")
        if scheme != _VERIFIER_SCHEME:
            return False
        derived = hashlib.pbkdf2_hmac(
            "sha256", password.encode(), bytes.fromhex(salt_hex), int(iterations)
        )
    except ValueError:
        return False
    return hmac.compare_digest(derived.hex(), hash_hex)


def is_password_verifier(text: str) -> bool:
    parts = text.split("$")
    return len(parts) == 4 and parts[0] == _VERIFIER_SCHEME and parts[1].isdigit()
