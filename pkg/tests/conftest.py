from __future__ import annotations

from dataclasses import dataclass

import pytest

from onhs.crypto import TEST_KEY_BITS, KeyPair, derive_handle, generate_keypair
from onhs.handles import Handle
from onhs.registry import Registry
from onhs.state import _reset_state_for_testing
from onhs.updates import Op, UpdateRequest


@dataclass
class Owner:
    """A key holder that produces signed updates for the handle its key derives."""

    key: KeyPair

    @property
    def handle(self) -> Handle:
        return derive_handle(self.key.public_key_bytes)

    def signed(self, op: Op, seq: int, **fields) -> UpdateRequest:
        return UpdateRequest(op=op, handle=self.handle, seq=seq, **fields).sign(self.key)

    def create(self) -> UpdateRequest:
        return self.signed(Op.CREATE, 0)

    def assign(self, seq: int, address: str, expiry: int, ttl: int = 3600, labels=()):
        return self.signed(
            Op.ASSIGN, seq, labels=tuple(labels), address=address, ttl_seconds=ttl, expiry=expiry
        )

    def delegate(self, seq: int, target: Handle, expiry: int) -> UpdateRequest:
        return self.signed(Op.DELEGATE, seq, target=target, expiry=expiry)

    def transfer(self, seq: int, target: Handle) -> UpdateRequest:
        return self.signed(Op.TRANSFER, seq, target=target)

    def cancel(self, seq: int) -> UpdateRequest:
        return self.signed(Op.CANCEL, seq)

    def compromise(self, seq: int) -> UpdateRequest:
        return self.signed(Op.COMPROMISE, seq)


class Owners:
    # key generation dominates the suite's runtime, so keys are made on first use and shared
    def __init__(self) -> None:
        self._owners: dict[int, Owner] = {}

    def __getitem__(self, index: int) -> Owner:
        if index not in self._owners:
            seed = f"onhs-test-key-{index}".encode()
            key = generate_keypair(5, rng_seed=seed, bits=TEST_KEY_BITS)
            self._owners[index] = Owner(key)
        return self._owners[index]


@pytest.fixture(scope="session")
def owners() -> Owners:
    return Owners()


@pytest.fixture
def registry() -> Registry:
    return Registry(password_iterations=1)


@pytest.fixture(autouse=True)
def _fresh_state():
    _reset_state_for_testing()
    yield
    _reset_state_for_testing()
