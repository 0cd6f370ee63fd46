from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from threading import RLock
from typing import TYPE_CHECKING

from .config import OnhsSettings
from .registry import Registry

if TYPE_CHECKING:
    from .scheduler import OnhsScheduler


@dataclass
class OnhsState:
    settings: OnhsSettings
    registry: Registry | None = None
    scheduler: OnhsScheduler | None = None

    started_at: datetime | None = None
    last_snapshot_at: datetime | None = None
    last_snapshot_hash: str | None = None
    lock: RLock = field(default_factory=RLock)

    def require_registry(self) -> Registry:
        with self.lock:
            if self.registry is None:
                self.registry = Registry.open(
                    self.settings.resolved_log_path,
                    password_iterations=self.settings.password_iterations,
                )
            return self.registry


_global_state: OnhsState | None = None


def get_state() -> OnhsState:
    global _global_state
    if _global_state is None:
        _global_state = OnhsState(settings=OnhsSettings())
    return _global_state


def _reset_state_for_testing() -> None:
    """Reset global state singleton. For test usage only."""
    global _global_state
    _global_state = None
