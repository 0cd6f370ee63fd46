from __future__ import annotations

from datetime import datetime, timezone
import logging
from typing import Callable

from apscheduler.events import EVENT_JOB_MISSED
from apscheduler.schedulers.background import BackgroundScheduler
from apscheduler.triggers.interval import IntervalTrigger

from .metrics import registry_handles, scheduler_misfires_total
from .state import OnhsState
from .storage import write_snapshot

logger = logging.getLogger("onhs.scheduler")


def snapshot_job(state: OnhsState) -> None:
    registry = state.registry
    if registry is None:
        return
    try:
        digest = write_snapshot(state.settings.resolved_snapshot_path, registry.records())
    except OSError as exc:
        logger.warning("Snapshot write failed: %s", exc)
        return
    with state.lock:
        state.last_snapshot_at = datetime.now(timezone.utc)
        state.last_snapshot_hash = digest


def gauges_job(state: OnhsState) -> None:
    if state.registry is not None:
        registry_handles.set(len(state.registry))


class OnhsScheduler:
    def __init__(self, state: OnhsState):
        self.state = state
        self.scheduler = BackgroundScheduler(timezone="UTC")

    def start(
        self,
        snapshot: Callable[[], None] | None = None,
        gauges: Callable[[], None] | None = None,
    ) -> None:
        # Listen for misfires to expose as metrics
        self.scheduler.add_listener(lambda event: scheduler_misfires_total.inc(), EVENT_JOB_MISSED)
        self.scheduler.start()
        self._schedule_jobs(
            snapshot or (lambda: snapshot_job(self.state)),
            gauges or (lambda: gauges_job(self.state)),
        )

    def _schedule_jobs(self, snapshot: Callable[[], None], gauges: Callable[[], None]) -> None:
        interval = self.state.settings.snapshot_interval_seconds
        # Jitter is at most 10% of interval, capped to 15s and always < interval
        jitter = min(max(0, interval // 10), 15, max(0, interval - 1))
        self.scheduler.add_job(
            snapshot,
            IntervalTrigger(seconds=interval, jitter=jitter),
            id="snapshot",
            replace_existing=True,
            coalesce=True,
            max_instances=1,
            misfire_grace_time=max(1, interval),
        )
        self.scheduler.add_job(
            gauges,
            IntervalTrigger(seconds=30),
            id="gauges",
            replace_existing=True,
            coalesce=True,
            max_instances=1,
            misfire_grace_time=30,
        )

    def job_ids(self) -> list[str]:
        return sorted(job.id for job in self.scheduler.get_jobs())

    def shutdown(self) -> None:
        self.scheduler.shutdown(wait=False)
