from __future__ import annotations

from prometheus_client import Counter, Gauge, Summary

# Registry metrics
registry_updates_total = Counter(
    "onhs_registry_updates_total",
    "Lifecycle updates by operation and result",
    labelnames=("op", "result"),
)
registry_handles = Gauge("onhs_registry_handles", "Number of handle records held by the registry")
log_append_seconds = Summary(
    "onhs_log_append_seconds", "Duration of append-only log writes in seconds"
)
snapshot_writes_total = Counter("onhs_snapshot_writes_total", "Number of snapshot files written")

# Resolver metrics
resolutions_total = Counter(
    "onhs_resolutions_total", "Resolutions by result code", labelnames=("result",)
)
resolver_cache_hits_total = Counter(
    "onhs_resolver_cache_hits_total", "Resolutions served from a resolver cache"
)
resolver_cache_misses_total = Counter(
    "onhs_resolver_cache_misses_total", "Resolutions that went to the authority"
)

# Service metrics
wire_requests_total = Counter(
    "onhs_wire_requests_total",
    "Wire protocol requests by verb and status",
    labelnames=("verb", "status"),
)

# Scheduler metrics
scheduler_misfires_total = Counter(
    "onhs_scheduler_misfires_total", "Number of scheduler job misfires"
)
