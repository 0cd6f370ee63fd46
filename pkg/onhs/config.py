from __future__ import annotations

import os

from pydantic import Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class OnhsSettings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="ONHS_",
        validate_assignment=True,
    )

    # Storage
    data_dir: str = Field(default="./onhs-data")
    log_path: str | None = None
    snapshot_path: str | None = None
    snapshot_interval_seconds: int = Field(default=300, ge=5)

    # Handle domain
    handle_root: str = Field(default="handleroot.nicesponsor.org")
    default_digest_len: int = Field(default=16, ge=8, le=40)
    key_bits: int = Field(default=2048, ge=1024)
    password_iterations: int = Field(default=200_000, ge=1)
    zone_txt_ttl: int = Field(default=3600, ge=0)

    # Service
    bind_host: str = Field(default="127.0.0.1")
    bind_port: int = Field(default=7353, ge=0, le=65535)
    # HTTP admin surface is only started when a port is configured
    admin_port: int | None = Field(default=None, ge=0, le=65535)
    max_request_bytes: int = Field(default=8192, ge=256)

    # Resolution
    max_depth: int = Field(default=16, ge=1, le=256)
    strict: bool = Field(default=False)

    # Client
    client_timeout_seconds: float = Field(default=5.0, gt=0)
    client_retries: int = Field(default=2, ge=0)

    # Secrets are read from files, never from argv
    secret_key_file: str | None = None
    password_file: str | None = None

    log_level: str = Field(default="INFO")

    @property
    def resolved_log_path(self) -> str:
        return self.log_path or os.path.join(self.data_dir, "updates.log")

    @property
    def resolved_snapshot_path(self) -> str:
        return self.snapshot_path or os.path.join(self.data_dir, "registry.snapshot")

    def to_public_dict(self) -> dict:
        data = self.model_dump()
        # hide secret locations; expose presence booleans instead
        data["secret_key_file_present"] = bool(data.get("secret_key_file"))
        data["password_file_present"] = bool(data.get("password_file"))
        data.pop("secret_key_file", None)
        data.pop("password_file", None)
        return data

    @model_validator(mode="after")
    def _validate_invariants(self) -> OnhsSettings:
        if os.path.abspath(self.resolved_log_path) == os.path.abspath(
            self.resolved_snapshot_path
        ):
            raise ValueError("log_path and snapshot_path must differ")
        return self
