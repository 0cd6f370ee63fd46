import os

import pytest

from onhs.config import OnhsSettings


def test_log_and_snapshot_must_differ(tmp_path):
    with pytest.raises(ValueError):
        OnhsSettings(log_path=str(tmp_path / "same"), snapshot_path=str(tmp_path / "same"))
    settings = OnhsSettings(data_dir=str(tmp_path))
    assert settings.resolved_log_path == os.path.join(str(tmp_path), "updates.log")
    assert settings.resolved_snapshot_path == os.path.join(str(tmp_path), "registry.snapshot")
    # assignment is validated too
    with pytest.raises(ValueError):
        settings.snapshot_path = settings.resolved_log_path


def test_bounds():
    for bad in (
        {"default_digest_len": 7},
        {"default_digest_len": 41},
        {"max_depth": 0},
        {"key_bits": 512},
        {"password_iterations": 0},
        {"max_request_bytes": 100},
        {"snapshot_interval_seconds": 1},
    ):
        with pytest.raises(ValueError):
            OnhsSettings(**bad)
    settings = OnhsSettings(default_digest_len=8, max_depth=16)
    assert settings.default_digest_len == 8


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("ONHS_HANDLE_ROOT", "handles.example.org")
    monkeypatch.setenv("ONHS_STRICT", "true")
    settings = OnhsSettings()
    assert settings.handle_root == "handles.example.org"
    assert settings.strict is True


def test_public_dict_hides_secret_paths(tmp_path):
    settings = OnhsSettings(secret_key_file=str(tmp_path / "k"), password_file=None)
    public = settings.to_public_dict()
    assert public["secret_key_file_present"] is True
    assert public["password_file_present"] is False
    assert "secret_key_file" not in public
    assert "password_file" not in public
