"""HTTP plumbing shared by the embedding and chat clients: retries and a disk cache."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from pathlib import Path

import requests

from .errors import ServiceError

API_KEY_ENV = "LEXCOURT_API_KEY"

_RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def auth_headers() -> dict[str, str]:
    """Bearer auth from the environment; services that need no key ignore it."""
    key = os.environ.get(API_KEY_ENV)
    return {"Authorization": f"Bearer {key}"} if key else {}


def post_json(
    url: str,
    payload: dict,
    timeout: float = 30.0,
    max_retries: int = 3,
    backoff: float = 0.5,
) -> dict:
    """POST a JSON body, retrying transient failures with exponential backoff.

    Connection errors, timeouts, 429, and 5xx responses are retried up to
    ``max_retries`` additional attempts; anything still failing raises
    ServiceError. Non-retryable HTTP errors raise immediately.
    """
    headers = {"Content-Type": "application/json", **auth_headers()}
    last_error = ""
    for attempt in range(max_retries + 1):
        if attempt:
            time.sleep(backoff * (2 ** (attempt - 1)))
        try:
            resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            last_error = f"{type(exc).__name__}: {exc}"
            continue
        if resp.status_code in _RETRYABLE_STATUS:
            last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
            continue
        if resp.status_code != 200:
            raise ServiceError(f"{url} returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ServiceError(f"{url} returned non-JSON body") from exc
    raise ServiceError(f"{url} failed after {max_retries + 1} attempts ({last_error})")


class DiskCache:
    """Content-addressed JSON cache; entries are written atomically.

    A ``None`` directory disables caching, so callers need no conditionals.
    """

    def __init__(self, directory: str | Path | None):
        self.directory = Path(directory) if directory is not None else None

    def get(self, key: str) -> dict | None:
        if self.directory is None:
            return None
        path = self._path(key)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def put(self, key: str, value: dict) -> None:
        if self.directory is None:
            return
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                json.dump(value, handle)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def _path(self, key: str) -> Path:
        assert self.directory is not None
        return self.directory / key[:2] / f"{key}.json"
