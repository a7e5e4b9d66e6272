"""Self-contained HMAC bearer tokens.

A token is ``b64url(claims_json) + "." + b64url(HMAC-SHA256(key, claims_json))``.
Each issue draws a fresh 128-bit nonce, so minting X tokens for the same
path yields X distinct strings that no cache can short-circuit.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import hmac
import json
import os
import secrets
import time
from dataclasses import dataclass

from ..errors import ValidationError

KEY_BYTES = 32
KEY_ENV = "FEDBENCH_TOKEN_KEY"

BAD_FORMAT = "bad_format"
BAD_MAC = "bad_mac"
EXPIRED = "expired"
PATH_MISMATCH = "path_mismatch"
REJECT_REASONS = (BAD_FORMAT, BAD_MAC, EXPIRED, PATH_MISMATCH)


@dataclass(frozen=True)
class TokenClaims:
    path: str
    expiry_unix: int
    nonce: str

    @classmethod
    def new(cls, path: str, lifetime_s: int = 3600, now: float | None = None) -> "TokenClaims":
        now = time.time() if now is None else now
        return cls(path=path, expiry_unix=int(now) + lifetime_s, nonce=secrets.token_hex(16))

    def to_json(self) -> bytes:
        return json.dumps(
            {"path": self.path, "expiry_unix": self.expiry_unix, "nonce": self.nonce},
            sort_keys=True, separators=(",", ":"),
        ).encode()


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: str | None = None
    claims: TokenClaims | None = None

    def __bool__(self):
        return self.accepted


def _b64e(raw: bytes) -> str:
    return base64.urlsafe_b64encode(raw).rstrip(b"=").decode("ascii")


def _b64d(text: str) -> bytes:
    return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))


def _check_key(key: bytes):
    if not isinstance(key, (bytes, bytearray)) or len(key) != KEY_BYTES:
        raise ValidationError(f"token key must be {KEY_BYTES} bytes", field="key")


def key_from_env(env=None) -> bytes | None:
    """Decode the hex bearer secret from ``FEDBENCH_TOKEN_KEY``, if set."""
    value = (env if env is not None else os.environ).get(KEY_ENV)
    if not value:
        return None
    try:
        key = bytes.fromhex(value.strip())
    except ValueError:
        raise ValidationError(f"{KEY_ENV} is not valid hex", field=KEY_ENV) from None
    _check_key(key)
    return key


def issue_token(key: bytes, claims: TokenClaims, now: float | None = None) -> str:
    _check_key(key)
    now = time.time() if now is None else now
    if claims.expiry_unix <= now:
        raise ValidationError("token expiry is not in the future", field="expiry_unix")
    body = claims.to_json()
    mac = hmac.new(key, body, hashlib.sha256).digest()
    return f"{_b64e(body)}.{_b64e(mac)}"


def mint(key: bytes, path: str, lifetime_s: int = 3600) -> str:
    """Issue a token for ``path`` with a fresh nonce."""
    return issue_token(key, TokenClaims.new(path, lifetime_s))


def verify_token(token: str, key: bytes, request_path: str, now: float | None = None) -> Verdict:
    _check_key(key)
    now = time.time() if now is None else now
    try:
        body_part, mac_part = token.split(".")
        body = _b64d(body_part)
        mac = _b64d(mac_part)
    except (ValueError, binascii.Error):
        return Verdict(False, BAD_FORMAT)
    # Unpadded base64 ignores trailing bits; only the canonical spelling is valid.
    if _b64e(body) != body_part or _b64e(mac) != mac_part:
        return Verdict(False, BAD_FORMAT)
    expected = hmac.new(key, body, hashlib.sha256).digest()
    if not hmac.compare_digest(mac, expected):
        return Verdict(False, BAD_MAC)
    try:
        raw = json.loads(body)
        claims = TokenClaims(path=str(raw["path"]), expiry_unix=int(raw["expiry_unix"]),
                             nonce=str(raw["nonce"]))
    except (ValueError, KeyError, TypeError):
        return Verdict(False, BAD_FORMAT)
    if claims.expiry_unix <= now:
        return Verdict(False, EXPIRED, claims)
    if not request_path.startswith(claims.path):
        return Verdict(False, PATH_MISMATCH, claims)
    return Verdict(True, None, claims)


def authorization_rate(key: bytes, tokens, request_path: str) -> tuple[int, float]:
    """Verify ``tokens`` sequentially; return (accepted count, verifications/s)."""
    tokens = list(tokens)
    t0 = time.perf_counter()
    accepted = sum(1 for t in tokens if verify_token(t, key, request_path).accepted)
    elapsed = time.perf_counter() - t0
    return accepted, (len(tokens) / elapsed if elapsed > 0 else float("inf"))
