"""Embedded mock federation: origin, pull-through cache, redirector, tokens, TPC."""

from .cache import Cache, CacheConfig
from .origin import Origin, OriginConfig
from .redirector import Redirector, RedirectorConfig
from .tokens import TokenClaims, issue_token, mint, verify_token
from .tpc import tpc_copy

__all__ = [
    "Cache", "CacheConfig", "Origin", "OriginConfig", "Redirector", "RedirectorConfig",
    "TokenClaims", "issue_token", "mint", "verify_token", "tpc_copy",
]
