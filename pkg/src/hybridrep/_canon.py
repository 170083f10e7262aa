"""Canonical byte encoding for plain-data values (dict/list/str/int/float/bool/None/bytes).

Used for parameter digests and for the JSON-backed sections of checkpoints, where
equal values must encode to equal bytes.
"""
from __future__ import annotations

import base64
import hashlib
import json
from typing import Any


def _tag(obj: Any) -> Any:
    if isinstance(obj, (bytes, bytearray, memoryview)):
        return {"$b": base64.b64encode(bytes(obj)).decode("ascii")}
    if isinstance(obj, dict):
        if all(isinstance(k, str) for k in obj):
            return {k: _tag(v) for k, v in obj.items()}
        # non-string keys: keep as ordered pair list, sorted for canonicity
        pairs = sorted(([_tag(k), _tag(v)] for k, v in obj.items()), key=lambda p: json.dumps(p[0], sort_keys=True))
        return {"$d": pairs}
    if isinstance(obj, (list, tuple)):
        return [_tag(v) for v in obj]
    return obj


def _untag(obj: Any) -> Any:
    if isinstance(obj, dict):
        if len(obj) == 1:
            if "$b" in obj:
                return base64.b64decode(obj["$b"])
            if "$d" in obj:
                return {_hashable(_untag(k)): _untag(v) for k, v in obj["$d"]}
        return {k: _untag(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_untag(v) for v in obj]
    return obj


def _hashable(v: Any) -> Any:
    return tuple(_hashable(x) for x in v) if isinstance(v, list) else v


def canon(obj: Any) -> bytes:
    return json.dumps(_tag(obj), sort_keys=True, separators=(",", ":")).encode()


def uncanon(data: bytes) -> Any:
    return _untag(json.loads(data))


def digest(obj: Any) -> bytes:
    """16-byte hash of the canonical encoding."""
    return hashlib.blake2b(canon(obj), digest_size=16).digest()
