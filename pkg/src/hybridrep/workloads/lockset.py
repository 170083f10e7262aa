"""Eraser-style lockset audit over a container's shared memory.

Each shared key moves through virgin -> exclusive -> shared -> shared-modified.
Once a key is accessed by a second thread its candidate lockset is the
intersection of the locks held at every access; a shared-modified key with an
empty candidate set is reported.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

VIRGIN, EXCLUSIVE, SHARED, SHARED_MODIFIED = range(4)


@dataclass
class _Var:
    state: int = VIRGIN
    owner: int = -1
    locks: Optional[frozenset] = None


@dataclass
class LocksetAuditor:
    races: dict[str, list] = field(default_factory=dict)
    _vars: dict[str, _Var] = field(default_factory=dict)

    def attach(self, container) -> "LocksetAuditor":
        kernel = container.kernel

        def held(tid: int) -> frozenset:
            return frozenset(k for k, lk in kernel.locks.items() if lk.writer == tid or tid in lk.readers)

        def audit(tid: int, key: str, write: bool) -> None:
            self.access(tid, key, write, held(tid))

        container.mem.audit = audit
        return self

    def access(self, tid: int, key: str, write: bool, held: frozenset) -> None:
        v = self._vars.get(key)
        if v is None:
            v = self._vars[key] = _Var()
        if v.state == VIRGIN:
            v.state, v.owner = EXCLUSIVE, tid
            return
        if v.state == EXCLUSIVE:
            if tid == v.owner:
                return
            v.state = SHARED_MODIFIED if write else SHARED
            v.locks = held
        else:
            v.locks = v.locks & held
            if write:
                v.state = SHARED_MODIFIED
        if v.state == SHARED_MODIFIED and not v.locks:
            self.races.setdefault(key, []).append((tid, "write" if write else "read"))

    @property
    def racy_keys(self) -> set[str]:
        return set(self.races)
