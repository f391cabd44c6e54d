"""Privileged map of live jmp_buf contexts kept by the hardened runtime."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

CAPACITY_MESSAGE = "Map reached its capacity"
INVALID_MESSAGE = "Invalid jmp_buf"


class JmpBufAbort(Exception):
    pass


@dataclass
class JmpEntry:
    buf: int
    sp: int
    lr: int
    regs: tuple  # r4..r11
    fp: tuple  # s16..s31
    depth: int = 0  # call depth recorded for the oracle
    valid: bool = True


class JmpBufMap:
    def __init__(self, capacity: int = 8):
        self.capacity = capacity
        self.entries: List[JmpEntry] = []
        self.high_water = 0

    def live(self) -> list:
        return [e for e in self.entries if e.valid]

    def _find(self, buf: int) -> Optional[JmpEntry]:
        for e in self.entries:
            if e.valid and e.buf == buf:
                return e
        return None

    def setjmp(self, entry: JmpEntry) -> None:
        """Record ``entry``, replacing a live entry for the same buffer."""
        old = self._find(entry.buf)
        if old is not None:
            self.entries[self.entries.index(old)] = entry
        else:
            for k, e in enumerate(self.entries):
                if not e.valid:
                    self.entries[k] = entry
                    break
            else:
                if len(self.entries) >= self.capacity:
                    raise JmpBufAbort(CAPACITY_MESSAGE)
                self.entries.append(entry)
        self.high_water = max(self.high_water, len(self.live()))

    def longjmp(self, buf: int) -> JmpEntry:
        """The live entry for ``buf``; entries of deeper frames are dropped."""
        match = self._find(buf)
        if match is None:
            raise JmpBufAbort(INVALID_MESSAGE)
        for e in self.entries:
            if e.valid and e.sp < match.sp:
                e.valid = False
        return match

    def expire(self, sp: int) -> int:
        """Invalidate entries created at or below ``sp``; returns how many."""
        n = 0
        for e in self.entries:
            if e.valid and e.sp <= sp:
                e.valid = False
                n += 1
        return n


__all__ = ["CAPACITY_MESSAGE", "INVALID_MESSAGE", "JmpBufAbort", "JmpBufMap", "JmpEntry"]
