"""Device address map shared by the passes and the simulator."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Union

KEYS = ("code_base", "code_size", "stack_base", "stack_size", "shadow_stack_offset",
        "heap_base", "heap_size", "system_base", "system_size", "jmpbuf_capacity")

MAX_STACK = 0x200000


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class MemoryLayout:
    code_base: int = 0x00000000
    code_size: int = 0x00100000
    stack_base: int = 0x20000000
    stack_size: int = 0x00200000
    shadow_stack_offset: int = 0x00200000
    heap_base: int = 0x20400000
    heap_size: int = 0x00400000
    system_base: int = 0xE0000000
    system_size: int = 0x00100000
    jmpbuf_capacity: int = 8

    @property
    def stack_top(self) -> int:
        return self.stack_base + self.stack_size

    @property
    def shadow_base(self) -> int:
        return self.stack_base + self.shadow_stack_offset

    @property
    def shadow_size(self) -> int:
        return self.stack_size

    @property
    def ram_end(self) -> int:
        return max(self.stack_top, self.shadow_base + self.shadow_size,
                   self.heap_base + self.heap_size)

    def in_shadow(self, addr: int) -> bool:
        return self.shadow_base <= addr < self.shadow_base + self.shadow_size

    def in_stack(self, addr: int) -> bool:
        return self.stack_base <= addr < self.stack_top

    def bands(self) -> list:
        """(name, base, size) for every mapped band."""
        return [
            ("code", self.code_base, self.code_size),
            ("stack", self.stack_base, self.stack_size),
            ("shadow", self.shadow_base, self.shadow_size),
            ("heap", self.heap_base, self.heap_size),
            ("system", self.system_base, self.system_size),
        ]

    def validate(self) -> "MemoryLayout":
        if self.shadow_stack_offset <= 0:
            raise LayoutError("shadow_stack_offset must be positive")
        if self.stack_size > MAX_STACK:
            raise LayoutError(f"stack larger than {MAX_STACK:#x} bytes")
        if self.shadow_stack_offset < self.stack_size:
            raise LayoutError("shadow stack overlaps the regular stack")
        if self.heap_base < self.stack_top:
            raise LayoutError("heap must sit above the stack")
        if self.jmpbuf_capacity < 1:
            raise LayoutError("jmpbuf_capacity must be at least 1")
        spans = sorted((b, b + s, n) for n, b, s in self.bands())
        for (b0, e0, n0), (b1, e1, n1) in zip(spans, spans[1:]):
            if b1 < e0:
                raise LayoutError(f"bands {n0} and {n1} overlap")
        return self

    def with_values(self, **kw) -> "MemoryLayout":
        return replace(self, **kw)


DEFAULT_LAYOUT = MemoryLayout()


def parse_layout(text: str, base: MemoryLayout = DEFAULT_LAYOUT) -> MemoryLayout:
    """Parse ``key = 0xHEX`` lines; unspecified keys keep their defaults."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in KEYS:
            raise LayoutError(f"line {lineno}: bad layout entry '{raw.strip()}'")
        try:
            values[key] = int(value.strip(), 0)
        except ValueError:
            raise LayoutError(f"line {lineno}: bad number '{value.strip()}'") from None
    return replace(base, **values).validate()


def load_layout(path: Union[str, Path, None]) -> MemoryLayout:
    if path is None:
        return DEFAULT_LAYOUT
    return parse_layout(Path(path).read_text())


def format_layout(layout: MemoryLayout) -> str:
    out = []
    for f in fields(layout):
        out.append(f"{f.name} = {getattr(layout, f.name):#x}")
    return "\n".join(out) + "\n"
