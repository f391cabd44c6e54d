"""ARMv7-M MPU model: regions, access permissions and the layout configuration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

from ..layout import DEFAULT_LAYOUT, MemoryLayout
from ..passes.store_harden import HardenMode
from . import kernel

READ, WRITE, EXEC = kernel.READ, kernel.WRITE, kernel.EXEC

# AP field -> (privileged read, privileged write, unprivileged read, unprivileged write).
# AP 0b100 is reserved on ARMv7-M; it is modelled as privileged read-only with
# unprivileged read/write, the inverted shadow-stack permission.
AP_TABLE = {
    0b000: (0, 0, 0, 0),
    0b001: (1, 1, 0, 0),
    0b010: (1, 1, 1, 0),
    0b011: (1, 1, 1, 1),
    0b100: (1, 0, 1, 1),
    0b101: (1, 0, 0, 0),
    0b110: (1, 0, 1, 0),
    0b111: (1, 0, 1, 0),
}

MPU_APERTURE = (0xE000ED90, 0xE000EDC0)


class MpuConfigError(ValueError):
    pass


def ap_bits(ap: int) -> int:
    pr, pw, ur, uw = AP_TABLE[ap]
    return pr | (pw << 1) | (ur << 2) | (uw << 3)


@dataclass(frozen=True)
class MpuRegion:
    number: int
    base: int
    size: int
    ap: int
    xn: bool = True
    name: str = ""
    enabled: bool = True

    def __post_init__(self):
        if not 0 <= self.number <= 7:
            raise MpuConfigError(f"region number {self.number} out of range")
        if self.size < 32 or self.size & (self.size - 1):
            raise MpuConfigError(f"region {self.number}: size {self.size:#x} is not a power of two >= 32")
        if self.base % self.size:
            raise MpuConfigError(f"region {self.number}: base {self.base:#x} not aligned to size")
        if self.ap not in AP_TABLE:
            raise MpuConfigError(f"region {self.number}: bad AP {self.ap}")

    @property
    def limit(self) -> int:
        return self.base + self.size

    def contains(self, addr: int) -> bool:
        return self.base <= addr < self.limit


@dataclass(frozen=True)
class MpuConfig:
    regions: Tuple[MpuRegion, ...]
    background: bool = True  # PRIVDEFENA
    enabled: bool = True
    hfnmiena: int = 1

    def __post_init__(self):
        numbers = [r.number for r in self.regions]
        if len(set(numbers)) != len(numbers):
            raise MpuConfigError("duplicate region number")

    @property
    def table(self) -> tuple:
        """Flat kernel table, highest region number first."""
        out = []
        for r in sorted(self.regions, key=lambda r: -r.number):
            if not r.enabled:
                continue
            out.extend((r.base, r.limit, ap_bits(r.ap), 1 if r.xn else 0))
        return tuple(out)

    def region_for(self, addr: int):
        for r in sorted(self.regions, key=lambda r: -r.number):
            if r.enabled and r.contains(addr):
                return r
        return None

    def check(self, addr: int, size: int, kind: int, privileged: bool) -> bool:
        if not self.enabled:
            return kind != EXEC or not kernel.arch_xn(addr)
        return bool(kernel.mpu_check(self.table, 1 if self.background else 0,
                                     addr, size, kind, 1 if privileged else 0))


def check_access(config: MpuConfig, addr: int, size: int, kind: str, view: str) -> bool:
    """Convenience form: ``kind`` in read/write/execute, ``view`` privileged/unprivileged."""
    k = {"read": READ, "write": WRITE, "execute": EXEC, "exec": EXEC}[kind]
    return config.check(addr, size, k, view.startswith("priv"))


def build_layout_config(layout: MemoryLayout = DEFAULT_LAYOUT, mode=HardenMode.SILHOUETTE) -> MpuConfig:
    """The five-region configuration installed before the application starts."""
    mode = HardenMode.parse(mode)
    invert = mode is HardenMode.INVERT
    ram_ap = 0b001 if invert else 0b011
    regions = (
        MpuRegion(0, layout.code_base, layout.code_size, 0b110, xn=False, name="code"),
        MpuRegion(1, layout.stack_base, layout.stack_size, ram_ap, name="stack"),
        MpuRegion(2, layout.shadow_base, layout.shadow_size, 0b100 if invert else 0b010, name="shadow"),
        MpuRegion(3, layout.heap_base, layout.heap_size, ram_ap, name="heap"),
        MpuRegion(4, layout.system_base, layout.system_size, 0b001, name="system"),
    )
    return MpuConfig(regions)


__all__ = ["AP_TABLE", "EXEC", "MPU_APERTURE", "MpuConfig", "MpuConfigError", "MpuRegion",
           "READ", "WRITE", "ap_bits", "build_layout_config", "check_access"]
