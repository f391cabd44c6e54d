"""Linear scan of the final program for exploitable privileged instructions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

from .asm.isa import Flag, Imm, Instruction, Kind, Mem, classify_instruction
from .asm.program import Program
from .asm.syntax import instruction_lines
from .passes.store_harden import HardenMode, bic_masks
from .layout import DEFAULT_LAYOUT, MemoryLayout

ERROR = "error"
NOTE = "note"

# inserted sp-relative spills whose frame is constant by construction
_TRUSTED_SPILL = {Flag.CFI_CHECK}


@dataclass(frozen=True)
class ScanPolicy:
    mode: HardenMode = HardenMode.SILHOUETTE
    hfnmiena: int = 1
    strict: bool = False

    @property
    def store_rule(self) -> bool:
        return self.mode is HardenMode.SILHOUETTE


@dataclass(frozen=True, order=True)
class Finding:
    function: str
    line: int
    kind: str
    severity: str

    def machine(self) -> str:
        return f"FIND {self.severity} {self.function} {self.line} {self.kind}"


@dataclass
class ScanReport:
    findings: List[Finding] = field(default_factory=list)

    @property
    def errors(self) -> list:
        return [f for f in self.findings if f.severity == ERROR]

    @property
    def notes(self) -> list:
        return [f for f in self.findings if f.severity == NOTE]

    @property
    def verdict(self) -> str:
        return "findings-present" if self.errors else "clean"

    @property
    def clean(self) -> bool:
        return not self.errors

    def exit_code(self, strict: bool = False, accept_risk: bool = False) -> int:
        if self.errors and not accept_risk:
            return 2
        if strict and self.findings:
            return 3
        return 0

    def lines(self) -> list:
        return [f.machine() for f in self.findings]

    def text(self) -> str:
        out = [f"{f.function}:{f.line}: {f.severity}: {f.kind}" for f in self.findings]
        out.append(f"verdict: {self.verdict} ({len(self.errors)} errors, {len(self.notes)} notes)")
        return "\n".join(out)


def _is_bic_guard(i, base: str, masks, cond: str = "al") -> Optional[str]:
    """Source register of ``bic base, src, #mask`` if ``i`` is one of the masks.

    A predicated guard only counts when it shares the store's condition.
    """
    if isinstance(i, Instruction) and i.mnemonic == "bic" and i.cond == cond \
            and i.operands[0] == base and isinstance(i.operands[-1], Imm) \
            and i.operands[-1].value in (masks.mask1, masks.mask2):
        return i.operands[1] if len(i.operands) == 3 else base
    return None


def _guarded(prev: list, reg: str, masks, cond: str = "al") -> bool:
    """The two instructions before a store mask ``reg`` with both BIC masks."""
    if len(prev) < 2:
        return False
    a, b = prev[-2], prev[-1]
    if b.mnemonic == "it" and len(prev) >= 3:
        a, b = prev[-3], prev[-2]
    if _is_bic_guard(b, reg, masks, cond) != reg or _is_bic_guard(a, reg, masks, cond) is None:
        return False
    return {a.operands[-1].value, b.operands[-1].value} == {masks.mask1, masks.mask2}


def _store_base(i: Instruction) -> Optional[Mem]:
    for op in i.operands:
        if isinstance(op, Mem):
            return op
    return None


def scan_privileged(p: Program, policy: ScanPolicy = ScanPolicy(),
                    layout: MemoryLayout = DEFAULT_LAYOUT) -> ScanReport:
    masks = bic_masks(layout)
    findings = []
    prev_by_fn: dict = {}
    for lineno, f, i in instruction_lines(p):
        prev = prev_by_fn.setdefault(f.name, [])
        kind = classify_instruction(i)
        sev = None
        label = None
        if kind is Kind.PRIV_MSR:
            sev, label = (NOTE if f.exempt else ERROR), "MSR"
        elif kind is Kind.PRIV_CPS:
            sev, label = (NOTE if f.exempt or policy.hfnmiena == 1 else ERROR), "CPS"
        elif kind is Kind.PRIV_MRS:
            sev, label = NOTE, "MRS"
        elif i.mnemonic == "svc":
            sev, label = NOTE, "SVC"
        elif kind is Kind.STORE_EXCLUSIVE and not f.exempt and policy.mode is not HardenMode.INVERT:
            base = _store_base(i)
            if base is None or base.offset or not _guarded(prev, base.base, masks, i.cond):
                sev, label = ERROR, "unguarded-strex"
        elif kind.is_store and kind is not Kind.UNPRIVILEGED_STORE and not f.exempt:
            ss = Flag.SHADOW_STACK_STORE in i.flags
            if policy.store_rule and not ss and not (i.flags & _TRUSTED_SPILL):
                sev, label = ERROR, f"privileged-store({i.mnemonic})"
            elif policy.mode is HardenMode.SFI and not ss and not (i.flags & _TRUSTED_SPILL):
                base = _store_base(i)
                if base is None or base.index is not None or base.offset \
                        or not _guarded(prev, base.base, masks, i.cond):
                    if not (base is not None and base.base == "sp" and Flag.SFI_GUARD in i.flags):
                        sev, label = ERROR, f"unguarded-store({i.mnemonic})"
        if sev is not None:
            findings.append(Finding(f.name, lineno, label, sev))
        prev.append(i)
    findings.sort(key=lambda x: (x.function, x.line))
    return ScanReport(findings)


__all__ = ["ERROR", "NOTE", "Finding", "ScanPolicy", "ScanReport", "scan_privileged"]
