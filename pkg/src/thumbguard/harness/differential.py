"""Differential testing: a hardened variant must behave like its baseline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from ..asm.program import Program
from ..layout import DEFAULT_LAYOUT, MemoryLayout
from ..passes import HardenMode
from ..sim.loader import LoadError, load_program
from ..sim.machine import DEFAULT_FUEL, Machine, Outcome
from .corpus import Workload

CALLEE_SAVED_INDEX = (4, 5, 6, 7, 8, 9, 10, 11, 13)


@dataclass
class WorkloadResult:
    workload: str
    passed: bool
    reason: str = ""
    baseline: Optional[Outcome] = None
    variant: Optional[Outcome] = None


@dataclass
class DiffVerdict:
    results: List[WorkloadResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.results) and all(r.passed for r in self.results)

    def failures(self) -> list:
        return [r for r in self.results if not r.passed]

    def lines(self) -> list:
        return [f"DIFF {'pass' if r.passed else 'fail'} {r.workload}" + (f" {r.reason}" if r.reason else "")
                for r in self.results]


def execute(p: Program, workload: Workload, mode=HardenMode.SILHOUETTE,
            layout: MemoryLayout = DEFAULT_LAYOUT, entry: str = "main",
            fuel: int = DEFAULT_FUEL, **kw) -> Outcome:
    return Machine(load_program(p, layout), mode, inputs=workload.inputs(), entry=entry,
                   fuel=fuel, **kw).run()


def compare(base: Outcome, var: Outcome, expect_r0: Optional[int] = None) -> str:
    """Empty string when the observable states agree, else the first difference."""
    for label, o in (("baseline", base), ("variant", var)):
        if o.status == "trapped":
            return f"{label} trapped: {o.trap} ({o.detail})"
        if o.status != "halted":
            return f"{label} did not halt ({o.status})"
    if base.exit_value != var.exit_value:
        return f"r0 {base.exit_value:#x} != {var.exit_value:#x}"
    if expect_r0 is not None and var.exit_value != expect_r0 & 0xFFFFFFFF:
        return f"r0 {var.exit_value:#x} != expected {expect_r0:#x}"
    for k, (a, b) in enumerate(zip(base.observed, var.observed)):
        if a != b:
            diff = next(n for n in range(min(len(a), len(b))) if a[n] != b[n]) if len(a) == len(b) else 0
            return f"observed range {k} differs at byte {diff}"
    for idx in CALLEE_SAVED_INDEX:
        if base.registers[idx] != var.registers[idx]:
            return f"callee-saved r{idx} {base.registers[idx]:#x} != {var.registers[idx]:#x}"
    return ""


def differential_check(baseline: Program, variant: Program, workloads: Sequence[Workload],
                       mode=HardenMode.SILHOUETTE, layout: MemoryLayout = DEFAULT_LAYOUT,
                       entry: str = "main", fuel: int = DEFAULT_FUEL,
                       check_expected: bool = True) -> DiffVerdict:
    """Run every workload on both programs; the variant uses the ``mode`` MPU configuration.

    The baseline runs under the Silhouette configuration, which leaves ordinary RAM writable
    from both privilege views.
    """
    mode = HardenMode.parse(mode)
    verdict = DiffVerdict()
    for w in workloads:
        try:
            base = execute(baseline, w, HardenMode.SILHOUETTE, layout, entry, fuel)
            var = execute(variant, w, mode, layout, entry, fuel)
        except LoadError as exc:
            verdict.results.append(WorkloadResult(w.name, False, f"load error: {exc}"))
            continue
        reason = compare(base, var, w.expect_r0 if check_expected else None)
        verdict.results.append(WorkloadResult(w.name, not reason, reason, base, var))
    return verdict


__all__ = ["DiffVerdict", "WorkloadResult", "compare", "differential_check", "execute"]
