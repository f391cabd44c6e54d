"""Attack campaigns: inject write-what-where primitives and classify the outcome."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from ..asm.program import Program
from ..layout import DEFAULT_LAYOUT, MemoryLayout
from ..passes import HardenMode
from ..sim.loader import load_program
from ..sim.machine import AttackSpec, AttackWrite, Machine, Outcome
from ..sim.mpu import MPU_APERTURE
from .corpus import Benchmark, Workload
from .pipeline import build_variant
from .workers import pmap

DEFEATED_TRAP = "defeated-trap"
DEFEATED_NO_EFFECT = "defeated-no-effect"
HIJACK = "hijack"
NOT_FIRED = "not-fired"

ATTACK_FUEL = 200_000
MPU_CTRL = 0xE000ED94

# the attacker's write primitive in each mode: application stores are
# unprivileged (Silhouette), privileged (Invert) or masked (SFI)
CHANNEL = {HardenMode.SILHOUETTE: "unprivileged", HardenMode.INVERT: "privileged",
           HardenMode.SFI: "masked"}

GENERIC_CLASSES = ("return-slot", "shadow-slot", "mpu-register")
# classes whose control run needs the shadow stack to be present but unprotected
_SHADOW_CONTROL = {"shadow-slot", "strex-redirect"}


def classify(o: Outcome) -> str:
    if not o.attack_fired:
        return NOT_FIRED
    if not o.verdict:
        return HIJACK
    if o.status in ("trapped", "fuel"):
        return DEFEATED_TRAP
    return DEFEATED_NO_EFFECT


@dataclass
class AttackResult:
    program: str
    attack: str
    mode: str
    outcome: str
    security: str
    detail: str = ""
    control: Optional[str] = None

    @property
    def defeated(self) -> bool:
        return self.outcome in (DEFEATED_TRAP, DEFEATED_NO_EFFECT)

    @property
    def meaningful(self) -> bool:
        """The same attack hijacks an unprotected build."""
        return self.control == HIJACK

    def line(self) -> str:
        out = f"ATTACK {self.program} {self.mode} {self.attack} {self.outcome} {self.security}"
        if self.control is not None:
            out += f" control={self.control}"
        return out


@dataclass
class SecurityReport:
    results: List[AttackResult] = field(default_factory=list)

    @property
    def hijacks(self) -> list:
        return [r for r in self.results if r.outcome == HIJACK]

    @property
    def passed(self) -> bool:
        return bool(self.results) and all(r.defeated for r in self.results)

    @property
    def classes(self) -> set:
        return {r.attack for r in self.results}

    def merge(self, other: "SecurityReport") -> "SecurityReport":
        return SecurityReport(self.results + other.results)

    def lines(self) -> list:
        out = [r.line() for r in self.results]
        defeated = sum(r.defeated for r in self.results)
        out.append(f"SUMMARY attacks={len(self.results)} defeated={defeated} hijacks={len(self.hijacks)}")
        return out


def _job(args) -> Outcome:
    program, layout, mode, workload, spec, entry, fuel = args
    return Machine(load_program(program, layout), mode, inputs=workload.inputs(), attack=spec,
                   entry=entry, fuel=fuel).run()


def attack_suite(p: Program, attacks: Sequence[AttackSpec], workload: Workload,
                 mode=HardenMode.SILHOUETTE, layout: MemoryLayout = DEFAULT_LAYOUT,
                 entry: str = "main", fuel: int = ATTACK_FUEL, name: str = "program",
                 jobs: int = 1) -> SecurityReport:
    """Run each attack against ``p`` and classify it."""
    mode = HardenMode.parse(mode)
    outcomes = pmap(_job, [(p, layout, mode, workload, a, entry, fuel) for a in attacks], jobs)
    report = SecurityReport()
    for a, o in zip(attacks, outcomes):
        report.results.append(AttackResult(name, a.kind or a.name, mode.value, classify(o),
                                           o.security, o.detail))
    return report


def pick_target(p: Program, workload: Workload, entry: str = "main",
                layout: MemoryLayout = DEFAULT_LAYOUT) -> Optional[str]:
    """A non-exempt function that saves lr and runs under ``workload``, callees first."""
    m = Machine(load_program(p, layout), inputs=workload.inputs(), entry=entry, fuel=ATTACK_FUEL)
    m.run()
    ran = m.entries_by_function
    saving = [f.name for f in p.functions
              if not f.exempt and m.fn_info.get(f.name, (False,))[0] and ran.get(f.name)]
    callees = [n for n in saving if n != entry]
    return (callees or saving or [None])[0]


def generic_attacks(target: Optional[str], entry: str, channel: str) -> List[AttackSpec]:
    out = []
    if target is not None:
        out.append(AttackSpec("return-slot", (AttackWrite("frame:ret", f"fn:{target}"),), "body",
                              target, channel=channel, kind="return-slot"))
        out.append(AttackSpec("shadow-slot", (AttackWrite("frame:shadow", f"fn:{target}"),), "body",
                              target, channel=channel, kind="shadow-slot"))
    out.append(AttackSpec("mpu-register", (AttackWrite(MPU_CTRL, 0),), "entry", entry,
                          channel=channel, kind="mpu-register"))
    return out


def benchmark_attacks(b: Benchmark, mode, layout: MemoryLayout = DEFAULT_LAYOUT,
                      baseline: Optional[Program] = None) -> List[tuple]:
    """(AttackSpec, Workload) pairs: the generic classes plus the manifest's own."""
    mode = HardenMode.parse(mode)
    channel = CHANNEL[mode]
    baseline = baseline or b.program()
    w = b.workload()
    target = b.target or pick_target(baseline, w, b.entry, layout)
    out = [(a, w) for a in generic_attacks(target, b.entry, channel)]
    for ma in b.attacks:
        out.append((ma.spec(channel), b.workload(ma.workload)))
    return out


def _control_program(kind: str, baseline: Program, layout: MemoryLayout) -> Program:
    if kind in _SHADOW_CONTROL:
        return build_variant(baseline, "ss", HardenMode.SILHOUETTE, layout)
    return baseline


def campaign(benchmarks: Sequence[Benchmark], mode=HardenMode.SILHOUETTE,
             layout: MemoryLayout = DEFAULT_LAYOUT, controls: bool = True,
             jobs: int = 1) -> SecurityReport:
    """Every bundled attack against the fully hardened build of every benchmark.

    With ``controls`` each attack is replayed through a privileged store against an
    unprotected build, which must hijack for the attack to count as meaningful.
    """
    mode = HardenMode.parse(mode)
    jobs_list, meta = [], []
    for b in benchmarks:
        base = b.program()
        hardened = build_variant(base, "full", mode, layout)
        fuel = min(b.fuel or ATTACK_FUEL, ATTACK_FUEL)
        for spec, w in benchmark_attacks(b, mode, layout, base):
            jobs_list.append((hardened, layout, mode, w, spec, b.entry, fuel))
            if controls:
                ctl = AttackSpec(spec.name, spec.writes, spec.trigger, spec.function, spec.occurrence,
                                 spec.steps, "privileged", spec.kind)
                jobs_list.append((_control_program(spec.kind, base, layout), layout,
                                  HardenMode.SILHOUETTE, w, ctl, b.entry, fuel))
            meta.append((b.name, spec))
    outcomes = pmap(_job, jobs_list, jobs)
    step = 2 if controls else 1
    report = SecurityReport()
    for k, (name, spec) in enumerate(meta):
        o = outcomes[k * step]
        control = classify(outcomes[k * step + 1]) if controls else None
        report.results.append(AttackResult(name, spec.kind, mode.value, classify(o), o.security,
                                           o.detail, control))
    return report


__all__ = ["CHANNEL", "DEFEATED_NO_EFFECT", "DEFEATED_TRAP", "GENERIC_CLASSES", "HIJACK", "NOT_FIRED",
           "AttackResult", "SecurityReport", "attack_suite", "benchmark_attacks", "campaign",
           "classify", "generic_attacks", "pick_target"]
