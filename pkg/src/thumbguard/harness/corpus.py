"""Benchmark corpus: assembly sources plus per-program JSON manifests."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

from ..asm.program import Program
from ..asm.syntax import parse_program
from ..sim.machine import AttackSpec, AttackWrite, Inputs

CORPUS_DIR = Path(__file__).resolve().parent.parent / "corpus"
NEGATIVE_DIR = CORPUS_DIR / "negative"


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Workload:
    name: str
    args: tuple = ()
    preload: tuple = ()  # (address, value, size)
    observe: tuple = ()  # (address, size)
    expect_r0: Optional[int] = None

    def inputs(self) -> Inputs:
        return Inputs(args=self.args, preload=self.preload, observe=self.observe)


@dataclass(frozen=True)
class ManifestAttack:
    kind: str
    function: str
    writes: tuple
    occurrence: int = 1
    trigger: str = "body"
    workload: Optional[str] = None

    def spec(self, channel: str) -> AttackSpec:
        return AttackSpec(self.kind, self.writes, self.trigger, self.function,
                          self.occurrence, channel=channel, kind=self.kind)


@dataclass
class Benchmark:
    name: str
    archetype: str
    entry: str
    source: str
    path: Path
    workloads: List[Workload] = field(default_factory=list)
    attacks: List[ManifestAttack] = field(default_factory=list)
    fuel: Optional[int] = None
    role: str = "benign"
    target: Optional[str] = None  # function for the generic return-address attacks

    def program(self) -> Program:
        return parse_program(self.source)

    def workload(self, name: Optional[str] = None) -> Workload:
        if name is None:
            return self.workloads[0]
        for w in self.workloads:
            if w.name == name:
                return w
        raise ManifestError(f"{self.name}: no workload '{name}'")


def _workload(raw: dict, where: str) -> Workload:
    preload = []
    for block in raw.get("preload", ()):
        addr = block["addr"]
        for k, word in enumerate(block.get("words", ())):
            preload.append((_offset(addr, 4 * k), word, 4))
    observe = tuple((a, int(s)) for a, s in raw.get("observe", ()))
    expect = raw.get("expect", {}).get("r0")
    if "name" not in raw:
        raise ManifestError(f"{where}: workload without a name")
    return Workload(raw["name"], tuple(raw.get("args", ())), tuple(preload), observe, expect)


def _offset(addr, delta: int):
    if delta == 0:
        return addr
    if isinstance(addr, int):
        return addr + delta
    head, plus, tail = addr.partition("+")
    base = int(tail, 0) if plus else 0
    return f"{head}+{base + delta}"


def _attack(raw: dict, where: str) -> ManifestAttack:
    try:
        writes = tuple(AttackWrite(a, v, int(s)) for a, v, s in raw["writes"])
        return ManifestAttack(raw["class"], raw["function"], writes, int(raw.get("occurrence", 1)),
                              raw.get("trigger", "body"), raw.get("workload"))
    except (KeyError, ValueError, TypeError) as exc:
        raise ManifestError(f"{where}: bad attack entry ({exc})") from None


def load_benchmark(manifest: Path) -> Benchmark:
    manifest = Path(manifest)
    raw = json.loads(manifest.read_text())
    source_path = manifest.with_suffix(".s")
    if not source_path.exists():
        raise ManifestError(f"{manifest}: missing {source_path.name}")
    where = manifest.name
    return Benchmark(
        name=raw.get("name", manifest.stem),
        archetype=raw.get("archetype", ""),
        entry=raw.get("entry", "main"),
        source=source_path.read_text(),
        path=source_path,
        workloads=[_workload(w, where) for w in raw.get("workloads", ())],
        attacks=[_attack(a, where) for a in raw.get("attacks", ())],
        fuel=raw.get("fuel"),
        role=raw.get("role", "benign"),
        target=raw.get("target"),
    )


def load_corpus(directory: Optional[Path] = None, include_roles: Tuple[str, ...] = ("benign",)) -> List[Benchmark]:
    """Every manifest in ``directory`` (sorted by name) whose role is selected."""
    directory = Path(directory) if directory else CORPUS_DIR
    out = [load_benchmark(m) for m in sorted(directory.glob("*.json"))]
    return [b for b in out if b.role in include_roles]


def get_benchmark(name: str) -> Benchmark:
    path = CORPUS_DIR / f"{name}.json"
    if not path.exists():
        raise ManifestError(f"no corpus program '{name}'")
    return load_benchmark(path)


def negative_fixture(name: str) -> str:
    return (NEGATIVE_DIR / f"{name}.s").read_text()


__all__ = ["Benchmark", "CORPUS_DIR", "ManifestAttack", "ManifestError", "NEGATIVE_DIR", "Workload",
           "get_benchmark", "load_benchmark", "load_corpus", "negative_fixture"]
