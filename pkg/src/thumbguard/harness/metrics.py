"""Overhead metrics: static code bytes and executed instructions per variant."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

from ..asm.isa import instruction_size
from ..asm.program import Program
from ..layout import DEFAULT_LAYOUT, MemoryLayout
from ..passes import HardenMode
from .corpus import Benchmark
from .differential import differential_check
from .pipeline import build_variant
from .workers import pmap

# column -> (pass variant, mode); the single-pass columns use the Silhouette forms
COLUMNS = {
    "baseline": ("baseline", HardenMode.SILHOUETTE),
    "ss": ("ss", HardenMode.SILHOUETTE),
    "sh": ("sh", HardenMode.SILHOUETTE),
    "cfi": ("cfi", HardenMode.SILHOUETTE),
    "silhouette": ("full", HardenMode.SILHOUETTE),
    "invert": ("full", HardenMode.INVERT),
    "sfi": ("full", HardenMode.SFI),
}


def code_bytes(p: Program) -> int:
    return sum(instruction_size(i) for f in p.functions for i in f.instructions)


@dataclass
class Metrics:
    program: str
    static: Dict[str, int] = field(default_factory=dict)
    dynamic: Dict[str, Dict[str, int]] = field(default_factory=dict)
    differential: Dict[str, bool] = field(default_factory=dict)

    def dynamic_total(self, column: str) -> int:
        return sum(self.dynamic[column].values())

    def static_ratio(self, column: str) -> float:
        return self.static[column] / self.static["baseline"]

    def dynamic_ratio(self, column: str) -> float:
        return self.dynamic_total(column) / self.dynamic_total("baseline")

    @property
    def columns(self) -> list:
        return [c for c in COLUMNS if c in self.static]

    def rows(self) -> list:
        return [(c, self.static[c], self.static_ratio(c), self.dynamic_total(c), self.dynamic_ratio(c))
                for c in self.columns]

    def lines(self) -> list:
        out = []
        for c, sb, sr, dn, dr in self.rows():
            out.append(f"METRIC {self.program} {c} static={sb} static_ratio={sr:.4f} "
                       f"dynamic={dn} dynamic_ratio={dr:.4f}")
        return out


def _measure(args) -> Metrics:
    b, layout, columns, check = args
    base = b.program()
    m = Metrics(b.name)
    fuel = b.fuel or 2_000_000
    for col in columns:
        variant, mode = COLUMNS[col]
        prog = build_variant(base, variant, mode, layout)
        verdict = differential_check(base, prog, b.workloads, mode, layout, b.entry, fuel,
                                     check_expected=check)
        m.static[col] = code_bytes(prog)
        m.dynamic[col] = {r.workload: r.variant.counters["exec"] for r in verdict.results
                          if r.variant is not None}
        m.differential[col] = verdict.passed
    return m


def measure(benchmarks: Sequence[Benchmark], layout: MemoryLayout = DEFAULT_LAYOUT,
            columns: Sequence[str] = tuple(COLUMNS), jobs: int = 1,
            check_expected: bool = True) -> List[Metrics]:
    """Per-benchmark metrics; every column is differential-checked against the baseline."""
    columns = tuple(columns)
    if "baseline" not in columns:
        columns = ("baseline",) + columns
    bad = [c for c in columns if c not in COLUMNS]
    if bad:
        raise ValueError(f"unknown column(s): {', '.join(bad)}")
    return pmap(_measure, [(b, layout, columns, check_expected) for b in benchmarks], jobs)


def format_table(metrics: Sequence[Metrics], kind: str = "dynamic") -> str:
    """Ratio table: one row per program, one column per variant, plus the geometric mean."""
    if not metrics:
        return ""
    cols = metrics[0].columns
    ratio = (lambda m, c: m.dynamic_ratio(c)) if kind == "dynamic" else (lambda m, c: m.static_ratio(c))
    width = max(len(m.program) for m in metrics + [Metrics("geomean")])
    out = [" ".join([f"{'program':<{width}}"] + [f"{c:>10}" for c in cols])]
    for m in metrics:
        out.append(" ".join([f"{m.program:<{width}}"] + [f"{ratio(m, c):>10.3f}" for c in cols]))
    geo = []
    for c in cols:
        prod = 1.0
        for m in metrics:
            prod *= ratio(m, c)
        geo.append(prod ** (1.0 / len(metrics)))
    out.append(" ".join([f"{'geomean':<{width}}"] + [f"{g:>10.3f}" for g in geo]))
    return "\n".join(out)


__all__ = ["COLUMNS", "Metrics", "code_bytes", "format_table", "measure"]
