"""Pass ordering: shadow stack, store hardening, CFI, then the scan."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Union

from ..asm.program import AsmError, Program
from ..asm.syntax import emit_program, parse_program
from ..layout import DEFAULT_LAYOUT, MemoryLayout, load_layout
from ..passes import HardenMode, PassError, cfi_program, harden_program, shadow_stack_program
from ..scanner import ScanPolicy, ScanReport, scan_privileged
from ..sim.mpu import MpuConfig, build_layout_config


class PipelineError(Exception):
    """A parse, pass or configuration failure with file:line context."""

    def __init__(self, message: str, path: str = "", line: int = 0, function: str = ""):
        self.message = message
        self.path = path
        self.line = line
        self.function = function
        where = path or "<input>"
        if line:
            where += f":{line}"
        if function:
            where += f" ({function})"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class PipelineConfig:
    input: Optional[Union[str, Path]] = None
    mode: HardenMode = HardenMode.SILHOUETTE
    layout: Union[MemoryLayout, str, Path, None] = None
    shadow_stack: bool = True
    store_harden: bool = True
    cfi: bool = True
    strict_jump_tables: bool = False
    strict: bool = False
    accept_risk: bool = False
    hfnmiena: int = 1

    def validate(self) -> "PipelineConfig":
        mode = HardenMode.parse(self.mode)
        if mode is HardenMode.INVERT and self.store_harden and not self.shadow_stack:
            raise PipelineError("store hardening in invert mode needs the shadow-stack pass")
        if self.hfnmiena not in (0, 1):
            raise PipelineError("hfnmiena must be 0 or 1")
        return replace(self, mode=mode)

    def resolved_layout(self) -> MemoryLayout:
        if isinstance(self.layout, MemoryLayout):
            return self.layout.validate()
        return load_layout(self.layout).validate()

    @property
    def passes(self) -> tuple:
        return tuple(name for name, on in (("shadow-stack", self.shadow_stack),
                                           ("store-harden", self.store_harden),
                                           ("cfi", self.cfi)) if on)


@dataclass
class PipelineResult:
    config: PipelineConfig
    program: Program
    text: str
    scan: ScanReport
    mpu: MpuConfig
    jump_tables: Dict[str, object] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return self.scan.exit_code(self.config.strict, self.config.accept_risk)


def apply_passes(p: Program, mode=HardenMode.SILHOUETTE, layout: MemoryLayout = DEFAULT_LAYOUT,
                 shadow_stack: bool = True, store_harden: bool = True, cfi: bool = True,
                 strict_jump_tables: bool = False) -> tuple:
    """Enabled passes in the fixed order; returns (program, jump-table reports)."""
    mode = HardenMode.parse(mode)
    reports: dict = {}
    if shadow_stack:
        p = shadow_stack_program(p, layout)
    if store_harden:
        p = harden_program(p, mode, layout)
    if cfi:
        p, reports = cfi_program(p, mode, strict_jump_tables)
    return p, reports


def run_pipeline(cfg: PipelineConfig, source: Optional[str] = None) -> PipelineResult:
    """Harden ``source`` (or the file ``cfg.input``) and scan the result."""
    cfg = cfg.validate()
    path = str(cfg.input) if cfg.input is not None else ""
    if source is None:
        if not path:
            raise PipelineError("no input")
        try:
            source = Path(path).read_text()
        except OSError as exc:
            raise PipelineError(f"cannot read input ({exc.strerror})", path) from None
    layout = cfg.resolved_layout()
    try:
        program = parse_program(source)
    except AsmError as exc:
        raise PipelineError(exc.message, path, exc.line, exc.function or "") from None
    try:
        out, reports = apply_passes(program, cfg.mode, layout, cfg.shadow_stack, cfg.store_harden,
                                    cfg.cfi, cfg.strict_jump_tables)
    except PassError as exc:
        raise PipelineError(exc.message, path, exc.line, exc.function) from None
    scan = scan_privileged(out, ScanPolicy(cfg.mode, cfg.hfnmiena, cfg.strict), layout)
    return PipelineResult(cfg, out, emit_program(out), scan, build_layout_config(layout, cfg.mode),
                          reports)


VARIANTS = {
    "baseline": dict(shadow_stack=False, store_harden=False, cfi=False),
    "ss": dict(shadow_stack=True, store_harden=False, cfi=False),
    "sh": dict(shadow_stack=False, store_harden=True, cfi=False),
    "cfi": dict(shadow_stack=False, store_harden=False, cfi=True),
    "full": dict(shadow_stack=True, store_harden=True, cfi=True),
}


def build_variant(p: Program, variant: str, mode=HardenMode.SILHOUETTE,
                  layout: MemoryLayout = DEFAULT_LAYOUT) -> Program:
    """One column of the overhead table: a single pass, all passes or none."""
    if variant not in VARIANTS:
        raise PipelineError(f"unknown variant '{variant}'")
    return apply_passes(p, mode, layout, **VARIANTS[variant])[0]


__all__ = ["PipelineConfig", "PipelineError", "PipelineResult", "VARIANTS", "apply_passes",
           "build_variant", "run_pipeline"]
