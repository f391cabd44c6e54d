"""Simulator: MPU model, loader, runtime and the instruction interpreter."""

from .kernel import BACKEND
from .loader import Image, LoadError, load_program
from .machine import (
    AttackSpec, AttackWrite, Inputs, Machine, Outcome, Trap, run, sim_longjmp, sim_setjmp,
    sim_sjmap_expire,
)
from .mpu import MpuConfig, MpuRegion, build_layout_config, check_access

__all__ = ["BACKEND", "AttackSpec", "AttackWrite", "Image", "Inputs", "LoadError", "Machine",
           "MpuConfig", "MpuRegion", "Outcome", "Trap", "build_layout_config", "check_access",
           "load_program", "run", "sim_longjmp", "sim_setjmp", "sim_sjmap_expire"]
