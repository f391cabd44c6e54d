"""Hardening passes: shadow stack, store hardening and CFI."""

from .common import PassError
from .shadow_stack import transform_program as shadow_stack_program
from .store_harden import HardenMode, bic_masks, harden_program
from .cfi import cfi_program

__all__ = ["PassError", "HardenMode", "bic_masks", "harden_program",
           "shadow_stack_program", "cfi_program"]
