"""Thumb-2 hardening toolchain: passes, scanner and MPU simulator."""

__version__ = "0.1.0"
