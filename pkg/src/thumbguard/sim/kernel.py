"""Select the compiled kernel when available.

Set ``THUMBGUARD_PURE=1`` to force the pure-Python fallback.
"""

import os

from . import _kernel_py

BACKEND = "python"
_impl = _kernel_py

if os.environ.get("THUMBGUARD_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernel as _compiled  # type: ignore[attr-defined]
    except ImportError:
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"

READ, WRITE, EXEC = _kernel_py.READ, _kernel_py.WRITE, _kernel_py.EXEC
mpu_check = _impl.mpu_check
cond_passed = _impl.cond_passed
add_with_carry = _impl.add_with_carry
arch_xn = _impl.arch_xn


def backends() -> dict:
    """Every importable backend module by name (for benchmarks and tests)."""
    out = {"python": _kernel_py}
    try:
        from . import _kernel as compiled  # type: ignore[attr-defined]
        out["cython"] = compiled
    except ImportError:
        pass
    return out
