"""Pure-Python hot kernels (reference implementation of ``_kernel.pyx``).

``regions`` is a flat sequence of (base, limit, perms, xn) quadruples in
priority order, highest region number first.  ``perms`` packs four bits:
privileged read/write in bits 0-1, unprivileged read/write in bits 2-3.
"""

READ, WRITE, EXEC = 0, 1, 2

_COND = {
    0: lambda n, z, c, v: z,                     # eq
    1: lambda n, z, c, v: not z,                 # ne
    2: lambda n, z, c, v: c,                     # cs
    3: lambda n, z, c, v: not c,                 # cc
    4: lambda n, z, c, v: n,                     # mi
    5: lambda n, z, c, v: not n,                 # pl
    6: lambda n, z, c, v: v,                     # vs
    7: lambda n, z, c, v: not v,                 # vc
    8: lambda n, z, c, v: c and not z,           # hi
    9: lambda n, z, c, v: not c or z,            # ls
    10: lambda n, z, c, v: n == v,               # ge
    11: lambda n, z, c, v: n != v,               # lt
    12: lambda n, z, c, v: not z and n == v,     # gt
    13: lambda n, z, c, v: z or n != v,          # le
    14: lambda n, z, c, v: True,                 # al
}


def arch_xn(addr):
    """Default memory map: device and system space never executes."""
    return addr >= 0xE0000000 or 0x40000000 <= addr < 0x60000000 or 0xA0000000 <= addr < 0xE0000000


def _lookup(regions, addr):
    for k in range(0, len(regions), 4):
        if regions[k] <= addr < regions[k + 1]:
            return k
    return -1


def mpu_check(regions, background, addr, size, kind, priv):
    """1 if the access is permitted, else 0."""
    last = addr + size - 1
    k = _lookup(regions, addr)
    if size > 1 and _lookup(regions, last) != k:
        return 0
    if k < 0:
        if not priv or not background:
            return 0
        if kind == EXEC:
            return 0 if arch_xn(addr) else 1
        return 1
    perms = regions[k + 2]
    shift = 0 if priv else 2
    if kind == WRITE:
        return (perms >> (shift + 1)) & 1
    readable = (perms >> shift) & 1
    if kind == READ:
        return readable
    if not readable or regions[k + 3] or addr >= 0xE0000000:
        return 0
    return 1


def cond_passed(cond, n, z, c, v):
    return 1 if _COND[cond](n, z, c, v) else 0


def add_with_carry(x, y, carry):
    """(result, carry_out, overflow) of x + y + carry on 32-bit values."""
    unsigned = x + y + carry
    result = unsigned & 0xFFFFFFFF
    sx = x - 0x100000000 if x & 0x80000000 else x
    sy = y - 0x100000000 if y & 0x80000000 else y
    signed = sx + sy + carry
    sr = result - 0x100000000 if result & 0x80000000 else result
    return result, 1 if unsigned != result else 0, 1 if signed != sr else 0
