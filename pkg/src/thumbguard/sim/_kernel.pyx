# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled hot kernels; same contract as ``_kernel_py``."""

READ, WRITE, EXEC = 0, 1, 2


cdef inline bint _arch_xn(unsigned long long addr):
    return addr >= 0xE0000000 or (0x40000000 <= addr < 0x60000000) or (0xA0000000 <= addr < 0xE0000000)


def arch_xn(unsigned long long addr):
    return _arch_xn(addr)


cdef inline int _lookup(tuple regions, Py_ssize_t n, unsigned long long addr):
    cdef Py_ssize_t k = 0
    cdef unsigned long long base, limit
    while k < n:
        base = regions[k]
        limit = regions[k + 1]
        if base <= addr < limit:
            return <int>k
        k += 4
    return -1


def mpu_check(tuple regions, int background, unsigned long long addr, int size, int kind, int priv):
    cdef Py_ssize_t n = len(regions)
    cdef int k = _lookup(regions, n, addr)
    cdef int perms, shift, readable
    if size > 1 and _lookup(regions, n, addr + size - 1) != k:
        return 0
    if k < 0:
        if not priv or not background:
            return 0
        if kind == 2:
            return 0 if _arch_xn(addr) else 1
        return 1
    perms = regions[k + 2]
    shift = 0 if priv else 2
    if kind == 1:
        return (perms >> (shift + 1)) & 1
    readable = (perms >> shift) & 1
    if kind == 0:
        return readable
    if not readable or regions[k + 3] or addr >= 0xE0000000:
        return 0
    return 1


def cond_passed(int cond, int n, int z, int c, int v):
    if cond == 0:
        return z
    if cond == 1:
        return not z
    if cond == 2:
        return c
    if cond == 3:
        return not c
    if cond == 4:
        return n
    if cond == 5:
        return not n
    if cond == 6:
        return v
    if cond == 7:
        return not v
    if cond == 8:
        return c and not z
    if cond == 9:
        return (not c) or z
    if cond == 10:
        return n == v
    if cond == 11:
        return n != v
    if cond == 12:
        return (not z) and n == v
    if cond == 13:
        return z or n != v
    return 1


def add_with_carry(unsigned long long x, unsigned long long y, int carry):
    cdef unsigned long long unsigned_sum = x + y + carry
    cdef unsigned long long result = unsigned_sum & 0xFFFFFFFF
    cdef long long sx = <long long>x - 0x100000000 if x & 0x80000000 else <long long>x
    cdef long long sy = <long long>y - 0x100000000 if y & 0x80000000 else <long long>y
    cdef long long sr = <long long>result - 0x100000000 if result & 0x80000000 else <long long>result
    return result, 1 if unsigned_sum != result else 0, 1 if sx + sy + carry != sr else 0
