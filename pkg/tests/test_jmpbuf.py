"""setjmp/longjmp map against an independent table-driven model."""

import copy

import pytest

from thumbguard.layout import DEFAULT_LAYOUT
from thumbguard.sim import Machine, Trap, load_program, sim_longjmp, sim_setjmp, sim_sjmap_expire
from thumbguard.sim.jmpbuf import CAPACITY_MESSAGE, INVALID_MESSAGE, JmpBufMap, JmpEntry

from conftest import parse

SP, LR = 13, 14
TOP = DEFAULT_LAYOUT.stack_top
FRAME = 0x40
BUFS = [DEFAULT_LAYOUT.heap_base + 0x100 * k for k in range(4)]
MAX_OPS = 6


class Oracle:
    """The map rules for setjmp, longjmp and expiry over a fixed table of ``capacity`` rows."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.rows = [None] * capacity     # [key, sp, lr, regs] or None when invalid
        self.size = 0

    def setjmp(self, key, sp, lr, regs):
        for row in self.rows:
            if row is not None and row[0] == key:
                row[1:] = [sp, lr, regs]
                return 0
        if self.size < self.capacity:
            self.rows[self.rows.index(None)] = [key, sp, lr, regs]
            self.size += 1
            return 0
        return CAPACITY_MESSAGE

    def longjmp(self, key, val):
        match = next((row for row in self.rows if row is not None and row[0] == key), None)
        if match is None:
            return INVALID_MESSAGE
        for k, row in enumerate(self.rows):
            if row is not None and row[1] < match[1]:
                self.rows[k] = None
                self.size -= 1
        return (match[1], match[2], match[3], 1 if val == 0 else val)

    def expire(self, sp):
        for k, row in enumerate(self.rows):
            if row is not None and row[1] <= sp:
                self.rows[k] = None
                self.size -= 1

    def live(self):
        return sorted(tuple(r) for r in self.rows if r is not None)


def machine(capacity):
    layout = DEFAULT_LAYOUT.with_values(jmpbuf_capacity=capacity)
    m = Machine(load_program(parse(("main", "bx lr")), layout), protected_jmpbuf=True)
    m.r[SP] = TOP
    return m


def live(m):
    return sorted((e.buf, e.sp, e.lr, e.regs) for e in m.jmpmap.live())


def snapshot(m, o, depth):
    return (list(m.r), copy.deepcopy(m.jmpmap.entries), copy.deepcopy(o), depth)


def restore(m, snap):
    m.r[:] = snap[0]
    m.jmpmap.entries = copy.deepcopy(snap[1])
    m.stack.clear()
    return copy.deepcopy(snap[2]), snap[3]


def step(m, o, depth, op, n):
    """Apply ``op`` to both; returns (new depth, aborted)."""
    regs = tuple(0x1000 * n + k for k in range(8))
    if op[0] == "call":
        m.r[SP] -= FRAME
        m.r[4:12] = list(regs)
        return depth + 1, False
    if op[0] == "ret":
        # the epilogue hook runs with only the saved-lr word left on the stack
        m.r[SP] += FRAME - 4
        sim_sjmap_expire(m)
        o.expire(m.r[SP])
        m.r[SP] += 4
        assert m.r[SP] == TOP - (depth - 1) * FRAME
        return depth - 1, False
    key = BUFS[op[1]]
    if op[0] == "setjmp":
        m.r[LR] = 0x100 + 8 * n + 1
        m.r[4:12] = list(regs)
        want = o.setjmp(key, m.r[SP], m.r[LR], regs)
        try:
            got = sim_setjmp(m, key)
        except Trap as exc:
            assert exc.cause == "abort"
            got = exc.detail
        assert got == want
        return depth, isinstance(want, str)
    val = 0 if n % 2 else n
    want = o.longjmp(key, val)
    try:
        resume = sim_longjmp(m, key, val)
    except Trap as exc:
        assert exc.cause == "abort" and exc.detail == want
        return depth, True
    sp, lr, saved, r0 = want
    assert (m.r[SP], m.r[LR], tuple(m.r[4:12]), m.r[0]) == (sp, lr, saved, r0)
    assert resume == lr & ~1
    assert (TOP - sp) % FRAME == 0
    return (TOP - sp) // FRAME, False


def operations(depth, used):
    ops = [("call",)]
    if depth:
        ops.append(("ret",))
    for b in range(min(used + 1, len(BUFS))):
        ops += [("setjmp", b), ("longjmp", b)]
    return ops


def explore(capacity):
    """Every canonical sequence of at most MAX_OPS operations, stopping at aborts.

    Returns counters of cases, capacity aborts and entries expired by returns.
    """
    m, o = machine(capacity), Oracle(capacity)
    stats = dict(cases=0, capacity=0, invalid=0, expired=0)

    def rec(n, depth, used):
        if n == MAX_OPS:
            return
        snap = snapshot(m, o, depth)
        for op in operations(depth, used):
            o2, d = restore(m, snap)
            before = len(m.jmpmap.live())
            new_depth, aborted = step(m, o2, d, op, n)
            stats["cases"] += 1
            if op[0] == "ret":
                stats["expired"] += before - len(m.jmpmap.live())
            assert live(m) == o2.live()
            assert len(m.jmpmap.live()) <= capacity
            keys = [e.buf for e in m.jmpmap.live()]
            assert len(keys) == len(set(keys))
            if aborted:
                stats["capacity" if op[0] == "setjmp" else "invalid"] += 1
                continue
            save_o = o.__dict__
            o.__dict__ = o2.__dict__
            rec(n + 1, new_depth, max(used, op[1] + 1) if len(op) > 1 else used)
            o.__dict__ = save_o

    rec(0, 0, 0)
    return stats


def test_exhaustive_agreement():
    total = 0
    for capacity in (1, 2, 3, 4):
        stats = explore(capacity)
        assert stats["invalid"] > 0 and stats["expired"] > 0, stats
        if capacity < 4:
            assert stats["capacity"] > 0, stats
        total += stats["cases"]
    assert total > 5000


# hand-checked cases ------------------------------------------------------

def entry(buf, sp, lr=0x101):
    return JmpEntry(buf, sp, lr, (0,) * 8, (0,) * 16)


def test_insert_and_overwrite():
    jm = JmpBufMap(2)
    jm.setjmp(entry(1, 100))
    jm.setjmp(entry(1, 90, 0x201))
    assert [(e.buf, e.sp, e.lr) for e in jm.live()] == [(1, 90, 0x201)]


def test_capacity_abort():
    jm = JmpBufMap(1)
    jm.setjmp(entry(1, 100))
    with pytest.raises(Exception, match=CAPACITY_MESSAGE):
        jm.setjmp(entry(2, 90))


def test_nested_longjmp_expires_inner():
    jm = JmpBufMap(4)
    jm.setjmp(entry(1, 100))
    jm.setjmp(entry(2, 60))
    assert jm.longjmp(1).sp == 100
    with pytest.raises(Exception, match=INVALID_MESSAGE):
        jm.longjmp(2)


def test_return_expires_own_and_callee_entries():
    jm = JmpBufMap(4)
    jm.setjmp(entry(1, 100))
    jm.setjmp(entry(2, 60))
    jm.setjmp(entry(3, 40))
    assert jm.expire(60) == 2
    assert [e.buf for e in jm.live()] == [1]


def test_longjmp_value_zero_becomes_one():
    m = machine(2)
    m.r[LR] = 0x301
    sim_setjmp(m, BUFS[0])
    sim_longjmp(m, BUFS[0], 0)
    assert m.r[0] == 1
    sim_longjmp(m, BUFS[0], 7)
    assert m.r[0] == 7


def test_protected_setjmp_leaves_buffer_untouched():
    m = machine(2)
    m.r[LR] = 0x301
    m.r[4:12] = list(range(1, 9))
    sim_setjmp(m, BUFS[0])
    assert all(m.raw_read(BUFS[0] + 4 * k, 4) == 0 for k in range(10))
