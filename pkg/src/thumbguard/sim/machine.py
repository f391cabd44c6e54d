"""Instruction-level simulator for the Thumb-2 subset.

The machine runs in privileged thread mode.  ``strt``-family stores are
checked against the unprivileged MPU view, everything else against the
privileged view.  A hidden call stack (the oracle) records the return
address every call expects; the final verdict compares each return with it.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Union

from ..asm.isa import (
    CONDITIONS, GPR_INDEX, Flag, Imm, Instruction, Literal, Mem, Shifted, WB, is_gpr,
)
from ..layout import MemoryLayout
from ..passes.store_harden import HardenMode, bic_masks
from . import kernel
from .jmpbuf import JmpBufAbort, JmpBufMap, JmpEntry
from .loader import Image, Slot
from .mpu import MPU_APERTURE, MpuConfig, build_layout_config

MASK = 0xFFFFFFFF
SP, LR, PC = 13, 14, 15
READ, WRITE, EXEC = kernel.READ, kernel.WRITE, kernel.EXEC
DEFAULT_FUEL = 2_000_000
OVERFLOW_GUARD = 0x10000

# store origins
APP, SS, EXEMPT, STREX, RUNTIME = range(5)
_COND_INDEX = {c: k for k, c in enumerate(CONDITIONS)}


class Trap(Exception):
    def __init__(self, cause: str, detail: str = "", addr: Optional[int] = None):
        super().__init__(f"{cause}: {detail}" if detail else cause)
        self.cause = cause
        self.detail = detail
        self.addr = addr


@dataclass
class Frame:
    ret: int
    function: str
    entry_sp: int
    activation: int
    ss_value: Optional[int] = None
    slot_written: bool = False
    ss_written: bool = False


@dataclass(frozen=True)
class Inputs:
    args: tuple = ()
    preload: tuple = ()  # (address, value or "fn:name", size)
    observe: tuple = ()  # (address, size)


@dataclass(frozen=True)
class AttackWrite:
    address: Union[int, str]
    value: Union[int, str]
    size: int = 4


@dataclass(frozen=True)
class AttackSpec:
    """Attacker writes injected at a trigger point.

    ``trigger`` is ``entry`` (activation start), ``body`` (after the
    prologue has saved the return address) or ``steps`` (dynamic count).
    """

    name: str
    writes: tuple = ()
    trigger: str = "body"
    function: Optional[str] = None
    occurrence: int = 1
    steps: int = 0
    channel: str = "unprivileged"  # unprivileged | privileged | masked
    kind: str = ""


@dataclass
class Outcome:
    status: str  # halted | trapped | fuel
    exit_value: Optional[int]
    trap: Optional[str]
    detail: str
    pc: int
    function: Optional[str]
    hijacks: list
    compromised: list
    counters: dict
    registers: tuple
    observed: tuple
    fired: tuple = ()
    heap_digest: str = ""

    @property
    def attack_fired(self) -> bool:
        return bool(self.fired)

    @property
    def verdict(self) -> bool:
        """True when every return and indirect transfer matched the oracle."""
        return not self.hijacks and not self.compromised

    @property
    def security(self) -> str:
        if not self.verdict:
            return "hijack"
        if self.status == "trapped":
            return f"trap:{self.trap}"
        if self.status == "fuel":
            return "trap:fuel-exhausted"
        return "ok"

    def lines(self) -> list:
        c = self.counters
        return [f"SECURITY {self.security}",
                f"COUNT exec={c['exec']} privstore_app={c['privstore_app']}"]


COUNTER_NAMES = (
    "exec", "privstore_app", "priv_stores", "unpriv_stores", "exempt_stores", "strex_stores",
    "ss_stores", "ss_loads", "ss_out_of_band", "shadow_writes_nonss", "i3_checks",
    "i3_violations", "mirror_checks", "mirror_violations", "device_writes", "attack_writes",
    "attack_shadow_writes", "calls", "returns", "svc", "sjmap_high_water",
)


def _stored_regs(i: Instruction) -> tuple:
    m = i.mnemonic
    if m == "push":
        return i.operands[0].regs
    if m in ("stm", "stmdb"):
        return i.operands[1].regs
    if m in ("str", "strt"):
        return (i.operands[0],)
    if m == "strd":
        return tuple(i.operands[:2])
    return ()


class Machine:
    def __init__(self, image: Image, mode=HardenMode.SILHOUETTE, mpu: Optional[MpuConfig] = None,
                 inputs: Inputs = Inputs(), attack: Optional[AttackSpec] = None,
                 fuel: int = DEFAULT_FUEL, entry: str = "main", protected_jmpbuf: Optional[bool] = None,
                 attacks: tuple = (), trace=None):
        self.image = image
        self.layout: MemoryLayout = image.layout
        self.mode = HardenMode.parse(mode)
        self.mpu = mpu or build_layout_config(self.layout, self.mode)
        self.table = self.mpu.table
        self.background = 1 if self.mpu.background else 0
        self.masks = bic_masks(self.layout)
        self.inputs = inputs
        self.attacks = list(attacks) + ([attack] if attack is not None else [])
        self.trace = trace
        self.fuel = fuel
        self.entry = entry
        self.r = [0] * 16
        self.s = [0] * 32
        self.n = self.z = self.c = self.v = 0
        self.it: list = []
        self.monitor = False
        self.sysregs = {"primask": 0, "basepri": 0, "faultmask": 0, "control": 0, "psp": 0}
        self.counters = dict.fromkeys(COUNTER_NAMES, 0)
        self.hijacks: list = []
        self.compromised: list = []
        self.stack: List[Frame] = []
        self.activations = 0
        self.entries_by_function: Dict[str, int] = {}
        self.pending = [[a, None] for a in self.attacks]  # [spec, target frame]
        self.fired: list = []
        self.device_log: list = []
        program = image.program
        if protected_jmpbuf is None:
            protected_jmpbuf = any(Flag.SHADOW_STACK_STORE in i.flags for _, _, i in program.iter_instructions())
        self.protected_jmpbuf = protected_jmpbuf
        self.jmpmap = JmpBufMap(self.layout.jmpbuf_capacity)
        self.jmp_oracle: Dict[int, tuple] = {}
        self.allowed_indirect = {image.symbols[f.name] for f in program.functions if f.address_taken}
        self.allowed_indirect |= set(image.stubs)
        self.fn_info = {}
        for f in program.functions:
            insns = f.instructions
            self.fn_info[f.name] = (
                any("lr" in _stored_regs(i) for i in insns),
                any(Flag.SHADOW_STACK_STORE in i.flags for i in insns),
            )
        self._bands = []
        for name, base, size in (("stack", self.layout.stack_base, self.layout.stack_size),
                                 ("shadow", self.layout.shadow_base, self.layout.shadow_size),
                                 ("heap", self.layout.heap_base, self.layout.heap_size),
                                 ("code", self.layout.code_base, self.layout.code_size),
                                 ("system", self.layout.system_base, self.layout.system_size)):
            buf = image.code if name == "code" else bytearray(size)
            self._bands.append((base, base + size, buf, name))
        compile_image(image)

    # -- memory -------------------------------------------------------------

    def _locate(self, addr: int, size: int):
        for base, end, buf, name in self._bands:
            if base <= addr and addr + size <= end:
                return buf, addr - base, name
        return None, 0, None

    def raw_read(self, addr: int, size: int) -> int:
        buf, off, _ = self._locate(addr, size)
        if buf is None:
            raise Trap("bus-fault", f"read {addr:#010x}", addr)
        return int.from_bytes(buf[off:off + size], "little")

    def raw_write(self, addr: int, size: int, value: int) -> str:
        buf, off, name = self._locate(addr, size)
        if buf is None or name == "code":
            raise Trap("bus-fault", f"write {addr:#010x}", addr)
        buf[off:off + size] = (value & ((1 << (8 * size)) - 1)).to_bytes(size, "little")
        return name

    def _fault(self, addr: int, kind: int, priv: bool, cause: str = "mpu-fault"):
        what = ("read", "write", "execute")[kind]
        if kind == WRITE and (self.r[SP] < self.layout.stack_base
                              or self.layout.stack_base - OVERFLOW_GUARD <= addr < self.layout.stack_base):
            cause = "stack-overflow-fault"
        raise Trap(cause, f"{what} {addr:#010x} ({'privileged' if priv else 'unprivileged'})", addr)

    def load(self, addr: int, size: int) -> int:
        if not kernel.mpu_check(self.table, self.background, addr, size, READ, 1):
            self._fault(addr, READ, True)
        buf, off, _ = self._locate(addr, size)
        if buf is None:
            self._fault(addr, READ, True, "bus-fault")
        return int.from_bytes(buf[off:off + size], "little")

    def store(self, addr: int, size: int, value: int, priv: int, tag: int) -> None:
        if not kernel.mpu_check(self.table, self.background, addr, size, WRITE, priv):
            self._fault(addr, WRITE, bool(priv))
        buf, off, name = self._locate(addr, size)
        if buf is None or name == "code":
            self._fault(addr, WRITE, bool(priv), "bus-fault")
        buf[off:off + size] = (value & ((1 << (8 * size)) - 1)).to_bytes(size, "little")
        c = self.counters
        c["priv_stores" if priv else "unpriv_stores"] += 1
        top = self.stack[-1] if self.stack else None
        if tag == SS:
            c["ss_stores"] += 1
            if name != "shadow":
                c["ss_out_of_band"] += 1
            else:
                c["mirror_checks"] += 1
                if self.raw_read(addr - self.layout.shadow_stack_offset, 4) != value & MASK:
                    c["mirror_violations"] += 1
            if top is not None:
                top.ss_value = value & MASK
                top.ss_written = True
        else:
            if name == "shadow":
                c["shadow_writes_nonss"] += 1
            if tag == APP and priv:
                c["privstore_app"] += 1
            elif tag == EXEMPT:
                c["exempt_stores"] += 1
            elif tag == STREX:
                c["strex_stores"] += 1
        if top is not None and addr == top.entry_sp - 4:
            top.slot_written = True
        if name == "system":
            c["device_writes"] += 1
            self.device_log.append((addr, value & MASK, tag))
            if MPU_APERTURE[0] <= addr < MPU_APERTURE[1] and tag != EXEMPT:
                self.compromised.append(("mpu-reconfigured", addr))

    # -- control flow -------------------------------------------------------

    def _new_frame(self, function: str, ret: int) -> Frame:
        self.activations += 1
        frame = Frame(ret, function, self.r[SP], self.activations)
        self.stack.append(frame)
        count = self.entries_by_function.get(function, 0) + 1
        self.entries_by_function[function] = count
        for p in self.pending:
            a = p[0]
            if a.trigger in ("entry", "body") and a.function == function and a.occurrence == count:
                p[1] = frame
        return frame

    def call(self, target: int, ret: int, indirect: bool) -> int:
        if not target & 1:
            raise Trap("usage-fault", f"branch to {target:#010x} without Thumb bit", target)
        dest = target & ~1
        if indirect:
            self._forward_check(dest)
        self.counters["calls"] += 1
        self.r[LR] = ret | 1
        name = self.image.function_entries.get(dest) or self.image.stubs.get(dest) \
            or self.image.function_at(dest) or f"{dest:#x}"
        self._new_frame(name, ret)
        return dest

    def _forward_check(self, dest: int) -> None:
        if dest not in self.allowed_indirect:
            self.hijacks.append(("forward-edge", dest))

    def tail(self, dest: int, indirect: bool) -> int:
        """Branch into another function's entry: it inherits the caller's return."""
        if indirect:
            self._forward_check(dest)
        name = self.image.function_entries.get(dest) or self.image.stubs.get(dest)
        if name is not None and self.stack:
            old = self.stack.pop()
            self._new_frame(name, old.ret)
        return dest

    def ret(self, target: int) -> int:
        dest = target & ~1
        self.counters["returns"] += 1
        stack = self.stack
        if stack and stack[-1].ret == dest:
            stack.pop()
        else:
            expected = stack[-1].ret if stack else None
            self.hijacks.append(("return", dest, expected))
            for k in range(len(stack) - 1, -1, -1):
                if stack[k].ret == dest:
                    del stack[k:]
                    break
        if not target & 1:
            raise Trap("usage-fault", f"return to {target:#010x} without Thumb bit", target)
        return dest

    def branch_indirect(self, target: int) -> int:
        if not target & 1:
            raise Trap("usage-fault", f"branch to {target:#010x} without Thumb bit", target)
        return self.tail(target & ~1, True)

    def cond(self, cond: int) -> int:
        return kernel.cond_passed(cond, self.n, self.z, self.c, self.v)

    # -- runtime ------------------------------------------------------------

    def _stub(self, name: str) -> Optional[int]:
        r = self.r
        if name == "__exit":
            return None
        if name == "__cfi_abort":
            raise Trap("cfi-violation", "indirect branch target lacks the CFI label")
        if name == "setjmp":
            r[0] = sim_setjmp(self, r[0])
            return self.ret(r[LR])
        if name == "longjmp":
            return sim_longjmp(self, r[0], r[1])
        if name == "__sjmap_expire":
            sim_sjmap_expire(self)
            return self.ret(r[LR])
        raise Trap("undefined", f"unknown runtime routine {name}")

    # -- attack -------------------------------------------------------------

    _OPERAND = re.compile(r"^(?P<kind>[a-z]+)(?::(?P<name>[^+\-]+?))?(?::(?P<label>[^+\-]+))?"
                          r"(?P<off>[+\-](?:0x[0-9a-fA-F]+|\d+))?$")

    def resolve_operand(self, spec, frame: Optional[Frame]) -> int:
        if isinstance(spec, int):
            return spec & MASK
        m = self._OPERAND.match(spec.strip())
        if not m:
            raise ValueError(f"bad attack operand '{spec}'")
        kind, name, label = m.group("kind"), m.group("name"), m.group("label")
        off = int(m.group("off"), 0) if m.group("off") else 0
        lay = self.layout
        if kind == "frame":
            if frame is None:
                raise ValueError("frame-relative operand without an activation")
            base = {"ret": frame.entry_sp - 4, "shadow": frame.entry_sp - 4 + lay.shadow_stack_offset,
                    "sp": frame.entry_sp}[name]
            return (base + off) & MASK
        if kind == "fn":
            return ((self.image.symbols[name] + off) | 1) & MASK
        if kind == "label":
            return (self.image.label_address(name, label) + off) | 1
        if kind == "sym":
            return (self.image.symbols[name] + off) & MASK
        if kind == "heap":
            return (lay.heap_base + off) & MASK
        if kind == "stack":
            return (lay.stack_base + off) & MASK
        if kind == "shadow":
            return (lay.shadow_base + off) & MASK
        raise ValueError(f"bad attack operand '{spec}'")

    def _fire(self, a: AttackSpec, frame: Optional[Frame]) -> None:
        self.fired.append(a.name)
        for w in a.writes:
            addr = self.resolve_operand(w.address, frame)
            value = self.resolve_operand(w.value, frame)
            priv = 0 if a.channel == "unprivileged" else 1
            if a.channel == "masked":
                addr = self.masks.apply(addr)
            if not kernel.mpu_check(self.table, self.background, addr, w.size, WRITE, priv):
                raise Trap("mpu-fault", f"attack write {addr:#010x}", addr)
            name = self.raw_write(addr, w.size, value)
            self.counters["attack_writes"] += 1
            if name == "shadow":
                self.counters["attack_shadow_writes"] += 1
            if name == "system" and MPU_APERTURE[0] <= addr < MPU_APERTURE[1]:
                self.compromised.append(("mpu-reconfigured", addr))

    def _due(self, a: AttackSpec, frame: Optional[Frame], slot: Slot) -> bool:
        if a.trigger == "steps":
            return self.counters["exec"] >= a.steps
        if frame is None:
            return False
        if a.trigger == "entry":
            return True
        if not self.stack or self.stack[-1] is not frame:
            return False
        stores_lr, has_ss = self.fn_info.get(frame.function, (False, False))
        if not stores_lr or (frame.slot_written and (frame.ss_written or not has_ss)):
            return True
        # fire before the activation can leave, even if the prologue is unusual
        return slot.ins.mnemonic in ("bl", "blx", "bx", "pop", "ldm") or slot.ins.operands[:1] == ("pc",)

    def _maybe_fire(self, slot: Slot) -> None:
        for p in list(self.pending):
            a, frame = p
            if self._due(a, frame, slot):
                self.pending.remove(p)
                self._fire(a, frame if frame is not None else (self.stack[-1] if self.stack else None))

    # -- main loop ----------------------------------------------------------

    def setup(self) -> None:
        r = self.r
        r[SP] = self.layout.stack_top
        exit_addr = self.image.symbols["__exit"]
        r[LR] = exit_addr | 1
        for k, v in enumerate(self.inputs.args[:4]):
            r[k] = self.resolve_operand(v, None)
        for addr, value, size in self.inputs.preload:
            self.raw_write(self.resolve_operand(addr, None), size, self.resolve_operand(value, None))
        if self.entry not in self.image.function_ranges:
            raise Trap("undefined", f"no entry function '{self.entry}'")
        self.pc = self.image.symbols[self.entry]
        self._new_frame(self.entry, exit_addr)

    def run(self) -> Outcome:
        self.setup()
        slots = self.image.slots
        stubs = self.image.stubs
        r = self.r
        counters = self.counters
        fuel = self.fuel
        trace = self.trace
        status, trap, detail = "halted", None, ""
        cond_passed = kernel.cond_passed
        try:
            while True:
                pc = self.pc
                slot = slots.get(pc)
                if counters["exec"] >= fuel:
                    status = "fuel"
                    break
                if slot is None:
                    name = stubs.get(pc)
                    if name is None:
                        if not kernel.mpu_check(self.table, self.background, pc, 2, EXEC, 1):
                            raise Trap("mpu-fault", f"execute {pc:#010x}", pc)
                        raise Trap("undefined", f"no instruction at {pc:#010x}", pc)
                    counters["exec"] += 1
                    nxt = self._stub(name)
                    if nxt is None:
                        break
                    self.pc = nxt
                    continue
                counters["exec"] += 1
                if self.it:
                    cond = self.it.pop(0)
                    if not cond_passed(cond, self.n, self.z, self.c, self.v):
                        self.pc = pc + slot.size
                        continue
                if self.pending:
                    self._maybe_fire(slot)
                if trace is not None:
                    trace(f"{pc:08x} {slot.ins}")
                r[PC] = pc + 4
                nxt = slot.op(self)
                self.pc = pc + slot.size if nxt is None else nxt
        except Trap as t:
            status, trap, detail = "trapped", t.cause, t.detail
        counters["sjmap_high_water"] = max(counters["sjmap_high_water"], self.jmpmap.high_water)
        observed = []
        for addr, size in self.inputs.observe:
            a = self.resolve_operand(addr, None)
            buf, off, _ = self._locate(a, size)
            observed.append(bytes(buf[off:off + size]) if buf is not None else b"")
        return Outcome(status, r[0] if status == "halted" else None, trap, detail, self.pc,
                       self.image.function_at(self.pc), list(self.hijacks), list(self.compromised),
                       dict(counters), tuple(r[:15]), tuple(observed), tuple(self.fired),
                       self._heap_digest())

    def _heap_digest(self) -> str:
        for base, end, buf, name in self._bands:
            if name == "heap":
                return hashlib.sha256(buf).hexdigest()
        return ""


# -- instruction compiler ------------------------------------------------------

def sim_setjmp(m: Machine, buf: int) -> int:
    """Save the caller's context under key ``buf``; returns 0 or traps with an abort."""
    r = m.r
    if m.protected_jmpbuf:
        entry = JmpEntry(buf, r[SP], r[LR], tuple(r[4:12]), tuple(m.s[16:32]), len(m.stack) - 1)
        try:
            m.jmpmap.setjmp(entry)
        except JmpBufAbort as exc:
            raise Trap("abort", str(exc)) from None
        m.counters["sjmap_high_water"] = max(m.counters["sjmap_high_water"], m.jmpmap.high_water)
    else:
        for k, v in enumerate(list(r[4:12]) + [r[SP], r[LR]]):
            m.store(buf + 4 * k, 4, v, 1, RUNTIME)
    m.jmp_oracle[buf] = (r[SP], r[LR], len(m.stack) - 1)
    return 0


def sim_longjmp(m: Machine, buf: int, val: int) -> int:
    """Restore the context saved under ``buf``; returns the resume address."""
    r = m.r
    if m.protected_jmpbuf:
        try:
            e = m.jmpmap.longjmp(buf)
        except JmpBufAbort as exc:
            raise Trap("abort", str(exc)) from None
        regs, sp, lr, depth = e.regs, e.sp, e.lr, e.depth
        m.s[16:32] = list(e.fp)
    else:
        words = [m.load(buf + 4 * k, 4) for k in range(10)]
        regs, sp, lr = tuple(words[:8]), words[8], words[9]
        depth = m.jmp_oracle.get(buf, (0, 0, len(m.stack)))[2]
    truth = m.jmp_oracle.get(buf)
    if truth is None or truth[1] != lr or truth[0] != sp:
        m.hijacks.append(("longjmp", lr, truth[1] if truth else None))
    r[4:12] = list(regs)
    r[SP] = sp
    r[LR] = lr
    r[0] = val if val else 1
    del m.stack[depth:]
    if not lr & 1:
        raise Trap("usage-fault", "longjmp target without Thumb bit", lr)
    return lr & ~1


def sim_sjmap_expire(m: Machine) -> int:
    """Epilogue hook of setjmp callers: drop entries at or below the current sp."""
    return m.jmpmap.expire(m.r[SP])


def _reg(name: str) -> int:
    return GPR_INDEX[name]


def _shift(value: int, op: str, amount: int, carry: int):
    """(result, carry) of a 32-bit shift."""
    if amount == 0:
        return value, carry
    if op == "lsl":
        if amount >= 33:
            return 0, 0
        return (value << amount) & MASK, (value >> (32 - amount)) & 1
    if op == "lsr":
        if amount >= 33:
            return 0, 0
        return value >> amount, (value >> (amount - 1)) & 1
    # asr
    signed = value - (1 << 32) if value & 0x80000000 else value
    if amount >= 32:
        out = MASK if signed < 0 else 0
        return out, out & 1
    return (signed >> amount) & MASK, (signed >> (amount - 1)) & 1


def _operand(op):
    """f(m) -> (value, shifter carry)."""
    if isinstance(op, Imm):
        v = op.value & MASK
        return lambda m: (v, m.c)
    if isinstance(op, Shifted):
        k, sh, amt = _reg(op.reg), op.op, op.amount
        return lambda m: _shift(m.r[k], sh, amt, m.c)
    k = _reg(op)
    return lambda m: (m.r[k], m.c)


def _ea(mem: Mem):
    """Effective address of a memory operand (post-index uses the base)."""
    b, off = _reg(mem.base), mem.offset
    if mem.index is not None:
        x, sh = _reg(mem.index), mem.shift
        if mem.base == "pc":
            return lambda m: ((m.r[15] & ~3) + (m.r[x] << sh)) & MASK
        return lambda m: (m.r[b] + (m.r[x] << sh)) & MASK
    if mem.base == "pc":
        return lambda m: ((m.r[15] & ~3) + off) & MASK
    if mem.mode == "post":
        return lambda m: m.r[b]
    return lambda m: (m.r[b] + off) & MASK


def _writeback(mem: Mem):
    b, off = _reg(mem.base), mem.offset
    if mem.mode == "pre":
        def wb(m, addr):
            m.r[b] = addr
        return wb
    if mem.mode == "post":
        def wb(m, addr):
            m.r[b] = (m.r[b] + off) & MASK
        return wb
    return None


def _set_nz(m, value: int) -> None:
    m.n = value >> 31
    m.z = 1 if value == 0 else 0


def _target(image: Image, slot: Slot, name: str) -> int:
    key = (slot.function, name)
    if key in image.labels:
        return image.labels[key]
    return image.symbols[name]


def _fp_regs(names) -> list:
    """Single-precision indices covered by a list of s/d registers."""
    out = []
    for r in names:
        n = int(r[1:])
        out.extend([2 * n, 2 * n + 1] if r[0] == "d" else [n])
    return out


def compile_image(image: Image) -> None:
    for slot in image.slots.values():
        if slot.op is None:
            slot.op = compile_slot(slot, image)


def _store_tag(slot: Slot) -> int:
    if slot.exempt:
        return EXEMPT
    if Flag.SHADOW_STACK_STORE in slot.ins.flags:
        return SS
    if slot.ins.mnemonic == "strex":
        return STREX
    return APP


def compile_slot(slot: Slot, image: Image):
    i = slot.ins
    m_ = i.mnemonic
    ops = i.operands
    addr, size = slot.addr, slot.size
    handler = _COMPILERS.get(m_)
    if handler is None:
        raise ValueError(f"no simulator semantics for '{m_}'")
    return handler(i, ops, slot, image, addr, size)


def _c_mov(i, ops, slot, image, addr, size):
    d = _reg(ops[0])
    src = _operand(ops[1])
    flags = i.setflags
    to_pc = ops[0] == "pc"

    def op(m):
        v, c = src(m)
        if to_pc:
            return m.branch_indirect(v | 1)
        m.r[d] = v
        if flags:
            _set_nz(m, v)
            m.c = c
    return op


def _c_movw(i, ops, slot, image, addr, size):
    d, v = _reg(ops[0]), ops[1].value & 0xFFFF

    def op(m):
        m.r[d] = v
    return op


def _c_movt(i, ops, slot, image, addr, size):
    d, v = _reg(ops[0]), (ops[1].value & 0xFFFF) << 16

    def op(m):
        m.r[d] = (m.r[d] & 0xFFFF) | v
    return op


def _c_addsub(i, ops, slot, image, addr, size):
    d = _reg(ops[0])
    if len(ops) == 3:
        n, src = _reg(ops[1]), _operand(ops[2])
    else:
        n, src = d, _operand(ops[1])
    sub = i.mnemonic in ("sub", "subw")
    flags = i.setflags
    to_pc = ops[0] == "pc"

    def op(m):
        x = m.r[n]
        y = src(m)[0]
        if flags:
            if sub:
                res, c, v = kernel.add_with_carry(x, y ^ MASK, 1)
            else:
                res, c, v = kernel.add_with_carry(x, y, 0)
            m.c, m.v = c, v
            _set_nz(m, res)
        else:
            res = (x - y if sub else x + y) & MASK
        if to_pc:
            return m.branch_indirect(res | 1)
        m.r[d] = res
    return op


def _c_logic(i, ops, slot, image, addr, size):
    d = _reg(ops[0])
    if len(ops) == 3:
        n, src = _reg(ops[1]), _operand(ops[2])
    else:
        n, src = d, _operand(ops[1])
    fn = {"and": lambda a, b: a & b, "orr": lambda a, b: a | b,
          "eor": lambda a, b: a ^ b, "bic": lambda a, b: a & ~b & MASK}[i.mnemonic]
    flags = i.setflags

    def op(m):
        y, c = src(m)
        res = fn(m.r[n], y)
        m.r[d] = res
        if flags:
            _set_nz(m, res)
            m.c = c
    return op


def _c_shift(i, ops, slot, image, addr, size):
    d = _reg(ops[0])
    kind = i.mnemonic
    if len(ops) == 3:
        src = _reg(ops[1])
        amt = ops[2]
    else:
        src, amt = d, ops[1]
    flags = i.setflags
    if isinstance(amt, Imm):
        k = amt.value

        def amount(m):
            return k
    else:
        a = _reg(amt)

        def amount(m):
            return m.r[a] & 0xFF

    def op(m):
        res, c = _shift(m.r[src], kind, amount(m), m.c)
        m.r[d] = res
        if flags:
            _set_nz(m, res)
            m.c = c
    return op


def _c_mul(i, ops, slot, image, addr, size):
    d = _reg(ops[0])
    if len(ops) == 3:
        a, b = _reg(ops[1]), _reg(ops[2])
    else:
        a, b = d, _reg(ops[1])
    flags = i.setflags

    def op(m):
        res = (m.r[a] * m.r[b]) & MASK
        m.r[d] = res
        if flags:
            _set_nz(m, res)
    return op


def _c_addw(i, ops, slot, image, addr, size):
    return _c_addsub(i, ops, slot, image, addr, size)


def _c_cmp(i, ops, slot, image, addr, size):
    n, src = _reg(ops[0]), _operand(ops[1])

    def op(m):
        res, c, v = kernel.add_with_carry(m.r[n], src(m)[0] ^ MASK, 1)
        _set_nz(m, res)
        m.c, m.v = c, v
    return op


def _c_tst(i, ops, slot, image, addr, size):
    n, src = _reg(ops[0]), _operand(ops[1])

    def op(m):
        y, c = src(m)
        _set_nz(m, m.r[n] & y)
        m.c = c
    return op


def _c_cbz(i, ops, slot, image, addr, size):
    n = _reg(ops[0])
    target = _target(image, slot, ops[1].name)
    nonzero = i.mnemonic == "cbnz"

    def op(m):
        if (m.r[n] != 0) == nonzero:
            return target
    return op


def _c_b(i, ops, slot, image, addr, size):
    name = ops[0].name
    target = _target(image, slot, name)
    cond = _COND_INDEX.get(i.cond, 14)
    cross = (slot.function, name) not in image.labels
    always = i.cond == "al"

    def op(m):
        if always or m.cond(cond):
            if cross:
                return m.tail(target, False)
            return target
    return op


def _c_bl(i, ops, slot, image, addr, size):
    target = image.resolve(ops[0].name)
    ret = addr + size

    def op(m):
        return m.call(target, ret, False)
    return op


def _c_blx(i, ops, slot, image, addr, size):
    k = _reg(ops[0])
    ret = addr + size

    def op(m):
        return m.call(m.r[k], ret, True)
    return op


def _c_bx(i, ops, slot, image, addr, size):
    k = _reg(ops[0])
    if ops[0] == "lr":
        def op(m):
            return m.ret(m.r[k])
        return op

    def op(m):
        return m.branch_indirect(m.r[k])
    return op


def _c_tb(i, ops, slot, image, addr, size):
    mem = ops[0]
    x = _reg(mem.index)
    half = i.mnemonic == "tbh"
    base = addr + 4

    def op(m):
        if half:
            off = m.load(base + 2 * m.r[x], 2)
        else:
            off = m.load(base + m.r[x], 1)
        return base + 2 * off
    return op


def _c_it(i, ops, slot, image, addr, size):
    conds = [_COND_INDEX[c] for c in ops[0].conditions()]

    def op(m):
        m.it = list(conds)
    return op


def _c_nop(i, ops, slot, image, addr, size):
    def op(m):
        return None
    return op


def _c_svc(i, ops, slot, image, addr, size):
    def op(m):
        m.counters["svc"] += 1
    return op


def _c_str(i, ops, slot, image, addr, size):
    width = {"str": 4, "strb": 1, "strh": 2, "strt": 4, "strbt": 1, "strht": 2}[i.mnemonic]
    priv = 0 if i.mnemonic.endswith("t") else 1
    t = _reg(ops[0])
    ea, wb = _ea(ops[1]), _writeback(ops[1])
    tag = _store_tag(slot)

    def op(m):
        a = ea(m)
        m.store(a, width, m.r[t], priv, tag)
        if wb is not None:
            wb(m, a)
    return op


def _c_strd(i, ops, slot, image, addr, size):
    t1, t2 = _reg(ops[0]), _reg(ops[1])
    ea, wb = _ea(ops[2]), _writeback(ops[2])
    tag = _store_tag(slot)

    def op(m):
        a = ea(m)
        m.store(a, 4, m.r[t1], 1, tag)
        m.store((a + 4) & MASK, 4, m.r[t2], 1, tag)
        if wb is not None:
            wb(m, a)
    return op


def _c_strex(i, ops, slot, image, addr, size):
    d, t = _reg(ops[0]), _reg(ops[1])
    ea = _ea(ops[2])
    tag = _store_tag(slot)

    def op(m):
        a = ea(m)
        if m.monitor:
            m.store(a, 4, m.r[t], 1, tag)
            m.r[d] = 0
        else:
            m.r[d] = 1
        m.monitor = False
    return op


def _c_ldrex(i, ops, slot, image, addr, size):
    t = _reg(ops[0])
    ea = _ea(ops[1])

    def op(m):
        m.r[t] = m.load(ea(m), 4)
        m.monitor = True
    return op


def _c_push(i, ops, slot, image, addr, size):
    regs = [_reg(r) for r in ops[0].regs]
    n = len(regs)
    tag = _store_tag(slot)

    def op(m):
        base = (m.r[SP] - 4 * n) & MASK
        for k, reg in enumerate(regs):
            m.store(base + 4 * k, 4, m.r[reg], 1, tag)
        m.r[SP] = base
    return op


def _c_stm(i, ops, slot, image, addr, size):
    base = ops[0].reg if isinstance(ops[0], WB) else ops[0]
    wb = isinstance(ops[0], WB)
    b = _reg(base)
    regs = [_reg(r) for r in ops[1].regs]
    n = len(regs)
    before = i.mnemonic == "stmdb"
    tag = _store_tag(slot)

    def op(m):
        start = (m.r[b] - 4 * n) & MASK if before else m.r[b]
        for k, reg in enumerate(regs):
            m.store(start + 4 * k, 4, m.r[reg], 1, tag)
        if wb:
            m.r[b] = start if before else (start + 4 * n) & MASK
    return op


def _c_ldr(i, ops, slot, image, addr, size):
    width = {"ldr": 4, "ldrb": 1, "ldrh": 2}[i.mnemonic]
    t = _reg(ops[0])
    src = ops[1]
    if isinstance(src, Literal):
        value = src.value if isinstance(src.value, int) else image.resolve(src.value, slot.function)
        value &= MASK
        if ops[0] == "pc":
            def op(m):
                return m.branch_indirect(value)
            return op

        def op(m):
            m.r[t] = value
        return op
    ea, wb = _ea(src), _writeback(src)
    is_ret = ops[0] == "pc" and src.base == "sp" and src.mode == "post"
    ss_load = Flag.SHADOW_STACK_LOAD in i.flags and ops[0] == "lr"

    def op(m):
        a = ea(m)
        v = m.load(a, width)
        if wb is not None:
            wb(m, a)
        if t == PC:
            return m.ret(v) if is_ret else m.branch_indirect(v)
        m.r[t] = v
        if ss_load:
            c = m.counters
            c["ss_loads"] += 1
            top = m.stack[-1] if m.stack else None
            if top is not None and top.ss_value is not None:
                c["i3_checks"] += 1
                if top.ss_value != v:
                    c["i3_violations"] += 1
    return op


def _c_ldrd(i, ops, slot, image, addr, size):
    t1, t2 = _reg(ops[0]), _reg(ops[1])
    ea, wb = _ea(ops[2]), _writeback(ops[2])

    def op(m):
        a = ea(m)
        lo, hi = m.load(a, 4), m.load((a + 4) & MASK, 4)
        if wb is not None:
            wb(m, a)
        m.r[t1], m.r[t2] = lo, hi
    return op


def _c_ldm(i, ops, slot, image, addr, size):
    if i.mnemonic == "pop":
        b, wb, names = SP, True, ops[0].regs
    else:
        base = ops[0].reg if isinstance(ops[0], WB) else ops[0]
        b, wb, names = _reg(base), isinstance(ops[0], WB), ops[1].regs
    regs = [_reg(r) for r in names]
    n = len(regs)
    has_pc = PC in regs
    is_ret = has_pc and b == SP
    if b in regs:
        wb = False

    def op(m):
        start = m.r[b]
        values = [m.load((start + 4 * k) & MASK, 4) for k in range(n)]
        if wb:
            m.r[b] = (start + 4 * n) & MASK
        for reg, v in zip(regs, values):
            if reg != PC:
                m.r[reg] = v
        if has_pc:
            v = values[-1]
            return m.ret(v) if is_ret else m.branch_indirect(v)
    return op


def _c_vmov(i, ops, slot, image, addr, size):
    sig = "".join("r" if is_gpr(o) else o[0] for o in ops)
    if sig == "sr":
        s, r = int(ops[0][1:]), _reg(ops[1])

        def op(m):
            m.s[s] = m.r[r]
    elif sig == "rs":
        r, s = _reg(ops[0]), int(ops[1][1:])

        def op(m):
            m.r[r] = m.s[s]
    elif sig == "drr":
        d, lo, hi = int(ops[0][1:]), _reg(ops[1]), _reg(ops[2])

        def op(m):
            m.s[2 * d], m.s[2 * d + 1] = m.r[lo], m.r[hi]
    elif sig == "rrd":
        lo, hi, d = _reg(ops[0]), _reg(ops[1]), int(ops[2][1:])

        def op(m):
            m.r[lo], m.r[hi] = m.s[2 * d], m.s[2 * d + 1]
    else:
        dst, src = _fp_regs([ops[0]]), _fp_regs([ops[1]])

        def op(m):
            for a, b in zip(dst, src):
                m.s[a] = m.s[b]
    return op


def _c_vstr(i, ops, slot, image, addr, size):
    words = _fp_regs([ops[0]])
    ea = _ea(ops[1])
    tag = _store_tag(slot)

    def op(m):
        a = ea(m)
        for k, s in enumerate(words):
            m.store((a + 4 * k) & MASK, 4, m.s[s], 1, tag)
    return op


def _c_vldr(i, ops, slot, image, addr, size):
    words = _fp_regs([ops[0]])
    ea = _ea(ops[1])

    def op(m):
        a = ea(m)
        for k, s in enumerate(words):
            m.s[s] = m.load((a + 4 * k) & MASK, 4)
    return op


def _c_vstm(i, ops, slot, image, addr, size):
    base = ops[0].reg if isinstance(ops[0], WB) else ops[0]
    wb = isinstance(ops[0], WB)
    b = _reg(base)
    words = _fp_regs(ops[1].regs)
    store = i.mnemonic == "vstm"
    tag = _store_tag(slot)

    def op(m):
        start = m.r[b]
        for k, s in enumerate(words):
            a = (start + 4 * k) & MASK
            if store:
                m.store(a, 4, m.s[s], 1, tag)
            else:
                m.s[s] = m.load(a, 4)
        if wb:
            m.r[b] = (start + 4 * len(words)) & MASK
    return op


def _c_msr(i, ops, slot, image, addr, size):
    name, r = ops[0].name, _reg(ops[1])

    def op(m):
        v = m.r[r]
        if name == "msp":
            m.r[SP] = v & ~3
        else:
            m.sysregs[name] = v
    return op


def _c_mrs(i, ops, slot, image, addr, size):
    d, name = _reg(ops[0]), ops[1].name

    def op(m):
        m.r[d] = m.r[SP] if name == "msp" else m.sysregs.get(name, 0)
    return op


def _c_cps(i, ops, slot, image, addr, size):
    disable = i.mnemonic != "cpsie"

    def op(m):
        m.sysregs["primask"] = 1 if disable else 0
    return op


_COMPILERS = {
    "mov": _c_mov, "movw": _c_movw, "movt": _c_movt,
    "add": _c_addsub, "sub": _c_addsub, "addw": _c_addw, "subw": _c_addw,
    "and": _c_logic, "orr": _c_logic, "eor": _c_logic, "bic": _c_logic,
    "lsl": _c_shift, "lsr": _c_shift, "asr": _c_shift, "mul": _c_mul,
    "cmp": _c_cmp, "tst": _c_tst, "cbz": _c_cbz, "cbnz": _c_cbz,
    "b": _c_b, "bl": _c_bl, "blx": _c_blx, "bx": _c_bx, "tbb": _c_tb, "tbh": _c_tb,
    "it": _c_it, "nop": _c_nop, "svc": _c_svc,
    "str": _c_str, "strb": _c_str, "strh": _c_str,
    "strt": _c_str, "strbt": _c_str, "strht": _c_str,
    "strd": _c_strd, "strex": _c_strex, "ldrex": _c_ldrex,
    "push": _c_push, "stm": _c_stm, "stmdb": _c_stm,
    "ldr": _c_ldr, "ldrb": _c_ldr, "ldrh": _c_ldr, "ldrd": _c_ldrd,
    "ldm": _c_ldm, "pop": _c_ldm,
    "vmov": _c_vmov, "vstr": _c_vstr, "vldr": _c_vldr, "vstm": _c_vstm, "vldm": _c_vstm,
    "msr": _c_msr, "mrs": _c_mrs, "cps": _c_cps, "cpsid": _c_cps, "cpsie": _c_cps,
}


def run(image: Image, mode=HardenMode.SILHOUETTE, **kw) -> Outcome:
    return Machine(image, mode, **kw).run()


__all__ = ["AttackSpec", "AttackWrite", "COUNTER_NAMES", "DEFAULT_FUEL", "Frame", "Inputs",
           "Machine", "Outcome", "Trap", "compile_image", "run", "sim_longjmp", "sim_setjmp",
           "sim_sjmap_expire"]
