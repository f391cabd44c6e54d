"""Typed model of the supported Thumb-2 subset.

Registers are canonical lowercase strings (``r0``..``r11``, ``ip``, ``sp``,
``lr``, ``pc``, ``s0``..``s31``, ``d0``..``d15``).  Everything here is
immutable so a parsed program can be shared between pipeline runs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Union

GPR_NAMES = tuple([f"r{i}" for i in range(12)] + ["ip", "sp", "lr", "pc"])
GPR_INDEX = {name: i for i, name in enumerate(GPR_NAMES)}
_ALIASES = {
    "r12": "ip", "r13": "sp", "r14": "lr", "r15": "pc",
    "fp": "r11", "sl": "r10", "sb": "r9",
}
SCRATCH_CANDIDATES = tuple(GPR_NAMES[:13])
CALLEE_SAVED = tuple(f"r{i}" for i in range(4, 12))
ARG_REGS = ("r0", "r1", "r2", "r3")
SYSTEM_REGS = frozenset({
    "msp", "psp", "primask", "basepri", "basepri_max", "faultmask",
    "control", "apsr", "ipsr", "epsr", "xpsr",
})

CONDITIONS = ("eq", "ne", "cs", "cc", "mi", "pl", "vs", "vc",
              "hi", "ls", "ge", "lt", "gt", "le")
_COND_ALIASES = {"hs": "cs", "lo": "cc"}
_INVERSE = {
    "eq": "ne", "cs": "cc", "mi": "pl", "vs": "vc", "hi": "ls",
    "ge": "lt", "gt": "le",
}
_INVERSE.update({v: k for k, v in list(_INVERSE.items())})

LABEL_HALFWORD = 0x4600


def canonical_reg(name: str) -> Optional[str]:
    name = name.lower()
    name = _ALIASES.get(name, name)
    if name in GPR_INDEX:
        return name
    if name[:1] == "s" and name[1:].isdigit() and int(name[1:]) < 32:
        return f"s{int(name[1:])}"
    if name[:1] == "d" and name[1:].isdigit() and int(name[1:]) < 16:
        return f"d{int(name[1:])}"
    return None


def is_gpr(reg: str) -> bool:
    return reg in GPR_INDEX


def is_low(reg: str) -> bool:
    return reg in GPR_INDEX and GPR_INDEX[reg] < 8


def canonical_cond(text: str) -> Optional[str]:
    text = _COND_ALIASES.get(text, text)
    if text in CONDITIONS or text == "al":
        return text
    return None


def invert_cond(cond: str) -> str:
    return _INVERSE[cond]


def is_modified_immediate(value: int) -> bool:
    """True if ``value`` is a valid T32 modified immediate constant."""
    value &= 0xFFFFFFFF
    b = value & 0xFF
    if value == b:
        return True
    if value == (b | b << 16) or value == (b << 8 | b << 24) or value == b * 0x01010101:
        return True
    for rot in range(8, 32):
        unrot = ((value << rot) | (value >> (32 - rot))) & 0xFFFFFFFF
        if unrot < 0x100 and unrot & 0x80:
            return True
    return False


# -- operands ---------------------------------------------------------------


@dataclass(frozen=True)
class Imm:
    value: int

    def __str__(self):
        v = self.value
        if -256 < v < 256:
            return f"#{v}"
        return f"#-{-v:#x}" if v < 0 else f"#{v:#x}"


@dataclass(frozen=True)
class Shifted:
    reg: str
    op: str
    amount: int

    def __str__(self):
        return f"{self.reg}, {self.op} #{self.amount}"


@dataclass(frozen=True)
class Mem:
    """Memory operand; ``index`` excludes ``offset`` (either may be set)."""

    base: str
    offset: int = 0
    index: Optional[str] = None
    shift: int = 0
    mode: str = "offset"  # offset | pre | post

    def __str__(self):
        if self.mode == "post":
            return f"[{self.base}], {Imm(self.offset)}"
        if self.index is not None:
            inner = f"{self.base}, {self.index}"
            if self.shift:
                inner += f", lsl #{self.shift}"
        elif self.offset or self.mode == "pre":
            inner = f"{self.base}, {Imm(self.offset)}"
        else:
            inner = self.base
        return f"[{inner}]" + ("!" if self.mode == "pre" else "")

    @property
    def writeback(self) -> bool:
        return self.mode != "offset"


@dataclass(frozen=True)
class RegList:
    regs: tuple

    def __str__(self):
        return "{" + ", ".join(self.regs) + "}"


@dataclass(frozen=True)
class WB:
    """Base register of a load/store-multiple with ``!`` writeback."""

    reg: str

    def __str__(self):
        return f"{self.reg}!"


@dataclass(frozen=True)
class LabelRef:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Literal:
    """``=sym`` / ``=0x1234`` literal-pool operand of ``ldr``."""

    value: Union[int, str]

    def __str__(self):
        return f"={self.value:#x}" if isinstance(self.value, int) else f"={self.value}"


@dataclass(frozen=True)
class Sym:
    """Bare word operand: system register or CPS interrupt flags."""

    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class ITBlockSpec:
    first_cond: str
    pattern: str  # "T", "TE", ... first entry always T

    def __post_init__(self):
        if not 1 <= len(self.pattern) <= 4 or self.pattern[0] != "T":
            raise ValueError(f"bad IT pattern {self.pattern!r}")
        if set(self.pattern) - {"T", "E"}:
            raise ValueError(f"bad IT pattern {self.pattern!r}")

    def conditions(self) -> list:
        inv = invert_cond(self.first_cond)
        return [self.first_cond if p == "T" else inv for p in self.pattern]

    @property
    def mnemonic(self) -> str:
        return "it" + self.pattern[1:].lower()

    def __str__(self):
        return self.first_cond


Operand = Union[str, Imm, Shifted, Mem, RegList, WB, LabelRef, Literal, Sym, ITBlockSpec]


# -- instructions -----------------------------------------------------------


class Flag(enum.Enum):
    SHADOW_STACK_STORE = "ss-store"
    SHADOW_STACK_LOAD = "ss-load"
    SHADOW_STACK = "ss"
    HARDENED = "hardened"
    SFI_GUARD = "sfi-guard"
    CFI_LABEL = "cfi-label"
    CFI_CHECK = "cfi"
    SETJMP_EXPIRE = "sj-expire"

    @property
    def annotation(self) -> str:
        return f"@silhouette:{self.value}"


PASS_INSERTED = frozenset(Flag) - {Flag.SHADOW_STACK_STORE}
_FLAG_ORDER = {f: i for i, f in enumerate(Flag)}


@dataclass(frozen=True)
class Instruction:
    mnemonic: str
    operands: tuple = ()
    cond: str = "al"
    setflags: bool = False
    wide: bool = False
    flags: frozenset = frozenset()
    line: int = field(default=0, compare=False)

    def with_flags(self, *extra: Flag) -> "Instruction":
        return replace(self, flags=self.flags | frozenset(extra))

    def with_cond(self, cond: str) -> "Instruction":
        return replace(self, cond=cond)

    @property
    def conditional(self) -> bool:
        return self.cond != "al"

    @property
    def spelled(self) -> str:
        if self.mnemonic == "it":
            return self.operands[0].mnemonic
        text = self.mnemonic + ("s" if self.setflags else "")
        if self.cond != "al":
            text += self.cond
        if self.wide:
            text += ".w"
        return text

    def __str__(self):
        ops = ", ".join(str(op) for op in self.operands)
        text = f"{self.spelled} {ops}" if ops else self.spelled
        for flag in sorted(self.flags, key=_FLAG_ORDER.get):
            text += f" {flag.annotation}"
        return text


def mov_is_nop_label(i: Instruction) -> bool:
    return (i.mnemonic == "mov" and not i.setflags and i.cond == "al"
            and i.operands == ("r0", "r0"))


# -- classification ---------------------------------------------------------


class Kind(enum.Enum):
    PRIVILEGED_STORE = "PrivilegedStore"
    UNPRIVILEGED_STORE = "UnprivilegedStore"
    STORE_EXCLUSIVE = "StoreExclusive"
    FP_STORE = "FPStore"
    STORE_MULTIPLE = "StoreMultiple"
    LOAD = "Load"
    DIRECT_BRANCH = "DirectBranch"
    INDIRECT_BRANCH = "IndirectBranch"
    INDIRECT_CALL = "IndirectCall"
    RETURN = "Return"
    PRIV_MSR = "PrivilegedSystem(MSR)"
    PRIV_CPS = "PrivilegedSystem(CPS)"
    PRIV_MRS = "PrivilegedSystem(MRS)"
    IT_HEADER = "ITHeader"
    OTHER = "Other"

    @property
    def is_store(self) -> bool:
        return self in _STORE_KINDS

    @property
    def is_privileged_system(self) -> bool:
        return self in (Kind.PRIV_MSR, Kind.PRIV_CPS, Kind.PRIV_MRS)


_STORE_KINDS = frozenset({Kind.PRIVILEGED_STORE, Kind.UNPRIVILEGED_STORE,
                          Kind.STORE_EXCLUSIVE, Kind.FP_STORE, Kind.STORE_MULTIPLE})

SINGLE_STORES = {"str": 4, "strb": 1, "strh": 2}
UNPRIV_STORES = {"strt": 4, "strbt": 1, "strht": 2}
UNPRIV_FOR = {"str": "strt", "strb": "strbt", "strh": "strht"}
LOADS = {"ldr": 4, "ldrb": 1, "ldrh": 2}
DATA_OPS = {"mov", "movw", "movt", "add", "addw", "sub", "subw", "bic", "and",
            "orr", "eor", "lsl", "lsr", "asr", "mul", "cmp", "tst", "cbz", "cbnz"}
FLAG_SETTABLE = {"mov", "add", "sub", "bic", "and", "orr", "eor", "lsl", "lsr", "asr", "mul"}
MNEMONICS = frozenset(
    DATA_OPS
    | {"str", "strb", "strh", "strd", "stm", "stmdb", "push",
       "ldr", "ldrb", "ldrh", "ldrd", "ldm", "pop",
       "strt", "strbt", "strht", "strex", "ldrex",
       "b", "bl", "blx", "bx", "tbb", "tbh", "it", "nop", "svc",
       "msr", "mrs", "cps", "cpsid", "cpsie",
       "vmov", "vstr", "vldr", "vstm", "vldm"}
)
BRANCHES = {"b", "bl", "blx", "bx", "tbb", "tbh", "cbz", "cbnz"}


def _writes_pc(i: Instruction) -> bool:
    m = i.mnemonic
    if m in ("pop", "ldm") and "pc" in i.operands[-1].regs:
        return True
    return m in ("ldr", "mov", "add") and i.operands[0] == "pc"


def classify_instruction(i: Instruction) -> Kind:
    m = i.mnemonic
    if m in SINGLE_STORES or m == "strd":
        return Kind.PRIVILEGED_STORE
    if m in UNPRIV_STORES:
        return Kind.UNPRIVILEGED_STORE
    if m == "strex":
        return Kind.STORE_EXCLUSIVE
    if m in ("vstr", "vstm"):
        return Kind.FP_STORE
    if m in ("stm", "stmdb", "push"):
        return Kind.STORE_MULTIPLE
    if m == "it":
        return Kind.IT_HEADER
    if m == "msr":
        return Kind.PRIV_MSR
    if m == "mrs":
        return Kind.PRIV_MRS
    if m in ("cps", "cpsid", "cpsie"):
        return Kind.PRIV_CPS
    if m == "bx":
        return Kind.RETURN if i.operands[0] == "lr" else Kind.INDIRECT_BRANCH
    if m == "blx":
        return Kind.INDIRECT_CALL
    if m in ("tbb", "tbh"):
        return Kind.INDIRECT_BRANCH
    if m in ("b", "bl", "cbz", "cbnz"):
        return Kind.DIRECT_BRANCH
    if _writes_pc(i):
        if m in ("pop", "ldm") or is_stack_pop_pc(i):
            return Kind.RETURN
        return Kind.INDIRECT_BRANCH
    if m in ("ldr", "ldrb", "ldrh", "ldrd", "ldm", "pop", "ldrex", "vldr", "vldm"):
        return Kind.LOAD
    return Kind.OTHER


def is_stack_pop_pc(i: Instruction) -> bool:
    """``ldr pc, [sp], #4``: the single-register pop of pc."""
    return (i.mnemonic == "ldr" and i.operands[0] == "pc"
            and isinstance(i.operands[1], Mem) and i.operands[1].base == "sp"
            and i.operands[1].mode == "post" and i.operands[1].offset == 4)


def ends_it_block(i: Instruction) -> bool:
    """Instructions that may only appear last inside an IT block."""
    return i.mnemonic in BRANCHES or _writes_pc(i)


def is_terminator(i: Instruction) -> bool:
    """No fall-through when executed unconditionally."""
    if i.mnemonic in ("b", "bx", "tbb", "tbh"):
        return True
    return _writes_pc(i)


# -- sizes ------------------------------------------------------------------


def _lowregs(*regs) -> bool:
    return all(isinstance(r, str) and is_low(r) for r in regs)


def _store_load_size(i: Instruction) -> int:
    width = SINGLE_STORES.get(i.mnemonic) or LOADS.get(i.mnemonic)
    rt, mem = i.operands[0], i.operands[1]
    if isinstance(mem, Literal):
        return 2 if is_low(rt) else 4
    if mem.mode != "offset":
        return 4
    if mem.index is not None:
        return 2 if mem.shift == 0 and _lowregs(rt, mem.base, mem.index) else 4
    off = mem.offset
    if off < 0:
        return 4
    if width == 4 and mem.base == "sp":
        return 2 if is_low(rt) and off % 4 == 0 and off <= 1020 else 4
    if width == 4 and mem.base == "pc":
        return 2 if is_low(rt) and off % 4 == 0 and off <= 1020 else 4
    if not _lowregs(rt, mem.base):
        return 4
    return 2 if off % width == 0 and off <= 31 * width else 4


def instruction_size(i: Instruction) -> int:
    """Bytes of the narrowest legal encoding (computed as outside an IT block)."""
    m, ops = i.mnemonic, i.operands
    if i.wide:
        return 4
    if m in ("it", "nop", "svc", "bx", "blx", "cbz", "cbnz", "cps", "cpsid", "cpsie"):
        return 2
    if m == "b":
        return 2
    if m in ("bl", "tbb", "tbh", "movw", "movt", "addw", "subw", "msr", "mrs",
             "strd", "ldrd", "strex", "ldrex", "stmdb", "vmov", "vstr", "vldr",
             "vstm", "vldm") or m in UNPRIV_STORES:
        return 4
    if m in SINGLE_STORES or m in LOADS:
        return _store_load_size(i)
    if m in ("push", "pop"):
        extra = "lr" if m == "push" else "pc"
        return 2 if all(is_low(r) or r == extra for r in ops[0].regs) else 4
    if m in ("stm", "ldm"):
        base, wb = multi_base(i)
        regs = ops[1].regs
        if is_low(base) and all(is_low(r) for r in regs):
            # T1 STM always writes back; T1 LDM writes back iff base not in list
            if m == "stm" and wb:
                return 2
            if m == "ldm" and wb == (base not in regs):
                return 2
        return 4
    if m == "mov":
        src = ops[1]
        if isinstance(src, str):
            if not i.setflags:
                return 2
            return 2 if _lowregs(ops[0], src) else 4
        if isinstance(src, Imm):
            return 2 if i.setflags and is_low(ops[0]) and 0 <= src.value <= 255 else 4
        return 4
    if m in ("add", "sub"):
        return _addsub_size(i)
    if m in ("cmp",):
        rn, op2 = ops
        if isinstance(op2, Imm):
            return 2 if is_low(rn) and 0 <= op2.value <= 255 else 4
        return 2 if isinstance(op2, str) else 4
    if m in ("and", "orr", "eor", "bic", "mul", "tst"):
        if m == "tst":
            return 2 if _lowregs(*ops) else 4
        if i.setflags and len(ops) == 3 and _lowregs(*ops) and ops[0] in (ops[1], ops[2]):
            return 2 if m == "mul" or ops[0] == ops[1] else 4
        if i.setflags and len(ops) == 2 and _lowregs(*ops):
            return 2
        return 4
    if m in ("lsl", "lsr", "asr"):
        if i.setflags and len(ops) == 3 and isinstance(ops[2], Imm) and _lowregs(ops[0], ops[1]):
            return 2
        return 4
    return 4


def multi_base(i: Instruction) -> tuple:
    """(base register, writeback) of stm/ldm/vstm/vldm."""
    base = i.operands[0]
    if isinstance(base, WB):
        return base.reg, True
    return base, False


def _addsub_size(i: Instruction) -> int:
    ops = i.operands
    rd, rn = ops[0], ops[1]
    op2 = ops[2] if len(ops) == 3 else None
    if op2 is None:
        # two-operand form "add rd, rm" / "add rd, #imm"
        op2, rn = rn, rd
    if isinstance(op2, Imm):
        v = op2.value
        if rd == "sp" and rn == "sp" and 0 <= v <= 508 and v % 4 == 0:
            return 2
        if i.mnemonic == "add" and rn == "sp" and is_low(rd) and 0 <= v <= 1020 and v % 4 == 0:
            return 2
        if i.setflags and _lowregs(rd, rn):
            if 0 <= v <= 7 or (rd == rn and 0 <= v <= 255):
                return 2
        return 4
    if isinstance(op2, str):
        if i.setflags and _lowregs(rd, rn, op2):
            return 2
        if i.mnemonic == "add" and not i.setflags and (rd == rn or (rn == "sp" and rd == op2)):
            return 2
    return 4


# -- register effects -------------------------------------------------------


def _op_regs(op) -> set:
    if isinstance(op, str):
        return {op} if is_gpr(op) else set()
    if isinstance(op, Shifted):
        return {op.reg}
    if isinstance(op, Mem):
        regs = {op.base}
        if op.index:
            regs.add(op.index)
        return regs
    if isinstance(op, RegList):
        return {r for r in op.regs if is_gpr(r)}
    if isinstance(op, WB):
        return {op.reg}
    return set()


def reg_uses(i: Instruction) -> set:
    """General registers read by ``i`` (calls read the argument registers)."""
    m, ops = i.mnemonic, i.operands
    if m in ("it", "nop", "cps", "cpsid", "cpsie", "b", "mrs"):
        return set()
    if m in ("bl", "svc"):
        return {"r0", "r1", "r2", "r3", "sp"}
    if m == "blx":
        return {"r0", "r1", "r2", "r3", "sp"} | _op_regs(ops[0])
    if m in ("mov", "movw", "mvn"):
        return _op_regs(ops[1])
    if m == "movt":
        return {ops[0]}
    if m in ("push",):
        return _op_regs(ops[0]) | {"sp"}
    if m == "pop":
        return {"sp"}
    if m in ("stm", "stmdb"):
        return _op_regs(ops[0]) | _op_regs(ops[1])
    if m == "ldm":
        return _op_regs(ops[0])
    if m in SINGLE_STORES or m in UNPRIV_STORES:
        return _op_regs(ops[0]) | _op_regs(ops[1])
    if m == "strd":
        return _op_regs(ops[0]) | _op_regs(ops[1]) | _op_regs(ops[2])
    if m == "strex":
        return _op_regs(ops[1]) | _op_regs(ops[2])
    if m in LOADS or m == "ldrex":
        return _op_regs(ops[1])
    if m == "ldrd":
        return _op_regs(ops[2])
    if m in ("vstr", "vldr"):
        return _op_regs(ops[1])
    if m in ("vstm", "vldm"):
        return _op_regs(ops[0])
    if m == "vmov":
        return _vmov_uses(i)
    if m in ("tbb", "tbh"):
        return _op_regs(ops[0]) - {"pc"}
    if m in ("cmp", "tst", "cbz", "cbnz", "bx", "msr"):
        return set().union(*(_op_regs(o) for o in ops))
    # data processing: rd, rn, op2 (or rd, op2 two-operand form)
    srcs = ops[1:] if len(ops) > 2 else ops
    if m in ("add", "sub", "and", "orr", "eor", "bic", "lsl", "lsr", "asr", "mul") and len(ops) == 2:
        srcs = ops
    return set().union(*(_op_regs(o) for o in srcs))


def _vmov_uses(i: Instruction) -> set:
    ops = i.operands
    # vmov sN, rA / vmov dN, rA, rB read core registers; moves out of FP read none
    if not is_gpr(ops[0]):
        return {o for o in ops[1:] if isinstance(o, str) and is_gpr(o)}
    return set()


def reg_defs(i: Instruction) -> set:
    """General registers written by ``i`` (excluding pc for branches)."""
    m, ops = i.mnemonic, i.operands
    if m in ("bl", "blx"):
        return {"lr"}
    if m in ("cmp", "tst", "cbz", "cbnz", "b", "bx", "tbb", "tbh", "it", "nop",
             "svc", "msr", "cps", "cpsid", "cpsie"):
        return set()
    if m in ("push",):
        return {"sp"}
    if m == "pop":
        return _op_regs(ops[0]) | {"sp"}
    if m in ("stm", "stmdb", "vstm"):
        base, wb = multi_base(i)
        return {base} if wb else set()
    if m in ("ldm", "vldm"):
        base, wb = multi_base(i)
        regs = _op_regs(ops[1]) if m == "ldm" else set()
        return regs | ({base} if wb else set())
    if m in SINGLE_STORES or m in UNPRIV_STORES or m == "vstr":
        mem = ops[1]
        return {mem.base} if mem.writeback else set()
    if m == "strd":
        return {ops[2].base} if ops[2].writeback else set()
    if m == "strex":
        return {ops[0]}
    if m in LOADS or m == "ldrex" or m == "vldr":
        mem = ops[1]
        regs = {ops[0]} if is_gpr(ops[0]) else set()
        if isinstance(mem, Mem) and mem.writeback:
            regs.add(mem.base)
        return regs
    if m == "ldrd":
        regs = {ops[0], ops[1]}
        if ops[2].writeback:
            regs.add(ops[2].base)
        return regs
    if m == "vmov":
        return {o for o in ops if isinstance(o, str) and is_gpr(o)} if is_gpr(ops[0]) else set()
    return {ops[0]} if ops and isinstance(ops[0], str) and is_gpr(ops[0]) else set()


def writes_sp(i: Instruction) -> bool:
    return "sp" in reg_defs(i)
