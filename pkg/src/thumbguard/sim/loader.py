"""Place a program in the code band and resolve every symbol."""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field
from typing import Dict, Optional

from ..asm.isa import LABEL_HALFWORD, Instruction, instruction_size, mov_is_nop_label
from ..asm.program import Data, Label, Program
from ..layout import DEFAULT_LAYOUT, MemoryLayout

RUNTIME_STUBS = ("setjmp", "longjmp", "__cfi_abort", "__sjmap_expire", "__exit")
NOP_HALFWORD = 0xBF00
FILLER_NARROW = 0xDE00  # udf
FILLER_WIDE = (0xF7F0, 0xA000)


class LoadError(ValueError):
    pass


@dataclass
class Slot:
    """One placed instruction."""

    ins: Instruction
    addr: int
    size: int
    function: str
    index: int
    exempt: bool
    op: object = None  # compiled closure, filled by the machine


@dataclass
class Image:
    program: Program
    layout: MemoryLayout
    code: bytearray
    slots: Dict[int, Slot] = field(default_factory=dict)
    symbols: Dict[str, int] = field(default_factory=dict)
    function_ranges: Dict[str, tuple] = field(default_factory=dict)
    labels: Dict[tuple, int] = field(default_factory=dict)
    stubs: Dict[int, str] = field(default_factory=dict)
    function_entries: Dict[int, str] = field(default_factory=dict)

    def address_of(self, name: str) -> int:
        return self.symbols[name]

    def label_address(self, function: str, label: str) -> int:
        return self.labels[(function, label)]

    def function_at(self, addr: int) -> Optional[str]:
        for name, (lo, hi) in self.function_ranges.items():
            if lo <= addr < hi:
                return name
        return self.stubs.get(addr)

    def resolve(self, name: str, function: Optional[str] = None, thumb: bool = True) -> int:
        """Code pointer (Thumb bit set) for functions/stubs, plain address otherwise."""
        if function is not None and (function, name) in self.labels:
            return self.labels[(function, name)]
        if name not in self.symbols:
            raise LoadError(f"unresolved symbol '{name}'")
        addr = self.symbols[name]
        if thumb and (name in self.function_ranges or name in RUNTIME_STUBS):
            addr |= 1
        return addr


_NAME = re.compile(r"(?<![\w.$])[A-Za-z_.$][\w.$]*")
_BINOPS = {ast.Add: lambda a, b: a + b, ast.Sub: lambda a, b: a - b,
           ast.Mult: lambda a, b: a * b, ast.Div: lambda a, b: a // b,
           ast.FloorDiv: lambda a, b: a // b, ast.LShift: lambda a, b: a << b,
           ast.RShift: lambda a, b: a >> b}


def evaluate(expr: str, lookup) -> int:
    """Integer expression over symbols with + - * / << >> and parentheses."""
    names = {}

    def sub(m):
        key = f"_s{len(names)}"
        names[key] = m.group(0)
        return key

    text = _NAME.sub(sub, expr.strip())
    tree = ast.parse(text, mode="eval")

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, int):
            return node.value
        if isinstance(node, ast.Name):
            return lookup(names[node.id])
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](walk(node.left), walk(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
            return -walk(node.operand)
        raise LoadError(f"unsupported expression '{expr}'")

    return walk(tree)


def _data_size(item: Data, addr: int) -> int:
    if item.directive == "align":
        n = int(item.values[0], 0) if item.values else 2
        step = 1 << n
        return (-addr) % step
    return item.size_per_value * len(item.values)


def _align(addr: int, n: int = 4) -> int:
    return (addr + n - 1) & ~(n - 1)


def load_program(p: Program, layout: MemoryLayout = DEFAULT_LAYOUT) -> Image:
    image = Image(p, layout, bytearray(layout.code_size))
    addr = layout.code_base
    pending = []  # (addr, Data, function) to evaluate after placement
    for f in p.functions:
        addr = _align(addr)
        start = addr
        image.symbols[f.name] = addr
        image.function_entries[addr] = f.name
        for idx, item in enumerate(f.body):
            if isinstance(item, Label):
                image.labels[(f.name, item.name)] = addr
            elif isinstance(item, Data):
                pending.append((addr, item, f.name))
                addr += _data_size(item, addr)
            else:
                size = instruction_size(item)
                image.slots[addr] = Slot(item, addr, size, f.name, idx, f.exempt)
                addr += size
        image.function_ranges[f.name] = (start, addr)
    for block in p.data:
        addr = _align(addr)
        image.symbols[block.name] = addr
        for item in block.items:
            pending.append((addr, item, None))
            addr += _data_size(item, addr)
    for name in RUNTIME_STUBS:
        addr = _align(addr)
        image.symbols[name] = addr
        image.stubs[addr] = name
        addr += 4
    if addr > layout.code_base + layout.code_size:
        raise LoadError("program does not fit in the code band")
    missing = set(p.externals) - set(image.symbols)
    if missing:
        raise LoadError(f"unresolved external(s): {', '.join(sorted(missing))}")
    _write_code(image, pending)
    return image


def _put(image: Image, addr: int, value: int, size: int) -> None:
    off = addr - image.layout.code_base
    image.code[off:off + size] = (value & ((1 << (8 * size)) - 1)).to_bytes(size, "little")


def _write_code(image: Image, pending) -> None:
    for addr, slot in image.slots.items():
        i = slot.ins
        if slot.size == 2:
            if mov_is_nop_label(i):
                word = LABEL_HALFWORD
            elif i.mnemonic == "nop":
                word = NOP_HALFWORD
            else:
                word = FILLER_NARROW | (slot.index & 0xFF)
            _put(image, addr, word, 2)
        else:
            _put(image, addr, FILLER_WIDE[0], 2)
            _put(image, addr + 2, FILLER_WIDE[1], 2)
    for addr, item, fname in pending:
        if item.directive == "align":
            continue
        width = item.size_per_value
        for k, expr in enumerate(item.values):
            here = addr + k * width

            def lookup(name, here=here, fname=fname):
                if name == ".":
                    return here
                return image.resolve(name, fname)

            try:
                value = evaluate(expr, lookup)
            except (SyntaxError, KeyError) as exc:
                raise LoadError(f"bad data expression '{expr}': {exc}") from None
            _put(image, here, value, width)


__all__ = ["Image", "LoadError", "RUNTIME_STUBS", "Slot", "evaluate", "load_program"]
