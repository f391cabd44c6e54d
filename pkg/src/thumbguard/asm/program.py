from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Union

from .isa import Imm, Instruction


class AsmError(Exception):
    """Malformed or unsupported assembly; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int = 0, function: Optional[str] = None):
        self.message = message
        self.line = line
        self.function = function
        where = []
        if function:
            where.append(function)
        if line:
            where.append(f"line {line}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)


@dataclass(frozen=True)
class Label:
    name: str
    line: int = field(default=0, compare=False)

    def __str__(self):
        return f"{self.name}:"


@dataclass(frozen=True)
class Data:
    """``.word``/``.hword``/``.byte`` values or an ``.align`` request.

    Values are kept as expression strings; the loader evaluates them.
    """

    directive: str
    values: tuple
    line: int = field(default=0, compare=False)

    def __str__(self):
        return f".{self.directive} " + ", ".join(self.values)

    @property
    def size_per_value(self) -> int:
        return {"word": 4, "hword": 2, "short": 2, "byte": 1}.get(self.directive, 0)


Item = Union[Label, Instruction, Data]

ADDRTAKEN = "address-taken"
EXEMPT = "exempt"
INTERRUPT = "interrupt-handler"


@dataclass(frozen=True)
class Function:
    name: str
    body: tuple
    attributes: frozenset = frozenset()
    line: int = field(default=0, compare=False)

    @property
    def exempt(self) -> bool:
        return EXEMPT in self.attributes

    @property
    def address_taken(self) -> bool:
        return ADDRTAKEN in self.attributes

    @property
    def instructions(self) -> list:
        return [it for it in self.body if isinstance(it, Instruction)]

    def labels(self) -> dict:
        return {it.name: idx for idx, it in enumerate(self.body) if isinstance(it, Label)}

    def with_body(self, body) -> "Function":
        return replace(self, body=tuple(body))

    @property
    def frame_size(self) -> Optional[int]:
        """Bytes reserved by the prologue, or None for a dynamic frame."""
        total = 0
        for it in self.instructions:
            if it.mnemonic == "push":
                total += 4 * len(it.operands[0].regs)
            elif it.mnemonic == "sub" and it.operands[:2] == ("sp", "sp"):
                if not isinstance(it.operands[2], Imm):
                    return None
                total += it.operands[2].value
            elif it.mnemonic not in ("mov",):
                break
        return total


@dataclass(frozen=True)
class DataBlock:
    """Top-level labelled read-only data placed in the code region."""

    name: str
    items: tuple
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Program:
    functions: tuple
    data: tuple = ()
    externals: frozenset = frozenset()
    globals: frozenset = frozenset()

    def function(self, name: str) -> Function:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def function_names(self) -> list:
        return [f.name for f in self.functions]

    def replace_functions(self, functions) -> "Program":
        return replace(self, functions=tuple(functions))

    def with_externals(self, *names: str) -> "Program":
        return replace(self, externals=self.externals | frozenset(names))

    def iter_instructions(self) -> Iterator:
        for f in self.functions:
            for idx, it in enumerate(f.body):
                if isinstance(it, Instruction):
                    yield f, idx, it
