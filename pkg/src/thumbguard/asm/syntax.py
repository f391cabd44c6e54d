"""Parse and emit the GNU-syntax Thumb-2 subset (see docs/asm-subset.md)."""

from __future__ import annotations

import re
from typing import Iterable, List, Optional

from .isa import (
    FLAG_SETTABLE, GPR_INDEX, GPR_NAMES, MNEMONICS, Flag, ITBlockSpec, Imm, Instruction, LabelRef,
    Literal, Mem, RegList, Shifted, Sym, SYSTEM_REGS, WB, canonical_cond,
    canonical_reg, ends_it_block, is_gpr,
)
from .program import (
    ADDRTAKEN, EXEMPT, AsmError, Data, DataBlock, Function, Label, Program,
)

_ANNOTATION = re.compile(r"@silhouette:([\w-]+)")
_LABEL = re.compile(r"^([A-Za-z_.$][\w.$]*):\s*(.*)$")
_IDENT = re.compile(r"^[A-Za-z_.$][\w.$]*$")
_IT = re.compile(r"^it([te]*)$")
_FLAG_BY_NAME = {f.value: f for f in Flag}
_BASES = sorted(MNEMONICS | {"stmia", "ldmia", "stmfd", "ldmfd"}, key=len, reverse=True)
_BASE_ALIAS = {"stmia": "stm", "ldmia": "ldm", "stmfd": "stmdb", "ldmfd": "ldm"}
_PASSTHROUGH_DIRECTIVES = {"syntax", "thumb", "thumb_func", "text", "align", "p2align", "data", "section"}
_DATA_DIRECTIVES = {"word", "hword", "short", "byte"}
_SHIFTS = ("lsl", "lsr", "asr")


def split_mnemonic(word: str, line: int = 0):
    """Return (base, setflags, cond, wide) for a mnemonic spelling."""
    word = word.lower()
    wide = False
    if word.endswith(".w"):
        word, wide = word[:-2], True
    elif word.endswith(".n"):
        word = word[:-2]
    if word.startswith("v") and "." in word:
        word = word.split(".", 1)[0]
    for base in _BASES:
        if not word.startswith(base):
            continue
        rest = word[len(base):]
        canon = _BASE_ALIAS.get(base, base)
        if rest == "":
            return canon, False, "al", wide
        cond = canonical_cond(rest)
        if cond is not None and base not in ("cbz", "cbnz"):
            return canon, False, cond, wide
        if rest[0] == "s" and canon in FLAG_SETTABLE:
            cond = canonical_cond(rest[1:]) if rest[1:] else "al"
            if cond is not None:
                return canon, True, cond, wide
    raise AsmError(f"unsupported mnemonic '{word}'", line)


def _split_operands(text: str) -> List[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "[{(":
            depth += 1
        elif ch in "]})":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail:
        parts.append(tail)
    return parts


def _parse_int(text: str, line: int) -> int:
    text = text.strip()
    try:
        return int(text, 0)
    except ValueError:
        raise AsmError(f"bad immediate '{text}'", line) from None


def _reg(text: str, line: int) -> str:
    reg = canonical_reg(text.strip())
    if reg is None:
        raise AsmError(f"expected register, got '{text.strip()}'", line)
    return reg


def _parse_reglist(text: str, line: int) -> RegList:
    regs = []
    for part in _split_operands(text[1:-1]):
        if "-" in part:
            lo, hi = (_reg(p, line) for p in part.split("-"))
            if is_gpr(lo):
                regs.extend(GPR_NAMES[GPR_INDEX[lo]:GPR_INDEX[hi] + 1])
            else:
                kind = lo[0]
                regs.extend(f"{kind}{n}" for n in range(int(lo[1:]), int(hi[1:]) + 1))
        else:
            regs.append(_reg(part, line))
    if not regs:
        raise AsmError("empty register list", line)
    if all(is_gpr(r) for r in regs):
        regs = sorted(set(regs), key=GPR_INDEX.get)
    elif any(is_gpr(r) for r in regs):
        raise AsmError("mixed register list", line)
    else:
        regs = sorted(set(regs), key=lambda r: int(r[1:]))
    return RegList(tuple(regs))


def _parse_mem(text: str, line: int) -> Mem:
    close = text.rindex("]")
    inner, after = text[1:close], text[close + 1:].strip()
    parts = _split_operands(inner)
    base = _reg(parts[0], line)
    mode = "pre" if after == "!" else "offset"
    if after not in ("", "!"):
        raise AsmError(f"bad memory operand '{text}'", line)
    if len(parts) == 1:
        return Mem(base, 0, mode=mode)
    second = parts[1]
    if second.startswith("#"):
        if len(parts) != 2:
            raise AsmError(f"bad memory operand '{text}'", line)
        return Mem(base, _parse_int(second[1:], line), mode=mode)
    index = _reg(second, line)
    shift = 0
    if len(parts) == 3:
        m = re.fullmatch(r"lsl\s+#(\S+)", parts[2].strip().lower())
        if not m:
            raise AsmError(f"bad index shift '{parts[2]}'", line)
        shift = _parse_int(m.group(1), line)
    if mode == "pre":
        raise AsmError("register-offset writeback is not supported", line)
    return Mem(base, 0, index=index, shift=shift)


def _parse_operand(tok: str, line: int):
    low = tok.lower()
    if tok.startswith("["):
        return _parse_mem(tok, line)
    if tok.startswith("{"):
        return _parse_reglist(tok, line)
    if tok.startswith("#"):
        return Imm(_parse_int(tok[1:], line))
    if tok.startswith("="):
        body = tok[1:].strip()
        if re.fullmatch(r"-?(0x[0-9a-fA-F]+|\d+)", body):
            return Literal(int(body, 0))
        if not _IDENT.match(body):
            raise AsmError(f"bad literal '{tok}'", line)
        return Literal(body)
    for sh in _SHIFTS:
        if low.startswith(sh + " ") or low.startswith(sh + "\t"):
            return ("shift", sh, _parse_int(low[len(sh):].strip().lstrip("#"), line))
    if tok.endswith("!"):
        return WB(_reg(tok[:-1], line))
    reg = canonical_reg(tok)
    if reg is not None:
        return reg
    if low in SYSTEM_REGS or low in ("i", "f", "if"):
        return Sym(low)
    if _IDENT.match(tok):
        return LabelRef(tok)
    raise AsmError(f"cannot parse operand '{tok}'", line)


def _merge_operands(raw: list, line: int) -> tuple:
    out = []
    for op in raw:
        if isinstance(op, tuple) and op[0] == "shift":
            if not out or not isinstance(out[-1], str):
                raise AsmError("shift without register", line)
            out[-1] = Shifted(out[-1], op[1], op[2])
        elif isinstance(op, Imm) and out and isinstance(out[-1], Mem) and out[-1].mode == "offset" \
                and out[-1].offset == 0 and out[-1].index is None:
            out[-1] = Mem(out[-1].base, op.value, mode="post")
        else:
            out.append(op)
    return tuple(out)


def _kinds(ops) -> str:
    sig = []
    for op in ops:
        if isinstance(op, str):
            sig.append("r" if is_gpr(op) else ("s" if op[0] == "s" else "d"))
        elif isinstance(op, Imm):
            sig.append("i")
        elif isinstance(op, Mem):
            sig.append("m")
        elif isinstance(op, RegList):
            sig.append("l")
        elif isinstance(op, WB):
            sig.append("w")
        elif isinstance(op, LabelRef):
            sig.append("L")
        elif isinstance(op, Literal):
            sig.append("=")
        elif isinstance(op, Shifted):
            sig.append("h")
        elif isinstance(op, Sym):
            sig.append("y")
    return "".join(sig)


_FORMS = {
    "mov": {"rr", "ri", "rh"}, "movw": {"ri"}, "movt": {"ri"},
    "add": {"rri", "rrr", "rrh", "ri", "rr"}, "sub": {"rri", "rrr", "rrh", "ri", "rr"},
    "addw": {"rri"}, "subw": {"rri"},
    "and": {"rri", "rrr", "rrh", "rr"}, "orr": {"rri", "rrr", "rrh", "rr"},
    "eor": {"rri", "rrr", "rrh", "rr"}, "bic": {"rri", "rrr", "rrh", "rr", "ri"},
    "lsl": {"rri", "rrr", "rr"}, "lsr": {"rri", "rrr", "rr"}, "asr": {"rri", "rrr", "rr"},
    "mul": {"rrr", "rr"}, "cmp": {"ri", "rr", "rh"}, "tst": {"ri", "rr"},
    "cbz": {"rL"}, "cbnz": {"rL"},
    "str": {"rm"}, "strb": {"rm"}, "strh": {"rm"}, "strd": {"rrm"},
    "strt": {"rm"}, "strbt": {"rm"}, "strht": {"rm"}, "strex": {"rrm"},
    "ldr": {"rm", "r="}, "ldrb": {"rm"}, "ldrh": {"rm"}, "ldrd": {"rrm"}, "ldrex": {"rm"},
    "push": {"l"}, "pop": {"l"}, "stm": {"wl", "rl"}, "stmdb": {"wl", "rl"},
    "ldm": {"wl", "rl"},
    "b": {"L"}, "bl": {"L"}, "blx": {"r"}, "bx": {"r"}, "tbb": {"m"}, "tbh": {"m"},
    "nop": {""}, "svc": {"i"}, "msr": {"yr"}, "mrs": {"ry"}, "cps": {"y"},
    "cpsid": {"y"}, "cpsie": {"y"},
    "vmov": {"sr", "rs", "drr", "rrd", "ss", "dd"}, "vstr": {"sm", "dm"}, "vldr": {"sm", "dm"},
    "vstm": {"wl", "rl"}, "vldm": {"wl", "rl"},
}


def parse_instruction(text: str, line: int = 0, flags: frozenset = frozenset()) -> Instruction:
    text = text.strip()
    word, _, rest = text.partition(" ")
    if "\t" in word:
        word, _, more = word.partition("\t")
        rest = more + " " + rest
    rest = rest.strip()
    m = _IT.match(word.lower())
    if m:
        pattern = "T" + m.group(1).upper()
        if len(pattern) > 4:
            raise AsmError("IT pattern longer than 4", line)
        cond = canonical_cond(rest.lower())
        if cond is None or cond == "al":
            raise AsmError(f"bad IT condition '{rest}'", line)
        return Instruction("it", (ITBlockSpec(cond, pattern),), flags=flags, line=line)
    base, setflags, cond, wide = split_mnemonic(word, line)
    raw = [_parse_operand(tok, line) for tok in _split_operands(rest)] if rest else []
    ops = _merge_operands(raw, line)
    if base not in ("cps", "cpsid", "cpsie"):
        # interrupt-mask names are only keywords for cps; elsewhere they are symbols
        ops = tuple(LabelRef(o.name) if isinstance(o, Sym) and o.name in ("i", "f", "if") else o
                    for o in ops)
    sig = _kinds(ops)
    if sig not in _FORMS[base]:
        raise AsmError(f"unsupported operands for '{base}': {rest}", line)
    if base in ("tbb", "tbh"):
        mem = ops[0]
        if mem.base != "pc" or mem.index is None or mem.shift != (1 if base == "tbh" else 0):
            raise AsmError(f"bad table-branch operand '{rest}'", line)
    if base in ("vstm", "vldm", "stm", "ldm", "stmdb") and base.startswith("v") == is_gpr(ops[1].regs[0]):
        raise AsmError(f"register list kind mismatch for '{base}'", line)
    if base in ("vstr", "vldr") and ops[1].mode != "offset":
        raise AsmError(f"'{base}' supports offset addressing only", line)
    return Instruction(base, ops, cond=cond, setflags=setflags, wide=wide, flags=flags, line=line)


def _strip_comment(raw: str):
    idx = raw.find("@")
    if idx < 0:
        return raw.strip(), frozenset()
    names = _ANNOTATION.findall(raw[idx:])
    flags = set()
    for name in names:
        if name not in _FLAG_BY_NAME:
            raise AsmError(f"unknown annotation '@silhouette:{name}'")
        flags.add(_FLAG_BY_NAME[name])
    return raw[:idx].strip(), frozenset(flags)


def _check_it_blocks(fname: str, body: list) -> None:
    idx = 0
    while idx < len(body):
        item = body[idx]
        if isinstance(item, Instruction) and item.mnemonic == "it":
            spec = item.operands[0]
            want = spec.conditions()
            run = []
            j = idx + 1
            while j < len(body) and isinstance(body[j], Instruction) and body[j].conditional \
                    and body[j].mnemonic != "it":
                run.append(body[j])
                j += 1
            covered = len(want)
            if len(run) < covered:
                raise AsmError(
                    f"IT pattern covers {covered} instruction{'s' if covered > 1 else ''}, "
                    f"{len(run)} conditional found", item.line, fname)
            if len(run) > covered and run[covered].mnemonic != "b":
                raise AsmError(
                    f"IT pattern covers {covered} instruction{'s' if covered > 1 else ''}, "
                    f"{len(run)} conditional found", item.line, fname)
            for k, (ins, cond) in enumerate(zip(run, want)):
                if ins.cond != cond:
                    raise AsmError(f"condition '{ins.cond}' does not match IT slot '{cond}'",
                                   ins.line, fname)
                if ins.mnemonic in ("cbz", "cbnz"):
                    raise AsmError(f"'{ins.mnemonic}' not allowed in IT block", ins.line, fname)
                if ends_it_block(ins) and k != covered - 1:
                    raise AsmError("branch must be last in IT block", ins.line, fname)
            idx += 1 + covered
            continue
        if isinstance(item, Instruction) and item.conditional and item.mnemonic != "b":
            raise AsmError(f"conditional '{item.spelled}' outside IT block", item.line, fname)
        idx += 1


def parse_program(text: str) -> Program:
    """Parse assembly source into a :class:`Program`."""
    functions: list = []
    data_blocks: list = []
    declared_functions: dict = {}
    globals_: list = []
    attrs: dict = {}
    current = None  # (name, body, line)
    current_data = None
    seen_labels: set = set()

    def close_function():
        nonlocal current
        if current is not None:
            name, body, line = current
            functions.append((name, body, line))
            current = None

    def close_data():
        nonlocal current_data
        if current_data is not None:
            data_blocks.append(DataBlock(current_data[0], tuple(current_data[1]), current_data[2]))
            current_data = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        code, flags = _strip_comment(raw)
        if not code:
            continue
        m = _LABEL.match(code)
        if m:
            name, tail = m.group(1), m.group(2)
            if name in declared_functions:
                close_function()
                close_data()
                if any(f[0] == name for f in functions):
                    raise AsmError(f"duplicate function label '{name}'", lineno)
                current = (name, [], lineno)
                seen_labels = {name}
            elif current is not None:
                if name in seen_labels:
                    raise AsmError(f"duplicate label '{name}'", lineno, current[0])
                seen_labels.add(name)
                current[1].append(Label(name, lineno))
            else:
                close_data()
                if any(d.name == name for d in data_blocks):
                    raise AsmError(f"duplicate data label '{name}'", lineno)
                current_data = (name, [], lineno)
            if tail:
                code = tail
            else:
                continue
        if code.startswith("."):
            directive, _, args = code[1:].partition(" ")
            if "\t" in directive:
                directive, _, more = directive.partition("\t")
                args = more + " " + args
            directive, args = directive.lower(), args.strip()
            if directive in _DATA_DIRECTIVES or directive == "align":
                if directive == "align" and current is None and current_data is None:
                    continue
                values = tuple(v.strip() for v in _split_operands(args)) if args else ()
                if directive == "short":
                    directive = "hword"
                item = Data(directive, values, lineno)
                if current is not None:
                    current[1].append(item)
                elif current_data is not None:
                    current_data[1].append(item)
                else:
                    raise AsmError("data directive outside a label", lineno)
                continue
            if directive in ("global", "globl"):
                globals_.extend(a.strip() for a in args.split(","))
            elif directive == "type":
                parts = [a.strip() for a in args.split(",")]
                if len(parts) == 2 and parts[1] in ("%function", "@function"):
                    if parts[0] in declared_functions:
                        raise AsmError(f"duplicate function label '{parts[0]}'", lineno)
                    declared_functions[parts[0]] = lineno
            elif directive == "size":
                name = args.split(",")[0].strip()
                if current is not None and current[0] == name:
                    close_function()
            elif directive == "silhouette_exempt":
                attrs.setdefault(args, set()).add(EXEMPT)
            elif directive == "silhouette_addrtaken":
                attrs.setdefault(args, set()).add(ADDRTAKEN)
            elif directive in _PASSTHROUGH_DIRECTIVES:
                pass
            else:
                raise AsmError(f"unknown directive '.{directive}'", lineno)
            continue
        if current is None:
            raise AsmError(f"instruction outside a function: '{code}'", lineno)
        current[1].append(parse_instruction(code, lineno, flags))
    close_function()
    close_data()

    defined = {f[0] for f in functions}
    for name in declared_functions:
        if name not in defined:
            raise AsmError(f"function '{name}' declared but never defined", declared_functions[name])
    for name in attrs:
        if name not in defined:
            raise AsmError(f"attribute for unknown function '{name}'")
    funcs = []
    for name, body, line in functions:
        _check_it_blocks(name, body)
        funcs.append(Function(name, tuple(body), frozenset(attrs.get(name, ())), line))
    data_names = {d.name for d in data_blocks}
    externals = frozenset(g for g in globals_ if g not in defined and g not in data_names)
    prog = Program(tuple(funcs), tuple(data_blocks), externals, frozenset(globals_))
    check_symbols(prog)
    return prog


def check_symbols(prog: Program) -> None:
    """Every branch target / literal symbol must resolve."""
    top = set(prog.function_names()) | {d.name for d in prog.data} | set(prog.externals)
    for f in prog.functions:
        local = set(f.labels())
        for it in f.instructions:
            for op in it.operands:
                name = None
                if isinstance(op, LabelRef):
                    name = op.name
                elif isinstance(op, Literal) and isinstance(op.value, str):
                    name = op.value
                if name is not None and name not in local and name not in top:
                    raise AsmError(f"undefined symbol '{name}'", it.line, f.name)


def emit_function(f: Function) -> List[str]:
    lines = ["\t.align 2", f"\t.type {f.name}, %function", f"{f.name}:"]
    for item in f.body:
        if isinstance(item, Label):
            lines.append(f"{item.name}:")
        elif isinstance(item, Data):
            lines.append(f"\t{item}")
        else:
            lines.append(f"\t{item}")
    lines.append(f"\t.size {f.name}, .-{f.name}")
    return lines


def emit_lines(p: Program) -> List[str]:
    lines = ["\t.syntax unified", "\t.thumb", "\t.text"]
    for name in sorted(p.globals | p.externals):
        lines.append(f"\t.global {name}")
    for f in p.functions:
        if f.exempt:
            lines.append(f"\t.silhouette_exempt {f.name}")
        if f.address_taken:
            lines.append(f"\t.silhouette_addrtaken {f.name}")
    for f in p.functions:
        lines.extend(emit_function(f))
    for block in p.data:
        lines.append(f"{block.name}:")
        lines.extend(f"\t{item}" for item in block.items)
    return lines


def emit_program(p: Program) -> str:
    """Render ``p`` as assembly text; pass flags become ``@silhouette:`` comments."""
    return "\n".join(emit_lines(p)) + "\n"


def instruction_lines(p: Program) -> Iterable:
    """Yield (emitted line number, function, instruction) in emission order."""
    lines = emit_lines(p)
    by_function = {f.name: f for f in p.functions}
    current: Optional[object] = None
    insns: list = []
    for lineno, text in enumerate(lines, start=1):
        if text.endswith(":") and not text.startswith("\t") and text[:-1] in by_function:
            current = by_function[text[:-1]]
            insns = [it for it in current.body if isinstance(it, Instruction)]
            continue
        if current is None or not text.startswith("\t") or text.startswith("\t."):
            if text.startswith("\t.size"):
                current = None
            continue
        yield lineno, current, insns.pop(0)
