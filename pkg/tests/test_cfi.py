import pytest

from thumbguard.asm import Flag, instruction_size
from thumbguard.asm.isa import LABEL_HALFWORD, mov_is_nop_label
from thumbguard.passes import PassError, cfi_program
from thumbguard.passes.cfi import ABORT_SYMBOL, instrument_indirect_branch, verify_jump_tables
from thumbguard.asm import parse_instruction

from conftest import parse

ADDR = "\t.silhouette_addrtaken cb\n"
CHECK = ["bic ip, r1, #1", "ldrh ip, [ip]", "cmp ip, #0x4600", "bne __cfi_abort"]


def text(f):
    return [str(i).split(" @")[0] for i in f.instructions]


def caller(branch="blx r1"):
    return ("main", f"push {{r4, lr}}\nldr r1, =cb\nmovs r0, #1\n{branch}\npop {{r4, pc}}")


def mov_t1(rd, rm):
    # MOV (register) T1: 0100 0110 D Rm(4) Rd(3)
    return 0x4600 | ((rd >> 3) << 7) | (rm << 3) | (rd & 7)


def test_label_is_the_nop_halfword():
    assert LABEL_HALFWORD == mov_t1(0, 0) == 0x4600
    label = parse_instruction("mov r0, r0")
    assert mov_is_nop_label(label) and instruction_size(label) == 2
    assert not mov_is_nop_label(parse_instruction("mov r1, r1"))


def test_address_taken_function_gets_label():
    q, _ = cfi_program(parse(("cb", "adds r0, r0, #1\nbx lr"), caller(), directives=ADDR))
    cb = q.function("cb")
    assert text(cb)[0] == "mov r0, r0"
    assert Flag.CFI_LABEL in cb.instructions[0].flags
    assert text(q.function("main"))[:1] == ["push {r4, lr}"]


def test_exempt_function_gets_no_label():
    q, _ = cfi_program(parse(("cb", "bx lr"), ("main", "bx lr"),
                             directives=ADDR + "\t.silhouette_exempt cb\n"))
    assert text(q.function("cb")) == ["bx lr"]


def test_no_address_taken_functions_unchanged():
    p = parse(("f", "bx lr"), ("main", "push {r4, lr}\nbl f\npop {r4, pc}"))
    q, _ = cfi_program(p)
    assert q == p


def test_indirect_call_checked():
    q, _ = cfi_program(parse(("cb", "bx lr"), caller(), directives=ADDR))
    body = text(q.function("main"))
    k = body.index("blx r1")
    assert body[k - 4:k] == CHECK
    assert ABORT_SYMBOL in q.externals


def test_tail_call_checked_but_not_return():
    q, _ = cfi_program(parse(("cb", "bx lr"), ("main", "ldr r1, =cb\nbx r1"), directives=ADDR))
    body = text(q.function("main"))
    assert body[-5:] == CHECK + ["bx r1"]
    q, _ = cfi_program(parse(("main", "bx lr")))
    assert text(q.function("main")) == ["bx lr"]


def test_spill_when_no_scratch():
    br = parse_instruction("blx r0")
    assert [str(i).split(" @")[0] for i in instrument_indirect_branch(br, None)] == [
        "sub sp, sp, #4", "strt r4, [sp]", "bic r4, r0, #1", "ldrh r4, [r4]", "cmp r4, #0x4600",
        "ldr r4, [sp], #4", "bne __cfi_abort", "blx r0"]
    assert [str(i).split(" @")[0] for i in instrument_indirect_branch(br, None, mode="invert")][:1] == \
        ["push {r4}"]


def test_idempotent():
    q, _ = cfi_program(parse(("cb", "bx lr"), caller(), directives=ADDR))
    assert cfi_program(q)[0] == q


@pytest.mark.parametrize("branch", ["mov pc, r1", "ldr pc, [r1]"])
def test_computed_branches_rejected(branch):
    with pytest.raises(PassError, match="computed branch"):
        cfi_program(parse(("main", f"push {{r4, lr}}\n{branch}\npop {{r4, pc}}")))


def test_conditional_indirect_call_rejected():
    with pytest.raises(PassError, match="conditional"):
        cfi_program(parse(("main", "push {r4, lr}\ncmp r0, #0\nit eq\nblxeq r1\npop {r4, pc}")))


TABLE = """
    {guard}
    tbb [pc, r0]
tbl:
    .byte (c0-tbl)/2
    .byte (c1-tbl)/2
    .byte (c2-tbl)/2
    .align 1
c0:
    movs r0, #10
    bx lr
c1:
    movs r0, #11
    bx lr
c2:
    movs r0, #12
    bx lr
dflt:
    movs r0, #0
    bx lr
"""


@pytest.mark.parametrize("guard,ok", [
    ("cmp r0, #2\n    bhi dflt", True),
    ("cmp r0, #3\n    bhs dflt", True),
    ("cmp r0, #3\n    bhi dflt", False),   # 4 allowed, 3 present
    ("nop", False),
    ("cmp r0, #2\n    bhi dflt\n    adds r0, r0, #1", False),
    ("cmp r1, #2\n    bhi dflt", False),
])
def test_jump_table_bounds(guard, ok):
    f = parse(("main", TABLE.format(guard=guard))).function("main")
    report = verify_jump_tables(f)
    assert report.tables == 1
    assert report.ok is ok


def test_strict_jump_tables_fail():
    p = parse(("main", TABLE.format(guard="nop")))
    _, reports = cfi_program(p)
    assert not reports["main"].ok
    with pytest.raises(PassError, match="jump table"):
        cfi_program(p, strict=True)


def test_corpus_tables_verified(corpus):
    for b in corpus:
        _, reports = cfi_program(b.program(), strict=True)
        assert all(r.ok for r in reports.values())
