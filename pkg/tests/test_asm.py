import pytest

from thumbguard.asm import (
    AsmError, Flag, Imm, Instruction, Kind, Mem, RegList, classify_instruction, emit_program,
    instruction_size, parse_instruction, parse_program,
)
from thumbguard.asm.isa import LABEL_HALFWORD, is_modified_immediate, reg_defs, reg_uses

from conftest import parse, program

# Narrowest ARMv7-M encodings, taken by hand from the Thumb instruction tables.
SIZES = [
    ("movs r0, #5", 2), ("mov r0, #5", 4), ("mov r0, r1", 2), ("movs r8, r1", 4),
    ("movw r0, #0x1234", 4), ("str r0, [r1, #4]", 2), ("str r0, [r1, #124]", 2),
    ("str r0, [r1, #128]", 4), ("str r0, [sp, #1020]", 2), ("str r0, [sp, #1024]", 4),
    ("str r8, [r1]", 4), ("str r0, [r1, #-4]", 4), ("str r0, [r1, r2]", 2),
    ("str r0, [r1, r2, lsl #2]", 4), ("str r0, [r1, #4]!", 4), ("str r0, [r1], #4", 4),
    ("strb r0, [r1, #31]", 2), ("strb r0, [r1, #32]", 4), ("strh r0, [r1, #62]", 2),
    ("strh r0, [r1, #64]", 4), ("strt r0, [r1]", 4), ("strd r0, r1, [r2]", 4),
    ("push {r4, lr}", 2), ("push {r4, r8}", 4), ("pop {r4, pc}", 2), ("pop {r4, lr}", 4),
    ("bl main", 4), ("b main", 2), ("bx lr", 2), ("blx r3", 2), ("cbz r0, main", 2),
    ("tbb [pc, r0]", 4), ("ldrex r0, [r1]", 4), ("strex r2, r0, [r1]", 4), ("vstr d8, [sp]", 4),
    ("stm r0!, {r1, r2}", 2), ("stm r0, {r1, r2}", 4), ("cmp r0, #255", 2), ("cmp r0, #256", 4),
    ("cmp r8, #1", 4), ("cmp r0, r8", 2), ("bic r0, r0, #1", 4), ("bics r0, r0, r1", 2),
    ("muls r0, r1, r0", 2), ("add sp, sp, #8", 2), ("sub sp, sp, #1016", 4),
    ("add r0, sp, #4", 2), ("adds r0, r1, #3", 2), ("adds r0, r1, #8", 4),
    ("adds r0, r0, #200", 2), ("ldr r0, =0x1234", 2), ("ldrh ip, [ip]", 4),
    ("ldr lr, [sp, ip]", 4), ("nop", 2), ("cpsid i", 2), ("svc #0", 2),
    ("mrs r0, primask", 4), ("add r0, r0, r8", 2), ("adds r0, r1, r2", 2),
    ("add r0, r1, r2", 4), ("mov r0, r0", 2),
]


@pytest.mark.parametrize("text,size", SIZES)
def test_encoding_size_oracle(text, size):
    assert instruction_size(parse_instruction(text)) == size


def test_wide_suffix_forces_four_bytes():
    assert instruction_size(parse_instruction("adds.w r0, r0, #1")) == 4


@pytest.mark.parametrize("value,ok", [
    (0xFF, True), (0x200000, True), (0xC0000000, True), (0x00AB00AB, True),
    (0xABABABAB, True), (0x101, False), (0x12345678, False), (0xFF000000, True),
])
def test_modified_immediate(value, ok):
    assert is_modified_immediate(value) is ok


@pytest.mark.parametrize("text,kind", [
    ("str r0, [r1]", Kind.PRIVILEGED_STORE), ("strt r0, [r1]", Kind.UNPRIVILEGED_STORE),
    ("strex r2, r0, [r1]", Kind.STORE_EXCLUSIVE), ("vstr s0, [r1]", Kind.FP_STORE),
    ("push {r4, lr}", Kind.STORE_MULTIPLE), ("msr primask, r0", Kind.PRIV_MSR),
    ("cpsid i", Kind.PRIV_CPS), ("mrs r0, primask", Kind.PRIV_MRS),
])
def test_classify(text, kind):
    assert classify_instruction(parse_instruction(text)) is kind


def test_operand_structure():
    i = parse_instruction("str r0, [r1, r2, lsl #2]")
    assert i.operands == ("r0", Mem("r1", index="r2", shift=2))
    i = parse_instruction("str r1, [r4, #20]!")
    assert i.operands[1] == Mem("r4", 20, mode="pre")
    i = parse_instruction("push {r4-r7, lr}")
    assert i.operands[0] == RegList(("r4", "r5", "r6", "r7", "lr"))
    i = parse_instruction("addseq r0, r0, #1")
    assert (i.mnemonic, i.setflags, i.cond) == ("add", True, "eq")
    assert parse_instruction("adds r0, r1").operands[-1] == "r1"
    assert parse_instruction("mov r0, #-1").operands[1] == Imm(-1)


def test_register_aliases():
    assert parse_instruction("mov r12, r13").operands == ("ip", "sp")


def test_reg_uses_and_defs():
    i = parse_instruction("str r0, [r1, #4]!")
    assert reg_uses(i) == {"r0", "r1"} and reg_defs(i) == {"r1"}
    i = parse_instruction("bl main")
    assert "r0" in reg_uses(i) and reg_defs(i) == {"lr"}
    i = parse_instruction("pop {r4, pc}")
    assert reg_defs(i) == {"r4", "pc", "sp"}
    i = parse_instruction("strex r2, r0, [r1]")
    assert reg_uses(i) == {"r0", "r1"} and reg_defs(i) == {"r2"}


def test_unsupported_mnemonic_reports_line():
    with pytest.raises(AsmError) as exc:
        parse(("main", "movs r0, #1\nfrobnicate r0\nbx lr"))
    assert "frobnicate" in str(exc.value) and exc.value.line > 0


def test_undefined_branch_target():
    with pytest.raises(AsmError):
        parse(("main", "b .Lnowhere\nbx lr"))


def test_it_block_length_checked():
    with pytest.raises(AsmError):
        parse(("main", "cmp r0, #0\nit eq\nmoveq r0, #1\nmovne r0, #2\nbx lr"))


def test_directives_set_attributes():
    p = parse(("f", "bx lr"), ("h", "bx lr"), ("main", "bx lr"),
              directives="\t.silhouette_addrtaken f\n\t.silhouette_exempt h\n")
    assert p.function("f").address_taken and not p.function("f").exempt
    assert p.function("h").exempt and not p.function("main").address_taken


def test_roundtrip_preserves_program(corpus):
    for b in corpus:
        p = b.program()
        again = parse_program(emit_program(p))
        assert [f.instructions for f in again.functions] == [f.instructions for f in p.functions]
        assert emit_program(again) == emit_program(p)


def test_flags_survive_roundtrip():
    i = Instruction("str", ("lr", Mem("sp", index="ip")), flags=frozenset({Flag.SHADOW_STACK_STORE}))
    p = parse(("main", "push {r4, lr}\npop {r4, pc}"))
    f = p.functions[0]
    q = p.replace_functions([f.with_body([i] + list(f.body))])
    back = parse_program(emit_program(q))
    assert back.functions[0].instructions[0].flags == {Flag.SHADOW_STACK_STORE}


def test_data_directives_and_literals():
    src = program(("main", "ldr r0, =table\nldr r0, [r0, #4]\nbx lr")) + \
        "\t.data\ntable:\n\t.word 1, 2, 3\n"
    p = parse_program(src)
    assert p.data and p.data[0].name == "table"


def test_label_halfword_constant():
    assert LABEL_HALFWORD == 0x4600  # encoding of mov r0, r0
