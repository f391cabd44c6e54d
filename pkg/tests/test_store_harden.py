import pytest

from thumbguard.asm import Flag, parse_instruction
from thumbguard.layout import DEFAULT_LAYOUT
from thumbguard.passes import HardenMode, PassError, bic_masks, harden_program, shadow_stack_program
from thumbguard.passes.store_harden import harden_store

from conftest import parse

FREE = ("ip", "r3", "r2")


def finder(excluded):
    return next((r for r in FREE if r not in excluded), None)


def rewrite(text, mode=HardenMode.SILHOUETTE, find=finder):
    return [str(i).split(" @")[0] for i in harden_store(parse_instruction(text), DEFAULT_LAYOUT, find, mode)]


def added(text, mode=HardenMode.SILHOUETTE, find=finder):
    return len(rewrite(text, mode, find)) - 1


@pytest.mark.parametrize("text,expect", [
    ("str r0, [r1, #4]", "strt r0, [r1, #4]"),
    ("strb r0, [r1, #255]", "strbt r0, [r1, #255]"),
    ("strh r0, [r1]", "strht r0, [r1]"),
])
def test_rule_a_is_one_for_one(text, expect):
    assert rewrite(text) == [expect]


@pytest.mark.parametrize("text,expect", [
    ("str r0, [r1, #256]", ["add ip, r1, #0x100", "strt r0, [ip]"]),
    ("str r0, [r1, #-4]", ["sub ip, r1, #4", "strt r0, [ip]"]),
    ("str r0, [r1, r2, lsl #2]", ["add ip, r1, r2, lsl #2", "strt r0, [ip]"]),
    ("str r0, [r1, #0x12345]", ["movw ip, #0x2345", "movt ip, #1", "add ip, ip, r1", "strt r0, [ip]"]),
    ("str r0, [r1, #4]!", ["add r1, r1, #4", "strt r0, [r1]"]),
    ("str r0, [r1], #8", ["strt r0, [r1]", "add r1, r1, #8"]),
    ("strd r0, r1, [r2, #8]", ["strt r0, [r2, #8]", "strt r1, [r2, #12]"]),
    ("vstr s1, [r0]", ["vmov ip, s1", "strt ip, [r0]"]),
    ("vstr d1, [r0, #8]", ["vmov ip, r3, d1", "strt ip, [r0, #8]", "strt r3, [r0, #12]"]),
    ("push {r4, lr}", ["sub sp, sp, #8", "strt lr, [sp, #4]", "strt r4, [sp]"]),
    ("stm r0!, {r1, r2}", ["strt r2, [r0, #4]", "strt r1, [r0]", "add r0, r0, #8"]),
])
def test_rule_b_sequences(text, expect):
    assert rewrite(text) == expect


def test_writeback_of_own_base_rejected():
    with pytest.raises(PassError):
        rewrite("str r1, [r1, #4]!")


@pytest.mark.parametrize("text", ["str sp, [r0]", "push {r4, sp}", "str pc, [r0]"])
def test_sp_pc_stores_rejected(text):
    with pytest.raises(PassError):
        rewrite(text)


def test_spill_when_no_register_is_free():
    out = rewrite("str r0, [r1, #4096]", find=lambda excluded: None)
    assert out[:2] == ["sub sp, sp, #4", "strt r4, [sp]"]
    assert out[-1] == "ldr r4, [sp], #4"
    assert "strt r0, [r4]" in out


def test_spill_rebases_sp_offsets():
    out = rewrite("str r0, [sp, #4096]", find=lambda excluded: None)
    assert out[2:5] == ["movw r4, #0x1004", "add r4, r4, sp", "strt r0, [r4]"]


def test_strex_guard():
    m = bic_masks()
    out = rewrite("strex r2, r0, [r1]")
    assert out == [f"bic ip, r1, #{m.mask1:#x}", f"bic ip, ip, #{m.mask2:#x}", "strex r2, r0, [ip]"]


def test_invert_changes_only_shadow_store():
    p = shadow_stack_program(parse(("main", "push {r4, lr}\nstr r0, [r1]\npop {r4, pc}")))
    q = harden_program(p, HardenMode.INVERT)
    before = [str(i) for i in p.function("main").instructions]
    after = [str(i) for i in q.function("main").instructions]
    changed = [a for a in after if a not in before]
    assert changed == ["add ip, sp, ip @silhouette:ss", "strt lr, [ip] @silhouette:ss-store @silhouette:hardened"]


def test_sfi_guards_every_store():
    m = bic_masks()
    assert rewrite("str r0, [r1]", HardenMode.SFI) == [
        f"bic ip, r1, #{m.mask1:#x}", f"bic ip, ip, #{m.mask2:#x}", "str r0, [ip]"]
    assert rewrite("str r0, [sp, #8]", HardenMode.SFI)[0] == "add ip, sp, #8"


def test_bic_masks_clear_shadow_addresses():
    m = bic_masks()
    assert (m.mask1, m.mask2) == (0x200000, 0xC0000000)
    lay = DEFAULT_LAYOUT
    for addr in (lay.shadow_base, lay.shadow_base + 0x1234, lay.shadow_base + lay.shadow_size - 4,
                 0xE000ED94, 0x60200000):
        masked = m.apply(addr)
        assert not lay.in_shadow(masked)
    for addr in (lay.stack_base + 8, lay.heap_base + 0x100):
        assert m.apply(addr) == addr


def test_unmaskable_layout():
    with pytest.raises(PassError):
        bic_masks(DEFAULT_LAYOUT.with_values(stack_size=0x180000))


def test_shadow_store_is_kept_in_silhouette():
    p = shadow_stack_program(parse(("main", "push {r4, lr}\npop {r4, pc}")))
    q = harden_program(p)
    ss = [i for i in q.function("main").instructions if Flag.SHADOW_STACK_STORE in i.flags]
    assert [str(i) for i in ss] == ["str lr, [sp, ip] @silhouette:ss-store"]


def test_exempt_functions_keep_privileged_stores():
    p = parse(("h", "str r1, [r0]\nbx lr"), ("main", "bx lr"), directives="\t.silhouette_exempt h\n")
    assert harden_program(p).function("h") == p.function("h")


def test_store_inside_it_block():
    p = harden_program(parse(("main", "cmp r0, #0\nit eq\nstreq r1, [r2, #512]\nbx lr")))
    text = [str(i) for i in p.function("main").instructions]
    assert text[1] == "itt eq"
    assert text[2:4] == ["addeq ip, r2, #0x200 @silhouette:hardened", "strteq r1, [ip] @silhouette:hardened"]


# counts on transformation outputs ------------------------------------------------

RULE_A = ["str r0, [r1]", "str r0, [r1, #252]", "strb r2, [r3, #7]", "strh r4, [r5, #254]",
          "strd r0, r1, [r2]"]
LARGE = ["str r0, [r1, #256]", "str r0, [r1, #4095]", "str r0, [r1, #0x12345]",
         "strb r0, [r1, #-200]", "strh r0, [r1, #0xFFFFF]"]


@pytest.mark.parametrize("text", RULE_A[:4])
def test_rule_a_adds_zero(text):
    assert added(text) == 0


@pytest.mark.parametrize("text", LARGE)
def test_large_offset_adds_at_most_three(text):
    assert 1 <= added(text) <= 3


def test_double_fp_store_count():
    # with two free scratch registers a double store becomes vmov plus two strt
    assert added("vstr d8, [sp]") == 2
    # out of range for the second word and short of registers: both halves get
    # their own address register and one of them is spilled
    out = rewrite("vstr d8, [r0, #1020]")
    assert out == ["sub sp, sp, #4", "strt r4, [sp]", "vmov ip, r3, d8", "add r2, r0, #0x3fc",
                   "strt ip, [r2]", "add r4, r0, #0x400", "strt r3, [r4]", "ldr r4, [sp], #4"]
