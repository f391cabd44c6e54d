import pytest

from thumbguard.asm import Flag, parse_instruction
from thumbguard.asm.syntax import emit_function
from thumbguard.layout import DEFAULT_LAYOUT
from thumbguard.passes import PassError, shadow_stack_program
from thumbguard.passes.shadow_stack import check_constant_frame, check_i1, rewrite_epilogue

from conftest import parse


def body(p, name="main"):
    return [str(i) for i in p.function(name).instructions]


def test_push_pop_recipe():
    p = shadow_stack_program(parse(("main", "push {r4, lr}\nmovs r0, #1\npop {r4, pc}")))
    # lr is the second pushed word, at sp + 4; its copy lives at sp + 4 + offset
    assert body(p) == [
        "push {r4, lr}",
        "movw ip, #4 @silhouette:ss",
        "movt ip, #32 @silhouette:ss",
        "str lr, [sp, ip] @silhouette:ss-store",
        "movs r0, #1",
        "pop {r4}",
        "mov ip, #0x200000 @silhouette:ss-load",
        "ldr lr, [sp, ip] @silhouette:ss-load",
        "add sp, sp, #4 @silhouette:ss-load",
        "bx lr @silhouette:ss-load",
    ]


def test_lr_only_push_uses_single_mov():
    p = shadow_stack_program(parse(("main", "push {lr}\npop {pc}")))
    assert body(p)[1] == "mov ip, #0x200000 @silhouette:ss"


def test_leaf_function_untouched():
    src = parse(("main", "adds r0, r0, #1\nbx lr"))
    assert shadow_stack_program(src) == src


def test_exempt_function_untouched():
    p = parse(("h", "push {lr}\npop {pc}"), ("main", "bx lr"), directives="\t.silhouette_exempt h\n")
    assert shadow_stack_program(p).function("h") == p.function("h")


def test_conditional_epilogue_in_it_block():
    p = shadow_stack_program(parse(("main", """
        push {r4, lr}
        cmp r0, #0
        it eq
        popeq {r4, pc}
        movs r0, #2
        pop {r4, pc}
    """)))
    text = body(p)
    k = text.index("popeq {r4}")
    # five conditional instructions do not fit one IT block
    assert text[k - 1:k + 6] == [
        "itttt eq",
        "popeq {r4}",
        "moveq ip, #0x200000 @silhouette:ss-load",
        "ldreq lr, [sp, ip] @silhouette:ss-load",
        "addeq sp, sp, #4 @silhouette:ss-load",
        "it eq",
        "bxeq lr @silhouette:ss-load",
    ]
    assert check_i1(p.function("main"))


def test_setjmp_caller_expires_map():
    p = shadow_stack_program(parse(("main", "push {r4, lr}\nbl setjmp\npop {r4, pc}"),
                                   directives="\t.global setjmp\n"))
    text = body(p)
    assert "bl __sjmap_expire @silhouette:sj-expire" in text
    assert text.index("bl __sjmap_expire @silhouette:sj-expire") < text.index("ldr lr, [sp, ip] @silhouette:ss-load")
    assert "__sjmap_expire" in p.externals


def test_str_lr_prologue():
    p = shadow_stack_program(parse(("main", "str lr, [sp, #-4]!\nldr pc, [sp], #4")))
    assert body(p)[1:3] == ["mov ip, #0x200000 @silhouette:ss", "str lr, [sp, ip] @silhouette:ss-store"]
    assert body(p)[-1] == "bx lr @silhouette:ss-load"


@pytest.mark.parametrize("code", [
    "push {r4, lr}\nsub sp, sp, r1\npop {r4, pc}",
    "push {r4, lr}\nmov sp, r4\npop {r4, pc}",
    "push {r4, lr}\nldr sp, [r0]\npop {r4, pc}",
])
def test_dynamic_frames_rejected(code):
    with pytest.raises(PassError, match="dynamic stack allocation"):
        check_constant_frame(parse(("main", code)).function("main"))


def test_unrecognized_epilogue_needs_review():
    with pytest.raises(PassError, match="manual review"):
        rewrite_epilogue(parse_instruction("ldr pc, [sp, #8]"), DEFAULT_LAYOUT)
    with pytest.raises(PassError):
        shadow_stack_program(parse(("main", "push {r4, lr}\npop {r4, lr, pc}")))


def test_i1_holds_on_corpus(corpus):
    for b in corpus:
        p = shadow_stack_program(b.program())
        for f in p.functions:
            assert check_i1(f), (b.name, f.name)


def test_idempotent():
    p = shadow_stack_program(parse(("main", "push {r4, lr}\npop {r4, pc}")))
    assert shadow_stack_program(p) == p


def test_flags_mark_only_inserted_code():
    p = shadow_stack_program(parse(("main", "push {r4, lr}\nmovs r0, #1\npop {r4, pc}")))
    f = p.function("main")
    flagged = [i for i in f.instructions if i.flags]
    assert sum(Flag.SHADOW_STACK_STORE in i.flags for i in flagged) == 1
    assert all(not i.flags for i in f.instructions if str(i) in ("push {r4, lr}", "movs r0, #1"))


def test_emit_keeps_annotations():
    p = shadow_stack_program(parse(("main", "push {r4, lr}\npop {r4, pc}")))
    assert any("@silhouette:ss-store" in ln for ln in emit_function(p.function("main")))
