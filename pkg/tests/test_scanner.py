import pytest

from thumbguard.asm import emit_program
from thumbguard.passes import HardenMode, harden_program, shadow_stack_program
from thumbguard.scanner import ERROR, NOTE, ScanPolicy, scan_privileged

from conftest import parse

SIL, INV, SFI = HardenMode.SILHOUETTE, HardenMode.INVERT, HardenMode.SFI


def kinds(p, mode=SIL, hfnmiena=1):
    return [(f.kind, f.severity) for f in scan_privileged(p, ScanPolicy(mode, hfnmiena)).findings]


def one(body, exempt=False, mode=SIL, hfnmiena=1):
    d = "\t.silhouette_exempt main\n" if exempt else ""
    return kinds(parse(("main", body), directives=d), mode, hfnmiena)


@pytest.mark.parametrize("body,expect", [
    ("str r0, [r1]\nbx lr", [("privileged-store(str)", ERROR)]),
    ("strt r0, [r1]\nbx lr", []),
    ("push {r4, lr}\npop {r4, pc}", [("privileged-store(push)", ERROR)]),
    ("vstr d0, [r0]\nbx lr", [("privileged-store(vstr)", ERROR)]),
    ("msr basepri, r0\nbx lr", [("MSR", ERROR)]),
    ("mrs r0, primask\nbx lr", [("MRS", NOTE)]),
    ("svc #0\nbx lr", [("SVC", NOTE)]),
    ("cpsid i\nbx lr", [("CPS", NOTE)]),
    ("strex r2, r0, [r1]\nbx lr", [("unguarded-strex", ERROR)]),
])
def test_silhouette_findings(body, expect):
    assert one(body) == expect


def test_cps_is_an_error_without_hfnmiena():
    assert one("cpsid i\nbx lr", hfnmiena=0) == [("CPS", ERROR)]
    assert one("cpsid i\nbx lr", exempt=True, hfnmiena=0) == [("CPS", NOTE)]


def test_exempt_functions_only_produce_notes():
    assert one("str r0, [r1]\nmsr basepri, r0\nstrex r2, r0, [r1]\nbx lr", exempt=True) == [("MSR", NOTE)]


def test_invert_allows_privileged_stores():
    assert one("str r0, [r1]\npush {r4, lr}\nstrex r2, r0, [r1]\npop {r4, pc}", mode=INV) == []


def test_sfi_requires_guards():
    assert one("str r0, [r1]\nbx lr", mode=SFI) == [("unguarded-store(str)", ERROR)]
    assert one("str r0, [r1, #4]\nbx lr", mode=SFI) == [("unguarded-store(str)", ERROR)]
    guarded = "bic ip, r1, #0x200000\nbic ip, ip, #0xC0000000\nstr r0, [ip]\nbx lr"
    assert one(guarded, mode=SFI) == []
    # one mask is not enough
    assert one("bic ip, r1, #0x200000\nbic ip, ip, #0x200000\nstr r0, [ip]\nbx lr", mode=SFI) != []


def test_guard_predicated_differently_does_not_count():
    body = ("cmp r0, #0\nite eq\nbiceq ip, r1, #0x200000\nbicne ip, ip, #0xC0000000\n"
            "str r0, [ip]\nbx lr")
    assert one(body, mode=SFI) == [("unguarded-store(str)", ERROR)]


def test_guard_across_it_header_counts():
    body = ("bic ip, r1, #0x200000\nbic ip, ip, #0xC0000000\nit eq\nstreq r0, [ip]\nbx lr")
    assert one(body, mode=SFI) != []   # guard conditions differ from the store's
    body = ("cmp r0, #0\nittt eq\nbiceq ip, r1, #0x200000\nbiceq ip, ip, #0xC0000000\n"
            "streq r0, [ip]\nbx lr")
    assert one(body, mode=SFI) == []


def test_strex_guard_recognized():
    body = "bic ip, r1, #0x200000\nbic ip, ip, #0xC0000000\nstrex r2, r0, [ip]\nbx lr"
    assert one(body) == []


def test_hardened_output_is_clean():
    p = parse(("main", "push {r4, lr}\nstr r0, [r1, #4096]\nstrex r2, r0, [r1]\nvstr d0, [r1]\npop {r4, pc}"))
    for mode in (SIL, INV, SFI):
        out = harden_program(shadow_stack_program(p), mode)
        assert scan_privileged(out, ScanPolicy(mode)).clean, mode


def test_shadow_store_is_not_a_finding():
    p = harden_program(shadow_stack_program(parse(("main", "push {r4, lr}\npop {r4, pc}"))))
    assert kinds(p) == []


def test_line_numbers_point_at_emitted_text():
    p = parse(("main", "movs r0, #1\nstr r0, [r1]\nbx lr"))
    f = scan_privileged(p).findings[0]
    assert emit_program(p).splitlines()[f.line - 1].strip() == "str r0, [r1]"
    assert f.machine() == f"FIND error main {f.line} privileged-store(str)"


@pytest.mark.parametrize("body,strict,accept,code", [
    ("bx lr", False, False, 0),
    ("bx lr", True, False, 0),
    ("mrs r0, primask\nbx lr", False, False, 0),
    ("mrs r0, primask\nbx lr", True, False, 3),
    ("str r0, [r1]\nbx lr", False, False, 2),
    ("str r0, [r1]\nbx lr", False, True, 0),
    ("str r0, [r1]\nbx lr", True, True, 3),
])
def test_exit_codes(body, strict, accept, code):
    report = scan_privileged(parse(("main", body)))
    assert report.exit_code(strict, accept) == code


def test_verdict():
    assert scan_privileged(parse(("main", "bx lr"))).verdict == "clean"
    assert scan_privileged(parse(("main", "str r0, [r1]\nbx lr"))).verdict == "findings-present"
