import itertools

import pytest

from thumbguard.layout import DEFAULT_LAYOUT
from thumbguard.passes import HardenMode
from thumbguard.sim.mpu import (
    MpuConfig, MpuConfigError, MpuRegion, build_layout_config, check_access,
)

# AP -> (privileged, unprivileged) as read/write/execute letters, written out by hand
# from the architecture's AP encoding.  0b100 is the inverted shadow-stack permission.
TRUTH = {
    0b000: ("---", "---"),
    0b001: ("rwx", "---"),
    0b010: ("rwx", "r-x"),
    0b011: ("rwx", "rwx"),
    0b100: ("r-x", "rwx"),
    0b101: ("r-x", "---"),
    0b110: ("r-x", "r-x"),
    0b111: ("r-x", "r-x"),
}
KINDS = {"read": 0, "write": 1, "execute": 2}
BASE, SIZE = 0x10000, 0x1000


def config(ap, xn=False, background=True):
    return MpuConfig((MpuRegion(0, BASE, SIZE, ap, xn=xn),), background=background)


@pytest.mark.parametrize("ap,kind,view", list(itertools.product(TRUTH, KINDS, ("privileged", "unprivileged"))))
def test_truth_table(ap, kind, view):
    expect = TRUTH[ap][view == "unprivileged"][KINDS[kind]] != "-"
    assert check_access(config(ap), BASE + 0x10, 4, kind, view) is expect


@pytest.mark.parametrize("ap", list(TRUTH))
def test_execute_never(ap):
    cfg = config(ap, xn=True)
    for view in ("privileged", "unprivileged"):
        assert not check_access(cfg, BASE, 2, "execute", view)


@pytest.mark.parametrize("kind", list(KINDS))
def test_background_region(kind):
    outside = 0x30000000
    # privileged accesses fall through to the default map; unprivileged ones never do
    assert check_access(config(0b011), outside, 4, kind, "privileged")
    assert not check_access(config(0b011), outside, 4, kind, "unprivileged")
    assert not check_access(config(0b011, background=False), outside, 4, kind, "privileged")


def test_background_device_space_never_executes():
    assert check_access(config(0b011), 0xE000E010, 4, "read", "privileged")
    assert not check_access(config(0b011), 0xE000E010, 2, "execute", "privileged")
    assert not check_access(config(0b011), 0x40000000, 2, "execute", "privileged")


def test_access_straddling_region_edge_is_denied():
    assert not check_access(config(0b011), BASE + SIZE - 2, 4, "read", "privileged")
    assert not check_access(config(0b011), BASE - 2, 4, "write", "unprivileged")


def test_higher_region_number_wins():
    cfg = MpuConfig((MpuRegion(0, 0, 0x100000, 0b011), MpuRegion(5, BASE, SIZE, 0b110)))
    assert not check_access(cfg, BASE, 4, "write", "privileged")
    assert check_access(cfg, BASE - 4, 4, "write", "unprivileged")


def test_disabled_mpu_allows_everything_but_xn_space():
    cfg = MpuConfig((), enabled=False)
    assert check_access(cfg, 0x30000000, 4, "write", "unprivileged")
    assert not check_access(cfg, 0xE0000000, 2, "execute", "privileged")


@pytest.mark.parametrize("kw", [
    dict(number=8, base=0, size=32, ap=3),
    dict(number=0, base=0, size=48, ap=3),
    dict(number=0, base=0, size=16, ap=3),
    dict(number=0, base=0x20, size=0x40, ap=3),
    dict(number=0, base=0, size=32, ap=9),
])
def test_region_validation(kw):
    with pytest.raises(MpuConfigError):
        MpuRegion(**kw)


def test_duplicate_region_numbers():
    with pytest.raises(MpuConfigError):
        MpuConfig((MpuRegion(1, 0, 32, 3), MpuRegion(1, 64, 32, 3)))


def test_layout_config_silhouette():
    lay = DEFAULT_LAYOUT
    cfg = build_layout_config(lay, HardenMode.SILHOUETTE)
    shadow, stack, heap = lay.shadow_base + 0x100, lay.stack_base + 0x100, lay.heap_base + 0x100
    assert check_access(cfg, shadow, 4, "write", "privileged")
    assert not check_access(cfg, shadow, 4, "write", "unprivileged")
    assert check_access(cfg, shadow, 4, "read", "unprivileged")
    for addr in (stack, heap):
        assert check_access(cfg, addr, 4, "write", "unprivileged")
        assert not check_access(cfg, addr, 2, "execute", "privileged")
    assert check_access(cfg, lay.code_base, 2, "execute", "unprivileged")
    assert not check_access(cfg, lay.code_base, 4, "write", "privileged")
    assert not check_access(cfg, 0xE000ED94, 4, "write", "unprivileged")
    assert check_access(cfg, 0xE000ED94, 4, "write", "privileged")


def test_layout_config_invert():
    lay = DEFAULT_LAYOUT
    cfg = build_layout_config(lay, HardenMode.INVERT)
    shadow, stack = lay.shadow_base + 0x100, lay.stack_base + 0x100
    assert not check_access(cfg, shadow, 4, "write", "privileged")
    assert check_access(cfg, shadow, 4, "write", "unprivileged")
    assert check_access(cfg, stack, 4, "write", "privileged")
    assert not check_access(cfg, stack, 4, "write", "unprivileged")


def test_layout_regions_are_valid_for_both_modes():
    for mode in HardenMode:
        cfg = build_layout_config(DEFAULT_LAYOUT, mode)
        assert len(cfg.regions) == 5
