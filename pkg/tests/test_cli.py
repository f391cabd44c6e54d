import shutil
import subprocess

import pytest

from thumbguard.cli import main

from conftest import program

SRC = program(("main", "push {r4, lr}\nmovs r0, #5\nstr r0, [r1]\npop {r4, pc}"))


@pytest.fixture
def src(tmp_path):
    path = tmp_path / "in.s"
    path.write_text(SRC)
    return path


def test_harden_writes_output(src, tmp_path, capsys):
    out = tmp_path / "out.s"
    assert main(["harden", str(src), "-o", str(out)]) == 0
    text = out.read_text()
    assert "strt r0, [r1]" in text and "@silhouette:ss-store" in text
    assert main(["scan", str(out)]) == 0
    assert capsys.readouterr().out.strip().endswith("VERDICT clean")


def test_harden_stdout_and_modes(src, capsys):
    for mode in ("silhouette", "invert", "sfi"):
        assert main(["harden", str(src), "--mode", mode]) == 0
        assert ".global main" in capsys.readouterr().out


def test_harden_refuses_unhardened_output(src, tmp_path, capsys):
    out = tmp_path / "out.s"
    assert main(["harden", str(src), "--no-store-harden", "-o", str(out)]) == 2
    err = capsys.readouterr().err
    assert "FIND error main" in err and not out.exists()
    assert main(["harden", str(src), "--no-store-harden", "--accept-risk", "-o", str(out)]) == 0
    assert out.exists()


def test_scan_findings_and_strict(src, capsys):
    assert main(["scan", str(src)]) == 2
    out = capsys.readouterr().out.splitlines()
    assert out[-1] == "VERDICT findings-present"
    assert any(ln.startswith("FIND error main") and ln.endswith("privileged-store(push)") for ln in out)
    assert main(["scan", str(src), "--mode", "invert"]) == 0
    assert main(["scan", str(src), "--accept-risk", "--strict"]) == 3


def test_simulate_file(src, capsys):
    assert main(["simulate", str(src), "--harden", "--args", "0", "0x20400000", "--counters",
                 "--observe", "0x20400000:4"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "EXIT r0=5"
    assert "SECURITY ok" in out
    assert "COUNTER privstore_app=0" in out
    assert out[-1] == "OBSERVE 0 05000000"


def test_simulate_benchmark(capsys):
    assert main(["simulate", "--benchmark", "fib_rec", "--harden", "--mode", "invert"]) == 0
    assert capsys.readouterr().out.startswith("EXIT r0=55")


def test_simulate_trace(src, capsys):
    main(["simulate", str(src), "--trace", "--args", "0", "0x20400000"])
    assert sum(ln.startswith("TRACE ") for ln in capsys.readouterr().out.splitlines()) == 4


def test_simulate_needs_input(capsys):
    assert main(["simulate"]) == 2


def test_attack_command(capsys):
    assert main(["attack", "--program", "fib_rec"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-1].startswith("SUMMARY") and out[-1].endswith("hijacks=0")
    assert all("control=hijack" in ln for ln in out[:-1])


def test_bench_command(capsys):
    assert main(["bench", "--program", "fib_rec", "--lines"]) == 0
    out = capsys.readouterr().out
    assert "METRIC fib_rec baseline" in out and "geomean" in out


def test_errors_map_to_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.s"
    bad.write_text(program(("main", "frob r0")))
    assert main(["harden", str(bad)]) == 2
    assert "bad.s:" in capsys.readouterr().err
    assert main(["simulate", "--benchmark", "missing"]) == 2
    assert main(["harden", str(tmp_path / "none.s")]) == 2


def test_layout_file(src, tmp_path, capsys):
    lay = tmp_path / "layout.cfg"
    lay.write_text("jmpbuf_capacity = 0x4\n")
    assert main(["harden", str(src), "--layout", str(lay)]) == 0
    lay.write_text("stack_size = 0x400000\n")
    assert main(["harden", str(src), "--layout", str(lay)]) == 2


@pytest.mark.skipif(shutil.which("thumbguard") is None, reason="console script not installed")
def test_console_script():
    res = subprocess.run(["thumbguard", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "kernel" in res.stdout
