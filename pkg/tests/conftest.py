import pytest

from thumbguard.asm import parse_program
from thumbguard.harness.corpus import load_corpus

HEADER = "\t.syntax unified\n\t.thumb\n\t.text\n\t.global main\n"


def function(name: str, body: str) -> str:
    lines = "\n".join("\t" + ln.strip() if ln.strip() and not ln.strip().endswith(":") else ln.strip()
                      for ln in body.strip().splitlines())
    return f"\t.type {name}, %function\n{name}:\n{lines}\n\t.size {name}, .-{name}\n"


def program(*funcs, directives: str = "") -> str:
    """Assemble ``(name, body)`` pairs into a source file."""
    return HEADER + directives + "".join(function(n, b) for n, b in funcs)


def parse(*funcs, directives: str = ""):
    return parse_program(program(*funcs, directives=directives))


@pytest.fixture(scope="session")
def corpus():
    return load_corpus()
