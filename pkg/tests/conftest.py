from fractions import Fraction

import pytest

from vitas_kit.space import parse_space_spec


def harmonic(n: int) -> Fraction:
    return sum((Fraction(1, k) for k in range(1, n + 1)), Fraction(0))


def toy_space_text(layers: int = 2, ops: str = "local", heads: str = "2", attn: str = "1/2, 1",
                   mlp: str = "1/2, 1", embed_ratios: str = "1", patches: str = "4") -> str:
    return f"""
name = toy
family = twins
[stage]
embed_patch = {patches}
embed_max_dim = 64
embed_ratios = {embed_ratios}
layers = {layers}
ops = {ops}
heads = {heads}
max_attn_dim = 96
max_mlp_dim = 128
attn_ratios = {attn}
mlp_ratios = {mlp}
"""


def toy_space(**kw):
    return parse_space_spec(toy_space_text(**kw))


@pytest.fixture
def small_space():
    return toy_space()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
