import pytest

from dagbab.core import Block, Vertex, VertexRef


def vx(s, r, strong, weak=(), seq=None, txs=()):
    """Vertex from (source, round) pairs."""
    return Vertex(r, s, Block(s, r if seq is None else seq, tuple(txs)),
                  frozenset(VertexRef(a, b) for a, b in strong),
                  frozenset(VertexRef(a, b) for a, b in weak))


class FixedCoin:
    """Coin stub with fixed leaders, revealed immediately."""

    def __init__(self, leaders):
        self.leaders = dict(leaders)

    def choose_leader(self, caller, w):
        return self.leaders.get(w)

    def adversary_peek(self, w):
        return self.leaders.get(w)


@pytest.fixture
def make_vertex():
    return vx


# Acceptance criteria append "CRITERION k: PASS|FAIL ..." lines here; they are
# printed at the end of the run so they show up without ``-s``.
CRITERIA_LINES: list[str] = []


def report_criterion(number, passed, detail):
    line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} {detail}"
    CRITERIA_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
