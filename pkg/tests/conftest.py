import numpy as np
import pytest

from obstacle_flow.grid import assemble_biharmonic, assemble_laplacian, build_grid
from obstacle_flow.obstacles import obstacles_from_interior


@pytest.fixture
def line3():
    grid = build_grid(1, 1.0, 3)
    L = assemble_laplacian(grid)
    return grid, L, assemble_biharmonic(grid, L)


def far_pair(grid, B, bound=1e6):
    return obstacles_from_interior(grid, np.full(grid.size, -bound), np.full(grid.size, bound), B)


# acceptance criteria outcomes, printed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


def report(number: int, title: str, ok: bool, detail: str) -> str:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
