import numpy as np
import pytest

from docvo.synth import default_intrinsics, make_plane_scene, make_sequence

ACCEPTANCE_LINES = []


def record(name: str, ok: bool, detail: str) -> None:
    """Print and remember one acceptance line, then assert it."""
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def K():
    return default_intrinsics()


@pytest.fixture(scope="session")
def small_sequence(K):
    """Three noise-free frames moving forward over a tilted plane."""
    scene = make_plane_scene(K, depth=5.0, tilt_deg=(20.0, 25.0), seed=3)
    return make_sequence(scene, [0.0, np.deg2rad(0.3), 0.0, 0.02, 0.0, 0.3], 3)
