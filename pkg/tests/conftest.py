from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from humansynth import body_model as bm
from humansynth.scene import load_scene

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def toy_model():
    return bm.load_model(FIXTURES / "toy_body.npz")


@pytest.fixture(scope="session")
def room():
    return load_scene(FIXTURES / "room.obj")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def two_joint_cylinder(rings=5, segments=6, length=1.0, radius=0.1):
    """Vertical cylinder from y=0 to y=length, joint 0 at the base, joint 1 at
    mid height. Weights switch hard from joint 0 to joint 1 above mid height."""
    verts, weights = [], []
    for r in range(rings):
        y = length * r / (rings - 1)
        for s in range(segments):
            a = 2 * np.pi * s / segments
            verts.append((radius * np.cos(a), y, radius * np.sin(a)))
            weights.append((1.0, 0.0) if y <= length / 2 else (0.0, 1.0))
    verts = np.array(verts)
    faces = []
    for r in range(rings - 1):
        for s in range(segments):
            a = r * segments + s
            b = r * segments + (s + 1) % segments
            faces += [(a, a + segments, b), (b, a + segments, b + segments)]
    reg = np.zeros((2, len(verts)))
    reg[0, :segments] = 1.0 / segments                    # base ring centroid
    mid = (rings // 2) * segments
    reg[1, mid:mid + segments] = 1.0 / segments           # middle ring centroid
    return bm.make_model(verts, faces, np.zeros((1, len(verts), 3)), np.zeros((0, len(verts), 3)),
                         reg, [-1, 0], np.array(weights), ["pelvis", "spine"])


# --- acceptance reporting --------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        state = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        prev = _CRITERIA.get(number, (title, "PASS"))[1]
        # a criterion spread over several tests fails if any part fails
        if prev == "FAIL" or state == "FAIL":
            state = "FAIL"
        elif prev == "SKIP":
            state = "SKIP"
        _CRITERIA[number] = (title, state)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, state = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {state}  {title}")
