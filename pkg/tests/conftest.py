import hypothesis
import numpy as np
import pytest

from posekit import geometry as geo

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cam():
    return geo.DEFAULT_CAMERA


@pytest.fixture
def square_cam():
    # square pixels with the principal point at the image center
    return geo.CameraModel(500.0, 500.0, 320.0, 240.0, 0.4, 1.2)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Call with (ok, detail); prints and collects one PASS/FAIL line, then asserts."""

    def report(ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  {request.node.name}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert ok, detail

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
