import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from facebmi.facepipe import load_detector
from facebmi.synth import make_synthetic_dataset

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def detector():
    return load_detector("synthetic")


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory):
    """40 rendered portraits plus 2 blank images, written to disk with a manifest."""
    root = tmp_path_factory.mktemp("synthetic")
    manifest, samples, boxes = make_synthetic_dataset(root, 40, seed=11, n_blank=2)
    return manifest, samples, boxes


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; it is printed now and again in the terminal summary."""

    def record(number: int, ok: bool | None, detail: str) -> bool | None:
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"criterion {number:>2}: {status}  {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split(":")[0].split()[-1])):
            terminalreporter.write_line(line)
