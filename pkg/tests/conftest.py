import math
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from asymseg.errors import AnnotationError
from asymseg.geometry import AspectAnnotation, validate_annotation

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

REF_MAJOR = ((16.0, 32.0), (48.0, 32.0))
REF_MINOR = ((32.0, 24.0), (32.0, 40.0))


@pytest.fixture
def ref_ann():
    return AspectAnnotation(REF_MAJOR, REF_MINOR)


def random_annotation(rng: np.random.Generator, height: int, width: int, perpendicular: bool = False):
    """Valid annotation with all endpoints inside the grid."""
    while True:
        big = rng.uniform(4, 0.8 * min(height, width))
        small = rng.uniform(2, big)
        th = rng.uniform(0, 2 * math.pi)
        off = 0.0 if perpendicular else rng.uniform(-15, 15)
        u = np.array([math.cos(th), math.sin(th)])
        ph = th + math.pi / 2 + math.radians(off)
        v = np.array([math.cos(ph), math.sin(ph)])
        c = rng.uniform([0.2 * width, 0.2 * height], [0.8 * width, 0.8 * height])
        a, b = rng.uniform(0, 1, size=2)
        major = (c - a * big * u, c + (1 - a) * big * u)
        minor = (c - b * small * v, c + (1 - b) * small * v)
        pts = np.array(major + minor)
        if pts.min() < 0 or np.any(pts[:, 0] > width) or np.any(pts[:, 1] > height):
            continue
        try:
            return validate_annotation(AspectAnnotation(major, minor))
        except AnnotationError:
            continue


@st.composite
def annotations(draw, size=64, perpendicular=False):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_annotation(np.random.default_rng(seed), size, size, perpendicular)


def quiet(fn, *args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fn(*args, **kwargs)


VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(n: int, ok: bool, detail: str):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        VERDICTS[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
