import sys
from pathlib import Path

import pytest
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from yeastdet.core import Annotation, BBoxPx, ImageMeta, to_norm  # noqa: E402


@st.composite
def px_boxes(draw, width=1344, height=1024, min_size=1.0):
    x0 = draw(st.floats(0, width - min_size, allow_nan=False))
    y0 = draw(st.floats(0, height - min_size, allow_nan=False))
    x1 = draw(st.floats(x0 + min_size, width, allow_nan=False))
    y1 = draw(st.floats(y0 + min_size, height, allow_nan=False))
    return BBoxPx(x0, y0, x1, y1)


@st.composite
def annotations(draw, width=1344, height=1024, n_classes=4):
    box = draw(px_boxes(width, height))
    return Annotation(draw(st.integers(0, n_classes - 1)), to_norm(box, ImageMeta(width, height)))


@pytest.fixture
def full_meta():
    return ImageMeta(1344, 1024)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
