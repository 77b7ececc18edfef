import numpy as np
import pytest

from posevinet.vit import ViTConfig


@pytest.fixture
def tiny_config():
    return ViTConfig(image_size=16, patch_height=4, patch_width=4, embed_dim=8,
                     num_heads=2, depth=1, num_classes=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or report.failed:
        ok = report.passed and _CRITERIA.get(name, True)
        _CRITERIA[name] = ok


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        number, _, title = name[len("test_criterion_"):].partition("_")
        verdict = "PASS" if _CRITERIA[name] else "FAIL"
        terminalreporter.write_line(f"criterion {int(number):2d} {title.replace('_', ' ')}: {verdict}")
