import functools

import numpy as np
import pytest

from css_inventory.simulator import generate_recording

# The evaluation panel: ten 2-speaker, 60 s recordings at 30% overlap.
PANEL_SEEDS = tuple(range(10))


@functools.lru_cache(maxsize=None)
def panel_recording(seed: int):
    return generate_recording(2, 60.0, 0.30, seed)


@pytest.fixture(scope="session")
def panel():
    return [panel_recording(s) for s in PANEL_SEEDS]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def oracle_runs(panel):
    """Oracle-mask CSS with M=2 on every panel recording."""
    from css_inventory.pipeline import CssConfig, run_css

    return [run_css(rec.mixture, CssConfig(M=2, seed=s, backend="oracle"), truth=rec)
            for s, rec in zip(PANEL_SEEDS, panel)]


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
