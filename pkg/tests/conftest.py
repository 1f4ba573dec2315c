import zlib

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def wishart(rng, d, scale=0.2, dof=None):
    G = rng.standard_normal((d, dof or d))
    return scale * G @ G.T


def random_pd(rng, d, floor=0.1):
    """Well-conditioned random SPD matrix."""
    G = rng.standard_normal((d, d))
    return G @ G.T / d + floor * np.eye(d)


def random_sym(rng, d):
    G = rng.standard_normal((d, d))
    return 0.5 * (G + G.T)


def singular_psd(rng, d, rank=None):
    G = rng.standard_normal((d, rank if rank is not None else d - 1))
    return G @ G.T


@pytest.fixture
def rng(request):
    # one stream per test, independent of collection order
    seed = zlib.crc32(request.node.name.encode())
    return np.random.default_rng(seed)


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def report(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        request.config.stash[_VERDICTS].append(line)
        print(line)
        assert ok, line
    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
