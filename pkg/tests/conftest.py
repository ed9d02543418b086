import functools

import numpy as np
import pytest

from gimcodec import fixtures as F
from gimcodec.atlas import prepare_layout, split_charts
from gimcodec.codec import encode_gim, resample_albedo
from gimcodec.mesh import normalize_mesh


@functools.lru_cache(maxsize=None)
def corpus():
    return F.fixture_corpus()


@functools.lru_cache(maxsize=None)
def normalized(name):
    return normalize_mesh(corpus()[name])


@functools.lru_cache(maxsize=None)
def encoded(name, resolution=768, encoding="cylindrical"):
    """(mesh, norm, layout, gim, albedo) for a corpus fixture, cached per session."""
    m, norm = normalized(name)
    layout, cov = prepare_layout(m, split_charts(m), resolution)
    gim = encode_gim(m, layout, resolution, encoding, norm, cov)
    return m, norm, layout, gim, resample_albedo(m, layout, resolution, coverage=cov)


FIXTURE_NAMES = tuple(F.fixture_corpus())


@pytest.fixture(params=FIXTURE_NAMES)
def fixture_name(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
