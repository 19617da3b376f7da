import random
from fractions import Fraction

import pytest

from hurwitz_lab.ring import SUPPORTED_D, QuadInt, QuadRat, field_config


def random_rat(rng: random.Random, d: int, den_max: int = 60, span: int = 3) -> QuadRat:
    D = rng.randint(1, den_max)
    return QuadRat(rng.randint(-span * D, span * D), rng.randint(-span * D, span * D), D, d)


def random_int(rng: random.Random, d: int, r: int = 40) -> QuadInt:
    return QuadInt(rng.randint(-r, r), rng.randint(-r, r), d)


def random_point_of_I(rng: random.Random, d: int, den_max: int = 400) -> QuadRat:
    """A random rational of the closed cell I_d (rejection from its bounding box)."""
    from hurwitz_lab.ring import closed_domain_contains

    cfg = field_config(d)
    vs = cfg.vertices_uv()
    umax = max(u for u, _ in vs)
    vmax = max(v for _, v in vs)
    while True:
        D = rng.randint(1, den_max)
        u = Fraction(rng.randint(-D, D), D) * umax
        v = Fraction(rng.randint(-D, D), D) * vmax
        z = QuadRat.from_uv(u, v, d)
        if closed_domain_contains(z, cfg):
            return z


@pytest.fixture(params=SUPPORTED_D)
def d(request):
    return request.param


_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Criterion number -> one-line verdict, echoed in the terminal summary."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[k])
