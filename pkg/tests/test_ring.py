import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hurwitz_lab.errors import BothZero, DivisionByZero
from hurwitz_lab.ring import (
    R_SQ_UNIFORM_BOUND,
    SUPPORTED_D,
    QuadInt,
    QuadRat,
    canonical_associate,
    closed_domain_contains,
    divmod_nearest,
    field_config,
    gcd_steps,
    is_unit,
    parse_element,
    qnorm,
    quad_gcd,
    round_nearest,
    strict_domain_contains,
)

from conftest import random_int, random_rat

ints = st.integers(-10**6, 10**6)
fields = st.sampled_from(SUPPORTED_D)


def test_field_config_shapes(d):
    cfg = field_config(d)
    assert len(cfg.boundary_lines) == (4 if d in (1, 2) else 6)
    assert cfg.omega_kind == ("sqrt" if d % 4 != 3 else "half")
    assert cfg.R_sq < 1 and cfg.R_sq <= R_SQ_UNIFORM_BOUND
    assert math.isclose(cfg.area(), cfg.covolume)


def test_circumradius_values():
    got = {d: field_config(d).R_sq for d in SUPPORTED_D}
    assert got == {1: Fraction(1, 2), 2: Fraction(3, 4), 3: Fraction(1, 3), 7: Fraction(4, 7), 11: Fraction(9, 11)}
    for d in SUPPORTED_D:
        cfg = field_config(d)
        assert max(u * u + d * v * v for u, v in cfg.vertices_uv()) == cfg.R_sq


def test_unsupported_field():
    with pytest.raises(ValueError, match="1, 2, 3, 7, 11|\\{"):
        field_config(5)


def test_qnorm_examples():
    assert qnorm(QuadInt(0, 0, 1)) == 0
    assert qnorm(QuadInt(1, 1, 1)) == 2
    assert qnorm(QuadInt(0, 1, 3)) == 1


@settings(max_examples=300)
@given(fields, ints, ints, ints, ints)
def test_qnorm_multiplicative(d, a, b, c, e):
    x, y = QuadInt(a, b, d), QuadInt(c, e, d)
    assert qnorm(x * y) == qnorm(x) * qnorm(y)
    assert (qnorm(x) == 0) == (not x)


def test_qnorm_multiplicative_bulk():
    rng = random.Random(11)
    for _ in range(100_000):
        d = rng.choice(SUPPORTED_D)
        x, y = random_int(rng, d, 10**4), random_int(rng, d, 10**4)
        assert qnorm(x * y) == qnorm(x) * qnorm(y)


def test_strict_domain_examples():
    assert strict_domain_contains(QuadRat(0, 0, 1, 1), field_config(1))
    assert not strict_domain_contains(QuadRat(1, 0, 2, 1), field_config(1))
    assert strict_domain_contains(QuadRat(-1, 0, 2, 1), field_config(1))
    z3 = QuadRat.from_uv(0, Fraction(1, 3), 3)  # sqrt(-3)/3
    assert closed_domain_contains(z3, field_config(3))
    assert not strict_domain_contains(z3, field_config(3))


def test_corner_follows_set_difference():
    cfg = field_config(1)
    corner = parse_element("1/2-1/2i", 1)
    assert not strict_domain_contains(corner, cfg)
    assert round_nearest(corner, cfg) == QuadInt(1, 0, 1)
    assert strict_domain_contains(parse_element("-1/2-1/2i", 1), cfg)


def test_round_nearest_examples():
    cfg = field_config(1)
    assert round_nearest(parse_element("12/5+9/10i", 1), cfg) == QuadInt(2, 1, 1)
    assert round_nearest(QuadRat(7, 0, 2, 1), cfg) == QuadInt(4, 0, 1)
    for d in SUPPORTED_D:
        assert round_nearest(QuadRat(1, 1, 7, d), field_config(d)) == QuadInt(0, 0, d)


def _candidates(z, cfg):
    a0, b0 = z.x // z.D, z.y // z.D
    return [
        (a, b)
        for a in range(a0 - 2, a0 + 3)
        for b in range(b0 - 2, b0 + 3)
        if strict_domain_contains(z - QuadInt(a, b, cfg.d), cfg)
    ]


def test_tiling_uniqueness(d):
    cfg = field_config(d)
    rng = random.Random(d)
    for _ in range(10_000):
        z = random_rat(rng, d)
        assert len(_candidates(z, cfg)) == 1
        round_nearest(z, cfg)


def test_tiling_on_boundary_grid(d):
    cfg = field_config(d)
    for D in (2, 4, 6, 12, 4 * d, 2 * (d + 1)):
        for x in range(-2 * D, 2 * D + 1):
            for y in range(-2 * D, 2 * D + 1):
                assert len(_candidates(QuadRat(x, y, D, d), cfg)) == 1


@settings(max_examples=300)
@given(fields, st.integers(-500, 500), st.integers(-500, 500), st.integers(1, 300), ints, ints)
def test_translation_equivariance(d, x, y, D, a, b):
    cfg = field_config(d)
    z = QuadRat(x, y, D, d)
    beta = QuadInt(a, b, d)
    assert round_nearest(z + beta, cfg) == round_nearest(z, cfg) + beta


def test_divmod_examples():
    g = lambda a, b: QuadInt(a, b, 1)
    assert divmod_nearest(g(5, 0), g(2, 1)) == (g(2, -1), g(0, 0))
    assert divmod_nearest(g(7, 0), g(2, 0)) == (g(4, 0), g(-1, 0))
    q, b = g(3, -7), g(2, 5)
    assert divmod_nearest(q * b, b) == (q, g(0, 0))
    with pytest.raises(DivisionByZero):
        divmod_nearest(g(1, 0), g(0, 0))


def test_norm_descent(d):
    cfg = field_config(d)
    rng = random.Random(100 + d)
    for _ in range(5000):
        a, b = random_int(rng, d, 10**6), random_int(rng, d, 10**3)
        if not b:
            continue
        q, r = divmod_nearest(a, b)
        assert a == q * b + r
        assert qnorm(r) <= cfg.R_sq * qnorm(b)
        assert strict_domain_contains(QuadRat.from_fraction(r, b), cfg)


def test_gcd_examples():
    g = lambda a, b: QuadInt(a, b, 1)
    assert quad_gcd(g(5, 0), g(2, 1)) == canonical_associate(g(2, 1))
    assert quad_gcd(g(3, 0), g(2, 0)) == g(1, 0)
    assert quad_gcd(g(-4, 6), g(0, 0)) == canonical_associate(g(-4, 6))
    with pytest.raises(BothZero):
        quad_gcd(g(0, 0), g(0, 0))


def test_gcd_properties_and_step_bound(d):
    cfg = field_config(d)
    rng = random.Random(200 + d)
    for _ in range(2000):
        c = random_int(rng, d, 30)
        a, b = c * random_int(rng, d, 10**4), c * random_int(rng, d, 10**4)
        if not a and not b:
            continue
        g = quad_gcd(a, b)
        for x in (a, b):
            assert not divmod_nearest(x, g)[1]
        if c:
            assert not divmod_nearest(g, c)[1]
        assert g == canonical_associate(g)
        if b:
            bound = math.log(max(qnorm(b), 2)) / math.log(1 / cfg.R_sq) + 2
            assert gcd_steps(a, b) <= bound


def test_canonical_associate_unique(d):
    rng = random.Random(300 + d)
    cfg = field_config(d)
    for _ in range(500):
        a = random_int(rng, d)
        if not a:
            continue
        reps = {canonical_associate(a * u) for u in cfg.units()}
        assert len(reps) == 1
        assert is_unit(a) == (qnorm(a) == 1)


def test_quadrat_canonical_form(d):
    rng = random.Random(400 + d)
    for _ in range(500):
        z = random_rat(rng, d)
        k = rng.randint(1, 50)
        assert QuadRat(z.x * k, z.y * k, z.D * k, d) == z
        num, den = z.as_fraction()
        assert QuadRat.from_fraction(num, den) == z
        assert den == canonical_associate(den)
        assert quad_gcd(num, den) == QuadInt(1, 0, d) or not num


def test_parse_element():
    assert parse_element("2/5-1/5i", 1) == QuadRat(2, -1, 5, 1)
    assert parse_element("1/2+1/2w", 3) == QuadRat(1, 1, 2, 3)
    assert parse_element("s", 3) == QuadRat(-1, 2, 1, 3)
    with pytest.raises(ValueError):
        parse_element("1+i", 3)
    with pytest.raises(ValueError):
        parse_element("1+x", 1)
