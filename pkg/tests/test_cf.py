import json
import math
import random

import numpy as np
import pytest

from hurwitz_lab.cf import (
    CostFunction,
    HurwitzCostTransformer,
    birkhoff_log_jacobian,
    cf_step,
    convergents_reversed_identity,
    cost_total,
    det,
    empty_digit_scan,
    evaluate_digits,
    expand,
    expansions_json,
    gauss_map_float,
    in_image_of_cylinder,
    orbit_cost_float,
    round_nearest_float,
    sample_branch_distortion,
    translate_covered_by_inversion_disks,
)
from hurwitz_lab.errors import OutOfDomain, ZeroInput
from hurwitz_lab.ring import (
    R_SQ_UNIFORM_BOUND,
    SUPPORTED_D,
    QuadInt,
    QuadRat,
    field_config,
    parse_element,
    qnorm,
    round_nearest,
    strict_domain_contains,
)

from conftest import random_point_of_I

TABLE_1 = {
    1: {(1, 0), (-1, 0), (0, 1), (0, -1)},
    2: {(1, 0), (-1, 0)},
    3: {(1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)},
    7: {(1, 0), (-1, 0)},
    11: {(1, 0), (-1, 0)},
}


def test_cf_step_examples():
    z = parse_element("2/5-1/5i", 1)
    assert cf_step(z) == (QuadInt(2, 1, 1), QuadRat(0, 0, 1, 1))
    assert cf_step(QuadRat(1, 0, 2, 1)) == (QuadInt(2, 0, 1), QuadRat(0, 0, 1, 1))
    # 2/(3 + sqrt(-3)): 1/z = (3 + sqrt(-3))/2 = 1 + w
    z3 = QuadRat.from_fraction(QuadInt(2, 0, 3), QuadInt(2, 2, 3))
    assert cf_step(z3) == (QuadInt(1, 1, 3), QuadRat(0, 0, 1, 3))


def test_cf_step_errors():
    with pytest.raises(ZeroInput):
        cf_step(QuadRat(0, 0, 1, 1))
    with pytest.raises(OutOfDomain):
        cf_step(QuadRat(3, 0, 4, 1))
    with pytest.raises(OutOfDomain):
        expand(QuadRat(1, 0, 1, 2))


def test_expand_examples():
    e0 = expand(QuadRat(0, 0, 1, 1))
    assert e0.digits == [] and e0.length == 0 and e0.cost(CostFunction.length()) == 0
    e = expand(parse_element("2/5-1/5i", 1))
    assert e.digits == [QuadInt(2, 1, 1)] and e.length == 1
    z = parse_element("3/7+1/7i", 1)
    e = expand(z)
    assert e.reconstruct() == z
    cur = z
    for a in e.digits:
        step_a, cur = cf_step(cur)
        assert step_a == a
    assert not cur
    assert convergents_reversed_identity(e.digits)


def test_cost_examples():
    e = expand(parse_element("2/5-1/5i", 1))
    assert math.isclose(cost_total(e, CostFunction.log_abs()), 0.5 * math.log(5))
    assert cost_total(expand(QuadRat(0, 0, 1, 1)), CostFunction.log_abs()) == 0
    rng = random.Random(1)
    while True:
        z = random_point_of_I(rng, 1, 10**6)
        e = expand(z)
        if e.length == 5:
            break
    assert cost_total(e, CostFunction.length()) == 5
    table = CostFunction.from_table({(2, 1): 3}, default=1)
    assert cost_total(expand(parse_element("2/5-1/5i", 1)), table) == 3
    assert table.bound == 3 and CostFunction.length().bound == 1
    with pytest.raises(ValueError):
        CostFunction.from_table({(1, 0): -1})


def test_lazy_cost_ledger():
    e = expand(parse_element("3/7+1/7i", 1))
    assert "logabs" not in e.costs
    v = e.cost(CostFunction.log_abs())
    assert e.costs["logabs"] == v and e.costs["len"] == e.length


def test_reversed_identity_single_digit():
    for d in SUPPORTED_D:
        assert convergents_reversed_identity([QuadInt(3, 1, d)])


@pytest.mark.parametrize("d", SUPPORTED_D)
def test_expansion_invariants(d):
    cfg = field_config(d)
    rng = random.Random(d)
    empty = {QuadInt(a, b, d) for a, b in TABLE_1[d]}
    one = QuadInt(1, 0, d)
    for _ in range(1000):
        z = random_point_of_I(rng, d, 5000)
        e = expand(z)
        assert e.reconstruct() == z
        assert convergents_reversed_identity(e.digits)
        for m in e.convergents:
            assert det(m) in (one, -one)
        qs = [qnorm(q) for q in e.denominators()]
        assert all(a < b for a, b in zip(qs, qs[1:]))
        assert not set(e.digits) & empty
        if z:
            assert e.length <= math.log(math.sqrt(z.height_sq())) / math.log(1 / math.sqrt(cfg.R_sq)) + 1


def test_json_record():
    e = expand(parse_element("3/7+1/7i", 1))
    e.cost(CostFunction.log_abs())
    rec = json.loads(expansions_json([e]))[0]
    assert rec["field"] == 1 and rec["length"] == e.length
    assert rec["num"] == ["3", "1"] and rec["den"] == ["7", "0"]
    assert all(isinstance(x, str) for pair in rec["digits"] for x in pair)
    assert set(rec["costs"]) == {"len", "logabs"}


def test_orbit_cost_float_examples():
    c = CostFunction.length()
    assert orbit_cost_float(0.3 + 0.1j, 0, c).cost == 0
    r = orbit_cost_float(0.4 - 0.2j, 5, c)
    assert r.digits[0] == QuadInt(2, 1, 1) and r.hit_zero
    r = orbit_cost_float(0.3141 + 0.2718j, 40, CostFunction.log_abs())
    assert all(a <= b for a, b in zip(r.partial_costs, r.partial_costs[1:]))


@pytest.mark.parametrize("d", SUPPORTED_D)
def test_float_agrees_with_exact(d):
    rng = random.Random(50 + d)
    for _ in range(200):
        z = random_point_of_I(rng, d, 10**4)
        e = expand(z)
        r = orbit_cost_float(complex(z), e.length + 3, CostFunction.length(), d)
        rem = z
        for k, a in enumerate(e.digits):
            if abs(complex(rem)) < 1e-9:
                break
            nxt = cf_step(rem)[1]
            u, v = nxt.uv()
            if any(hp.cu * u + hp.cv * v == hp.c for hp in field_config(d).boundary_lines):
                # an exact tie on the boundary of I; doubles cannot resolve it
                break
            assert r.digits[k] == a
            rem = nxt


@pytest.mark.parametrize("d", SUPPORTED_D)
def test_float_rounding_matches_exact(d):
    cfg = field_config(d)
    rng = np.random.default_rng(d)
    w = rng.uniform(-20, 20, 2000) + 1j * rng.uniform(-20, 20, 2000)
    a, b = round_nearest_float(w, cfg)
    for k in range(0, 2000, 7):
        from hurwitz_lab.cf import _to_rat

        assert round_nearest(_to_rat(w[k], d), cfg) == QuadInt(int(a[k]), int(b[k]), d)


@pytest.mark.parametrize("d", SUPPORTED_D)
def test_empty_digit_scan_table_1(d):
    got = {(a.a, a.b) for a in empty_digit_scan(field_config(d), 16)}
    assert got == TABLE_1[d]


def test_coverage_certificate_negative():
    cfg = field_config(1)
    assert translate_covered_by_inversion_disks(cfg, QuadInt(1, 0, 1))
    assert not translate_covered_by_inversion_disks(cfg, QuadInt(2, 0, 1))


def test_image_of_cylinder():
    cfg = field_config(1)
    alpha = QuadInt(2, 0, 1)
    z = QuadRat(0, 0, 1, 1)
    assert in_image_of_cylinder(z, alpha, cfg)
    assert not in_image_of_cylinder(z, QuadInt(1, 0, 1), cfg)
    # z = -1/2 + 0i with alpha = 2: 1/(3/2) = 2/3 not in I
    assert not in_image_of_cylinder(QuadRat(-1, 0, 2, 1), alpha, cfg)


def test_branch_distortion_small_sample():
    for d in SUPPORTED_D:
        cfg = field_config(d)
        s = sample_branch_distortion(cfg, 20_000, seed=d)
        assert s.max_jacobian <= float(cfg.R_sq) ** 2
        assert s.max_distortion <= s.distortion_bound + 1e-6
        assert s.max_distortion_euclidean <= 4 * cfg.R + 1e-12


def test_gauss_map_float_and_birkhoff():
    cfg = field_config(1)
    z = np.array([0.4 - 0.2j + 1e-7, 0.3 + 0.1j])
    a, b, nz = gauss_map_float(z, cfg)
    assert (a[1], b[1]) == (3, -1)
    lam = birkhoff_log_jacobian(cfg, 2000, 16, seed=0)
    assert 3.5 < lam < 5.5


def test_cost_transformer():
    t = HurwitzCostTransformer(d=1, n_steps=4)
    X = np.array([[0.3, 0.1], [0.21, -0.33]])
    out = t.fit_transform(X)
    assert out.shape == (2, 4)
    assert np.all(np.diff(out, axis=1) >= 0)
    assert t.get_params()["n_steps"] == 4
    with pytest.raises(ValueError):
        HurwitzCostTransformer(n_steps=0).fit()
