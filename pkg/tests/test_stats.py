import math
from collections import Counter

import numpy as np
import pytest

from hurwitz_lab.cf import CostFunction
from hurwitz_lab.errors import DegenerateSample
from hurwitz_lab.ring import SUPPORTED_D, QuadRat, field_config, qnorm, strict_domain_contains, closed_domain_contains
from hurwitz_lab.stats import (
    EnsembleData,
    OmegaSpec,
    cached_ensemble,
    dirichlet_csv,
    dirichlet_partial,
    enumerate_omega,
    enumerate_sigma,
    ks_normal,
    ks_normal_weighted,
    linear_fit,
    modq_csv,
    modq_deviation,
    modq_table,
    moment_table,
    run_ensemble,
)

SMALL = 40


@pytest.fixture(scope="module", params=SUPPORTED_D)
def oracle(request):
    """Per-n length and log-abs histograms from the exact expansion."""
    d = request.param
    lengths, logs = Counter(), {}
    items = list(enumerate_omega(OmegaSpec(d, SMALL)))
    for z, e in items:
        n = z.height_sq()
        lengths[(n, e.length)] += 1
        logs[n] = logs.get(n, 0.0) + e.cost(CostFunction.log_abs())
    return d, items, lengths, logs


def test_sigma_one_is_origin(d):
    assert enumerate_sigma(field_config(d), 1) == [QuadRat(0, 0, 1, d)]


def test_sigma_needs_positive_n():
    with pytest.raises(ValueError):
        enumerate_sigma(field_config(1), 0)


def test_gaussian_shells_empty_mod_4():
    cfg = field_config(1)
    for n in range(3, 80, 4):
        assert enumerate_sigma(cfg, n) == []


def test_stream_integrity(oracle):
    d, items, _, _ = oracle
    cfg = field_config(d)
    seen = set()
    last = 0
    for z, e in items:
        assert z not in seen
        seen.add(z)
        num, den = z.as_fraction()
        n = z.height_sq()
        assert n == qnorm(den) >= last
        last = n
        assert qnorm(num) < qnorm(den) or n == 1
        assert closed_domain_contains(z, cfg)
        assert e.reconstruct() == z


def test_kernel_matches_oracle(oracle):
    d, items, lengths, logs = oracle
    data = run_ensemble(OmegaSpec(d, SMALL))
    assert data.count(SMALL) == len(items)
    for (n, ell), c in lengths.items():
        assert data.hist_len[n, ell] == c
    assert data.hist_len.sum() == sum(lengths.values())
    for n, s in logs.items():
        assert data.s1[n] == pytest.approx(s, abs=1e-9)
    assert data.law_violations == 0


@pytest.mark.parametrize("d", [1, 3])
def test_strict_domain_subset(d):
    closed = run_ensemble(OmegaSpec(d, SMALL)).count(SMALL)
    strict = run_ensemble(OmegaSpec(d, SMALL, "strict")).count(SMALL)
    pts = list(enumerate_omega(OmegaSpec(d, SMALL, "strict")))
    assert len(pts) == strict < closed
    assert all(strict_domain_contains(z, field_config(d)) for z, _ in pts)


def test_table_cost_in_kernel():
    # cost 1 on digits of norm 2, else 0
    table = {(a, b): 1 for a, b in [(1, 1), (1, -1), (-1, 1), (-1, -1)]}
    cost = CostFunction.from_table(table, default=0, name="n2")
    data = run_ensemble(OmegaSpec(1, SMALL), table_cost=cost)
    want = Counter(int(e.cost(cost)) for _, e in enumerate_omega(OmegaSpec(1, SMALL)))
    vals, cts = data.cost_hist(cost, SMALL)
    assert dict(zip(vals.astype(int), cts)) == dict(want)


def test_spec_validation():
    with pytest.raises(ValueError):
        OmegaSpec(1, 0)
    with pytest.raises(ValueError):
        OmegaSpec(5, 10)
    with pytest.raises(ValueError):
        OmegaSpec(1, 10, "open")


def test_ks_calibration():
    x = np.random.default_rng(0).standard_normal(100_000)
    assert ks_normal(x) <= 0.01
    assert ks_normal(np.full(500, 3.0)) == 0.5
    with pytest.raises(ValueError):
        ks_normal(np.zeros(10))


def test_ks_weighted_matches_plain():
    rng = np.random.default_rng(1)
    x = rng.integers(0, 7, 5000).astype(float)
    vals, cts = np.unique(x, return_counts=True)
    assert ks_normal_weighted(vals, cts) == pytest.approx(ks_normal(x), abs=1e-12)
    with pytest.raises(DegenerateSample):
        ks_normal_weighted([2.0], [10])


def test_linear_fit_exact():
    x = np.arange(6.0)
    slope, icpt, r2 = linear_fit(x, 3 * x - 1)
    assert slope == pytest.approx(3)
    assert icpt == pytest.approx(-1)
    assert r2 == pytest.approx(1)


@pytest.fixture(scope="module")
def mid():
    spec = OmegaSpec(1, 2**10)
    data = run_ensemble(spec, [2**6, 2**8, 2**10], wvals=(0.02,))
    return spec, data


def test_moment_table(mid):
    spec, data = mid
    grid = [2**6, 2**8, 2**10]
    t = moment_table(spec, [CostFunction.length(), CostFunction.log_abs()], grid, data=data)
    counts = t.column("count")
    assert list(counts) == sorted(counts)
    assert np.all(np.diff(t.column("mean")) > 0)
    assert np.all(t.column("var") > 0)
    assert np.all(np.diff(t.column("mean", "logabs")) > 0)
    assert t.to_csv().splitlines()[0] == "N,count,mean,var,ks,cost"
    with pytest.raises(ValueError):
        moment_table(spec, [CostFunction.length()], [2**8, 2**6], data=data)


def test_count_growth_exponent(mid):
    _, data = mid
    grid = [2**6, 2**8, 2**10]
    slope, _, _ = linear_fit(np.log(grid), np.log([data.count(n) for n in grid]))
    assert abs(slope - 2) < 0.1


def test_modq(mid):
    spec, data = mid
    grid = [2**8, 2**10]
    rows = modq_table(spec, CostFunction.length(), 1, grid, data=data)
    assert modq_deviation(rows, 2**10) == 0
    rows = modq_table(spec, CostFunction.length(), 3, grid, data=data)
    for N in grid:
        assert sum(r.count for r in rows if r.N == N) == data.count(N)
    assert modq_csv(rows).splitlines()[0] == "N,q,a,count,deviation"
    with pytest.raises(ValueError):
        modq_table(spec, CostFunction.log_abs(), 2, grid, data=data)


def test_dirichlet(mid):
    spec, data = mid
    grid = [2**6, 2**8, 2**10]
    rows = dirichlet_partial(spec, 0, grid, data=data)
    assert [r.partial.real for r in rows] == [data.count(n) for n in grid]
    assert all(r.ratio == 1 for r in rows)
    assert abs(rows[0].fit_slope - 2) < 0.1
    up = dirichlet_partial(spec, 0.02, grid, data=data)
    assert up[0].fit_slope > rows[0].fit_slope
    im = dirichlet_partial(spec, 1j * math.pi / 2, grid, data=data)
    assert all(r.ratio < 1 for r in im)
    logabs = dirichlet_partial(spec, 0.02, grid, CostFunction.log_abs(), data=data)
    assert logabs[-1].partial.real > data.count(2**10)
    assert dirichlet_csv(rows).splitlines()[0] == "N,w_re,w_im,partial_re,partial_im,fit_slope"
    for bad in (0.1, 0.01 + 0.5j, 4j):
        with pytest.raises(ValueError):
            dirichlet_partial(spec, bad, grid, data=data)


def test_reservoir_seeded():
    spec = OmegaSpec(2, 2**8)
    a = run_ensemble(spec, [2**6, 2**8], seed=4, reservoir=1000)
    b = run_ensemble(spec, [2**6, 2**8], seed=4, reservoir=1000)
    assert np.array_equal(a.reservoir, b.reservoir)
    t = moment_table(spec, [CostFunction.log_abs()], [2**6, 2**8], data=a, seed=1)
    assert all(0 < r.ks < 0.5 for r in t.rows)


def test_cache_roundtrip(tmp_path):
    spec = OmegaSpec(3, 64)
    a = cached_ensemble(spec, tmp_path, checkpoints=[16, 64])
    files = list(tmp_path.glob("*.npz"))
    assert len(files) == 1
    b = cached_ensemble(spec, tmp_path, checkpoints=[16, 64])
    assert np.array_equal(a.hist_len, b.hist_len)
    c = EnsembleData.load(files[0])
    assert c.count(64) == a.count(64) and c.cost_ids == a.cost_ids
