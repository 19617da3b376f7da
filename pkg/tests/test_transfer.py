import numpy as np
import pytest
from sklearn.base import clone

from hurwitz_lab.cf import CostFunction, birkhoff_log_jacobian
from hurwitz_lab.errors import BracketFailure, NoConvergence, TailTooLarge
from hurwitz_lab.ring import field_config
from hurwitz_lab.transfer import (
    PressureCurveEstimator,
    PressureSolver,
    TransferSpectrum,
    _central_fit,
    assemble,
    density_csv,
    dominant_eigen,
    lyapunov_integral,
    make_grid,
    solve_s0,
    spectral_report,
)

M = 32


@pytest.fixture(scope="module")
def cfg1():
    return field_config(1)


@pytest.fixture(scope="module")
def op1(cfg1):
    return assemble(cfg1, M)


@pytest.fixture(scope="module")
def res1(op1):
    return dominant_eigen(op1)


@pytest.fixture(scope="module")
def curve1(cfg1):
    return solve_s0(cfg1, m=M)


def test_grid_covers_I(cfg1):
    g = make_grid(cfg1, 40)
    assert g.areas.sum() == pytest.approx(cfg1.area(), rel=1e-12)
    assert np.all(g.box_of(g.samples) == g.owner)


@pytest.mark.parametrize("d", [3, 7])
def test_hexagonal_grid_area(d):
    cfg = field_config(d)
    g = make_grid(cfg, 64)
    assert g.areas.sum() == pytest.approx(cfg.area(), rel=2e-2)


def test_entries_nonnegative(op1):
    assert op1.min_entry >= 0
    assert np.all(op1.matrix.data >= 0)


def test_mass_conservation(op1):
    v = np.random.default_rng(1).random(op1.grid.n)
    assert op1.mass_defect(v) <= op1.truncation_tail + 2.0 / M


def test_dense_matches_matvec(op1):
    v = np.random.default_rng(2).random(op1.grid.n)
    assert np.allclose(op1.dense() @ v, op1.matvec(v))


def test_eigenpair(res1):
    assert abs(res1.lam - 1) < 5e-3
    assert res1.psi.min() > 0
    assert res1.residual < 1e-9


def test_truncation_monotone(cfg1):
    lams = [dominant_eigen(assemble(cfg1, M, A, tail_model="none", max_tail=None)).lam for A in (100, 200, 400)]
    assert lams[0] < lams[1] < lams[2] < 1


def test_rank_one_tail_closes_gap(cfg1):
    bare = dominant_eigen(assemble(cfg1, M, tail_model="none", max_tail=None)).lam
    full = dominant_eigen(assemble(cfg1, M)).lam
    assert bare < full
    assert abs(full - 1) < abs(bare - 1)


def test_lambda_decreasing_in_sigma(cfg1):
    lams = [dominant_eigen(assemble(cfg1, M, sigma=s)).lam for s in (0.99, 1.0, 1.01)]
    assert lams[0] > lams[1] > lams[2]


def test_lambda_increasing_in_u(cfg1):
    lams = [dominant_eigen(assemble(cfg1, M, u=u)).lam for u in (-0.01, 0.0, 0.01)]
    assert lams[0] < lams[1] < lams[2]


def test_tail_too_large_when_truncated(cfg1):
    with pytest.raises(TailTooLarge) as exc:
        assemble(cfg1, M, tail_model="none")
    assert exc.value.code == "TAIL_TOO_LARGE"


def test_bad_arguments(cfg1):
    with pytest.raises(ValueError):
        assemble(cfg1, M, A_max=50)
    with pytest.raises(ValueError):
        assemble(cfg1, M, tail_model="exact")


def test_no_convergence(op1):
    with pytest.raises(NoConvergence):
        dominant_eigen(op1, tol=1e-15, max_iter=2)


def test_lyapunov_positive_and_birkhoff(cfg1, res1):
    Lam = lyapunov_integral(res1)
    assert Lam > 0
    birk = birkhoff_log_jacobian(cfg1, 20_000, 8, seed=3)
    assert abs(birk / Lam - 1) < 0.05


def test_pressure_curve(curve1):
    assert curve1.s0(0.0) == pytest.approx(1.0, abs=1e-10)
    assert curve1.mu_hat > 0
    assert curve1.delta_hat > 0
    assert curve1.fit_residual < 1e-6


def test_derivative_identity(curve1):
    # s0'(0) * Lambda equals the mean cost, which is 1 for the length
    assert abs(curve1.s0_prime * curve1.Lambda - 1) < 0.05


def test_uncalibrated_root_near_one(cfg1):
    solver = PressureSolver(cfg1, M)
    c = solve_s0(cfg1, (-0.01, 0.0, 0.01), calibrate=False, solver=solver)
    assert abs(c.s0(0.0) - 1) < 1e-3


def test_bracket_failure(cfg1):
    solver = PressureSolver(cfg1, 16)
    with pytest.raises(BracketFailure):
        solve_s0(cfg1, (-0.02, 0.0, 0.02), bracket=1e-6, solver=solver)


def test_w_range_checked(cfg1):
    with pytest.raises(ValueError):
        solve_s0(cfg1, (-0.1, 0.0, 0.1), m=16)


def test_central_fit_exact_on_parabola():
    samples = [(w, 1 + 0.3 * w + 0.5 * 0.08 * w * w) for w in (-0.02, -0.01, 0.0, 0.01, 0.02)]
    p1, p2, resid = _central_fit(samples)
    assert p1 == pytest.approx(0.3)
    assert p2 == pytest.approx(0.08)
    assert resid < 1e-14


def test_logabs_cost(cfg1):
    solver = PressureSolver(cfg1, 16, cost=CostFunction.log_abs())
    c = solve_s0(cfg1, (-0.01, 0.0, 0.01), solver=solver)
    assert c.mu_hat > 0


def test_report_and_csv(op1, res1, curve1):
    doc = spectral_report(op1, res1, lyapunov_integral(res1), curve1)
    assert set(doc) == {"d", "m", "A_max", "sigma", "u", "lambda", "residual", "tail", "Lambda", "s0_curve", "mu_hat", "delta_hat"}
    text = density_csv(res1)
    assert text.splitlines()[0] == "x,y,psi"
    assert len(text.splitlines()) == op1.grid.n + 1


def test_estimators(cfg1):
    est = TransferSpectrum(d=1, m=16)
    assert clone(est).get_params()["m"] == 16
    est.fit()
    assert abs(est.lambda_ - 1) < 2e-2
    assert np.all(est.predict(np.array([[0.1, 0.1], [-0.2, 0.3]])) > 0)
    pc = PressureCurveEstimator(d=1, m=16, w_values=(-0.01, 0.0, 0.01)).fit()
    assert pc.mu_ > 0 and pc.delta_ > 0


@pytest.mark.parametrize("d", [2, 3])
def test_other_fields_near_one(d):
    res = dominant_eigen(assemble(field_config(d), 24))
    assert abs(res.lam - 1) < 2e-2
    assert res.psi.min() > 0
