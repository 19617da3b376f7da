"""Ulam discretisation of the weighted transfer operator and the pressure curve.

The operator acts on functions on I by

    (L_{s,w} f)(z) = sum_alpha exp(w c(alpha)) |z + alpha|^{-4s} f(1/(z + alpha)) 1[z in T O_alpha]

and is discretised on a uniform box grid: row i averages the sum over K
sample points of box i, and f(1/(z + alpha)) is read from the box that
contains the image point.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse
from scipy.ndimage import distance_transform_edt
from sklearn.base import BaseEstimator

from .cf import CostFunction, closed_domain_contains_float, empty_digit_scan, lattice_point
from .errors import BracketFailure, NoConvergence, TailTooLarge
from .ring import FieldConfig, field_config

DEFAULT_A_MAX = 400
DEFAULT_A_FAR = 10**6
TAIL_LIMIT = 1e-3


@dataclass
class BoxGrid:
    """Uniform m x m boxes over the bounding rectangle of I with K = 4 samples each."""

    cfg: FieldConfig
    m: int
    ymax: float
    samples: np.ndarray  # complex sample points inside I
    owner: np.ndarray  # active box index of each sample
    kept: np.ndarray  # samples per active box
    active: np.ndarray  # flat grid index of each active box
    lookup: np.ndarray  # flat grid index -> active index (nearest active box when inactive)

    @property
    def n(self) -> int:
        return len(self.active)

    @property
    def box_area(self) -> float:
        return (1.0 / self.m) * (2 * self.ymax / self.m)

    @property
    def areas(self) -> np.ndarray:
        """Area of box intersected with I, estimated from the kept samples."""
        return self.kept / 4.0 * self.box_area

    def centers(self) -> np.ndarray:
        ix, iy = np.divmod(self.active, self.m)
        return (-0.5 + (ix + 0.5) / self.m) + 1j * (-self.ymax + (iy + 0.5) * 2 * self.ymax / self.m)

    def box_of(self, z: np.ndarray) -> np.ndarray:
        ix = np.clip(np.floor((z.real + 0.5) * self.m).astype(np.int64), 0, self.m - 1)
        iy = np.clip(np.floor((z.imag + self.ymax) / (2 * self.ymax) * self.m).astype(np.int64), 0, self.m - 1)
        return self.lookup[ix * self.m + iy]


def make_grid(cfg: FieldConfig, m: int) -> BoxGrid:
    s = math.sqrt(cfg.d)
    ymax = (cfg.d + 1) / (4 * s) if cfg.hexagonal else s / 2
    hx, hy = 1.0 / m, 2 * ymax / m
    ix, iy = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    flat = (ix * m + iy).ravel()
    x0 = -0.5 + ix.ravel() * hx
    y0 = -ymax + iy.ravel() * hy
    # 2 x 2 midpoint rule inside every box
    offs = [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]
    pts = np.stack([(x0 + a * hx) + 1j * (y0 + b * hy) for a, b in offs], axis=1)
    inside = closed_domain_contains_float(pts, cfg)
    kept_all = inside.sum(axis=1)
    act_mask = kept_all > 0
    active = flat[act_mask]
    index = np.full(m * m, -1, dtype=np.int64)
    index[active] = np.arange(len(active))
    # inactive boxes borrow the nearest active box
    grid = (index.reshape(m, m) < 0)
    _, (jx, jy) = distance_transform_edt(grid, return_indices=True)
    lookup = index.reshape(m, m)[jx, jy].ravel()
    owner = np.repeat(index[flat], 4).reshape(-1, 4)
    samples = pts[inside]
    owner = owner[inside]
    return BoxGrid(cfg, m, ymax, samples, owner, kept_all[act_mask].astype(float), active, lookup)


def _digit_arrays(cfg: FieldConfig, lo: int, hi: int, exclude=()) -> tuple:
    """Coordinates, complex values and norms of digits with lo < qnorm <= hi."""
    r = int(math.isqrt(4 * hi)) + 2
    a, b = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    a, b = a.ravel(), b.ravel()
    z = lattice_point(a, b, cfg)
    nrm = np.rint(np.abs(z) ** 2).astype(np.int64)
    keep = (nrm > lo) & (nrm <= hi)
    for e in exclude:
        keep &= ~((a == e.a) & (b == e.b))
    order = np.lexsort((b[keep], a[keep], nrm[keep]))
    return a[keep][order], b[keep][order], z[keep][order], nrm[keep][order]


def _cost_values(cost: CostFunction, a, b, nrm) -> np.ndarray:
    return cost.weights(a, b, nrm.astype(float))


def _tail_bound(cfg: FieldConfig, rho_sq: float, sigma: float, u: float, cost: CostFunction) -> float:
    """Upper estimate of sum over qnorm(alpha) > rho_sq of sup_z exp(u c) |z + alpha|^{-4 sigma}.

    Uses #{|alpha| <= r} <= pi (r + R)^2 / covolume and |z + alpha| >= |alpha| - R,
    which after t = r - R leaves (2 pi / covolume) int_{t0}^inf (t + 2R) t^{-e} dt.
    """
    R = cfg.R
    t0 = math.sqrt(rho_sq) - R
    e = 4 * sigma
    pre = 1.0
    if cost.kind == "log_abs":
        # |alpha|^u <= ((1 + R/t0) t)^u for u >= 0 and <= t^u for u < 0
        e -= u
        pre = (1 + R / t0) ** max(u, 0.0)
    elif u > 0:
        pre = math.exp(u * cost.bound)
    if e <= 2:
        return math.inf
    val = t0 ** (2 - e) / (e - 2) + 2 * R * t0 ** (1 - e) / (e - 1)
    return pre * 2 * math.pi / cfg.covolume * val


@dataclass
class UlamOperator:
    """Sparse Ulam matrix plus a rank-one model of the far digits.

    The action is ``v -> M v + tail_vector . v`` (the same value added to
    every row), where ``tail_vector`` collects the digits above ``A_max``.
    """

    d: int
    m: int
    grid: BoxGrid = field(repr=False)
    A_max: int
    sigma: float
    u: float
    cost_id: str
    matrix: sparse.csr_matrix = field(repr=False)
    tail_vector: np.ndarray = field(repr=False)
    n_digits: int
    truncation_tail: float
    leading_mass: float
    tail_model: str

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v + float(self.tail_vector @ v)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() + self.tail_vector[None, :]

    def mass_defect(self, v: np.ndarray) -> float:
        """|int L v - int v| / int v with box areas as weights."""
        a = self.grid.areas
        return abs(a @ self.matvec(v) - a @ v) / (a @ v)

    @property
    def min_entry(self) -> float:
        return float(min(self.matrix.data.min(initial=0.0), self.tail_vector.min(initial=0.0)))


class _PairCache:
    """All (sample, digit) pairs with the image in I, sorted by matrix position.

    Re-weighting for a new (sigma, u) costs one exponential per pair and a
    segmented sum.
    """

    def __init__(self, grid: BoxGrid, cfg: FieldConfig, A_max: int, cost: CostFunction, batch: int = 64):
        empty = empty_digit_scan(cfg, 16)
        a, b, dz, nrm = _digit_arrays(cfg, 0, A_max, empty)
        cvals = _cost_values(cost, a, b, nrm)
        rows, cols, logr, cs = [], [], [], []
        z = grid.samples
        for k in range(0, len(dz), batch):
            w = z[:, None] + dz[None, k : k + batch]
            h = 1.0 / w
            ok = closed_domain_contains_float(h, cfg)
            si, di = np.nonzero(ok)
            rows.append(grid.owner[si].astype(np.int32))
            cols.append(grid.box_of(h[si, di]).astype(np.int32))
            logr.append(np.log(np.abs(w[si, di])))
            cs.append(cvals[k + di])
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        key = rows.astype(np.int64) * grid.n + cols
        order = np.argsort(key, kind="stable")
        key = key[order]
        self.logr = np.concatenate(logr)[order]
        self.c = np.concatenate(cs)[order]
        starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
        self.starts = starts
        self.rows = (key[starts] // grid.n).astype(np.int64)
        self.cols = (key[starts] % grid.n).astype(np.int64)
        self.n_digits = len(dz)
        self.grid = grid

    def matrix(self, sigma: float, u: float) -> sparse.csr_matrix:
        w = np.exp(-4 * sigma * self.logr + u * self.c)
        data = np.add.reduceat(w, self.starts) / self.grid.kept[self.rows]
        n = self.grid.n
        return sparse.csr_matrix((data, (self.rows, self.cols)), shape=(n, n))


def _tail_vector(grid: BoxGrid, cfg: FieldConfig, A_max: int, A_far: int, sigma: float, u: float, cost: CostFunction, far) -> np.ndarray:
    tau = np.zeros(grid.n)
    a, b, dz, nrm = far
    if len(dz):
        w = np.exp(-2 * sigma * np.log(nrm.astype(float)) + u * _cost_values(cost, a, b, nrm))
        np.add.at(tau, grid.box_of(1.0 / dz), w)
    # digits beyond A_far: lattice-count integral, all mapped next to 0
    rest = _remainder_integral(cfg, A_far, sigma, u, cost)
    tau[grid.box_of(np.array([0j]))[0]] += rest
    return tau


def _remainder_integral(cfg: FieldConfig, A: float, sigma: float, u: float, cost: CostFunction) -> float:
    """(pi / covolume) * integral_A^inf N^{-2 sigma} e^{u c} dN with c evaluated at |alpha| = sqrt(N)."""
    k = math.pi / cfg.covolume
    if cost.kind == "log_abs":
        e = 2 * sigma - u / 2
        return k * A ** (1 - e) / (e - 1)
    c = 1.0 if cost.kind == "constant_one" else float(cost.default)
    return k * math.exp(u * c) * A ** (1 - 2 * sigma) / (2 * sigma - 1)


def assemble(
    cfg: FieldConfig,
    m: int = 200,
    A_max: int = DEFAULT_A_MAX,
    sigma: float = 1.0,
    u: float = 0.0,
    cost: CostFunction | None = None,
    tail_model: str = "rank_one",
    A_far: int = DEFAULT_A_FAR,
    max_tail: float | None = TAIL_LIMIT,
    grid: BoxGrid | None = None,
    batch: int = 32,
    _cache: _PairCache | None = None,
) -> UlamOperator:
    """Assemble the Ulam matrix of L_{sigma,u} on an m x m grid.

    Digits with qnorm <= A_max are sampled exactly. With ``tail_model =
    "rank_one"`` the digits up to ``A_far`` enter through a rank-one term
    (for them T O_alpha is all of I and h_alpha is nearly constant) and the
    remainder through a lattice-count integral; ``truncation_tail`` is then
    the bound on the mass above A_far. With ``"none"`` everything above
    A_max is dropped and the bound refers to A_max.
    """
    cost = cost or CostFunction.length()
    if A_max < 100:
        raise ValueError("A_max must be at least 100")
    if m < 8:
        raise ValueError("m must be at least 8")
    if tail_model not in ("rank_one", "none"):
        raise ValueError("tail_model must be 'rank_one' or 'none'")
    grid = grid or make_grid(cfg, m)
    if _cache is not None:
        M = _cache.matrix(sigma, u)
        n_digits = _cache.n_digits
    else:
        M, n_digits = _assemble_direct(grid, cfg, A_max, sigma, u, cost, batch)
    if tail_model == "rank_one":
        far = _digit_arrays(cfg, A_max, A_far)
        tau = _tail_vector(grid, cfg, A_max, A_far, sigma, u, cost, far)
        omitted = _tail_bound(cfg, A_far, sigma, u, cost)
    else:
        tau = np.zeros(grid.n)
        omitted = _tail_bound(cfg, A_max, sigma, u, cost)
    leading = float(grid.areas @ (M @ np.ones(grid.n) + tau.sum()) / grid.areas.sum())
    if max_tail is not None and omitted > max_tail * leading:
        raise TailTooLarge(f"omitted digit mass {omitted:.3g} exceeds {max_tail:g} of the leading mass {leading:.3g}", tail=omitted)
    return UlamOperator(cfg.d, m, grid, A_max, sigma, u, cost.id, M, tau, n_digits, omitted, leading, tail_model)


def _assemble_direct(grid, cfg, A_max, sigma, u, cost, batch):
    empty = empty_digit_scan(cfg, 16)
    a, b, dz, nrm = _digit_arrays(cfg, 0, A_max, empty)
    cvals = _cost_values(cost, a, b, nrm)
    n = grid.n
    M = sparse.csr_matrix((n, n))
    z = grid.samples
    inv_kept = 1.0 / grid.kept
    for k in range(0, len(dz), batch):
        w = z[:, None] + dz[None, k : k + batch]
        h = 1.0 / w
        ok = closed_domain_contains_float(h, cfg)
        si, di = np.nonzero(ok)
        rows = grid.owner[si]
        cols = grid.box_of(h[si, di])
        val = np.exp(-4 * sigma * np.log(np.abs(w[si, di])) + u * cvals[k + di]) * inv_kept[rows]
        M = M + sparse.csr_matrix((val, (rows, cols)), shape=(n, n))
    return M, len(dz)


@dataclass
class SpectralResult:
    lam: float
    psi: np.ndarray = field(repr=False)
    residual: float
    truncation_tail: float
    iterations: int
    op: UlamOperator = field(repr=False, default=None)

    def to_json(self) -> dict:
        return {"lambda": self.lam, "residual": self.residual, "tail": self.truncation_tail, "iterations": self.iterations}


def dominant_eigen(op: UlamOperator, tol: float = 1e-12, max_iter: int = 2000, v0: np.ndarray | None = None) -> SpectralResult:
    """Power iteration; psi is normalised to integrate to 1 over I."""
    a = op.grid.areas
    v = np.ones(op.grid.n) if v0 is None else np.asarray(v0, dtype=float).copy()
    v /= a @ v
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = op.matvec(v)
        lam = a @ w
        w /= lam
        res = float(np.max(np.abs(w - v)) / np.max(np.abs(w)))
        v = w
        if res < tol:
            break
    else:
        raise NoConvergence(f"power iteration did not reach {tol:g} in {max_iter} steps", residual=res)
    resid = float(np.linalg.norm(op.matvec(v) - lam * v) / np.linalg.norm(v))
    return SpectralResult(float(lam), v, resid, op.truncation_tail, it, op)


def lyapunov_integral(res: SpectralResult) -> float:
    """Lambda = integral of log|J_T| = -4 log|z| against the invariant density psi."""
    g = res.op.grid
    vals = -4 * np.log(np.maximum(np.abs(g.samples), 1e-300))
    per_box = np.bincount(g.owner, weights=vals, minlength=g.n) / g.kept
    return float(np.sum(g.areas * res.psi * per_box))


def density_csv(res: SpectralResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "psi"])
    for c, p in zip(res.op.grid.centers(), res.psi):
        w.writerow([f"{c.real:.10g}", f"{c.imag:.10g}", f"{p:.12g}"])
    return buf.getvalue()


@dataclass
class PressureCurve:
    samples: list  # (w, s0(w))
    mu_hat: float
    delta_hat: float
    fit_residual: float
    s0_prime: float
    s0_second: float
    lambda_10: float
    Lambda: float
    calibrated: bool

    def s0(self, w: float) -> float:
        for ww, s in self.samples:
            if abs(ww - w) < 1e-15:
                return s
        c0 = dict(self.samples).get(0.0, 1.0)
        return c0 + self.s0_prime * w + 0.5 * self.s0_second * w * w

    def to_json(self) -> dict:
        return {
            "s0_curve": [[w, s] for w, s in self.samples],
            "mu_hat": self.mu_hat,
            "delta_hat": self.delta_hat,
            "fit_residual": self.fit_residual,
            "lambda_10": self.lambda_10,
            "Lambda": self.Lambda,
            "calibrated": self.calibrated,
        }


class PressureSolver:
    """lambda(sigma, w) on a fixed grid, with the sample/digit pairs cached."""

    def __init__(self, cfg: FieldConfig, m: int = 64, A_max: int = DEFAULT_A_MAX, cost: CostFunction | None = None, A_far: int = DEFAULT_A_FAR):
        self.cfg = cfg
        self.m = m
        self.A_max = A_max
        self.A_far = A_far
        self.cost = cost or CostFunction.length()
        self.grid = make_grid(cfg, m)
        self.cache = _PairCache(self.grid, cfg, A_max, self.cost)
        self._far = _digit_arrays(cfg, A_max, A_far)
        self._v = None

    def operator(self, sigma: float, w: float) -> UlamOperator:
        M = self.cache.matrix(sigma, w)
        tau = _tail_vector(self.grid, self.cfg, self.A_max, self.A_far, sigma, w, self.cost, self._far)
        omitted = _tail_bound(self.cfg, self.A_far, sigma, w, self.cost)
        return UlamOperator(self.cfg.d, self.m, self.grid, self.A_max, sigma, w, self.cost.id, M, tau, self.cache.n_digits, omitted, 1.0, "rank_one")

    def eigen(self, sigma: float, w: float, tol: float = 1e-13) -> SpectralResult:
        res = dominant_eigen(self.operator(sigma, w), tol, v0=self._v)
        self._v = res.psi
        return res

    def lam(self, sigma: float, w: float) -> float:
        return self.eigen(sigma, w).lam


def solve_s0(
    cfg: FieldConfig,
    w_values=(-0.02, -0.01, 0.0, 0.01, 0.02),
    solver_tol: float = 1e-11,
    m: int = 64,
    A_max: int = DEFAULT_A_MAX,
    cost: CostFunction | None = None,
    calibrate: bool = True,
    bracket: float = 0.25,
    solver: PressureSolver | None = None,
) -> PressureCurve:
    """Solve lambda(s0(w), w) = target for each real w and fit s0 near 0.

    With ``calibrate`` the target is the discrete lambda(1, 0) rather than
    1, so that discretisation bias does not shift s0(0) away from 1; the
    derivatives are unaffected to first order.
    """
    if any(abs(w) > 0.05 for w in w_values):
        raise ValueError("|w| must not exceed 0.05")
    solver = solver or PressureSolver(cfg, m, A_max, cost)
    base = solver.eigen(1.0, 0.0)
    target = base.lam if calibrate else 1.0
    Lam = lyapunov_integral(base)
    samples = []
    for w in w_values:
        f = lambda s: solver.lam(s, w) - target
        lo, hi = 1 - bracket, 1 + bracket
        flo, fhi = f(lo), f(hi)
        if flo * fhi > 0:
            raise BracketFailure(f"lambda(sigma, {w}) - {target} keeps its sign on [{lo}, {hi}]", w=w)
        s = optimize.brentq(f, lo, hi, xtol=solver_tol, rtol=4 * np.finfo(float).eps)
        samples.append((float(w), float(s)))
    p1, p2, resid = _central_fit(samples)
    return PressureCurve(samples, 2 * p1, 2 * p2, resid, float(p1), float(p2), base.lam, Lam, calibrate)


def _central_fit(samples) -> tuple:
    """s0'(0) and s0''(0) from the parabola through w in {-h, 0, h}, h = max |w|.

    The residual is the RMS misfit of the remaining sample points.
    """
    table = dict(samples)
    h = max(abs(w) for w in table)
    if not ({-h, 0.0, h} <= set(table)):
        raise ValueError("w values must contain 0 and +-h")
    sm, s0, sp = table[-h], table[0.0], table[h]
    p1 = (sp - sm) / (2 * h)
    p2 = (sp - 2 * s0 + sm) / (h * h)
    rest = [(w, s) for w, s in samples if w not in (-h, 0.0, h)]
    if rest:
        resid = math.sqrt(sum((s0 + p1 * w + 0.5 * p2 * w * w - s) ** 2 for w, s in rest) / len(rest))
    else:
        resid = 0.0
    return float(p1), float(p2), float(resid)


def spectral_report(op: UlamOperator, res: SpectralResult, Lam: float, curve: PressureCurve | None) -> dict:
    doc = {
        "d": op.d,
        "m": op.m,
        "A_max": op.A_max,
        "sigma": op.sigma,
        "u": op.u,
        "lambda": res.lam,
        "residual": res.residual,
        "tail": op.truncation_tail,
        "Lambda": Lam,
        "s0_curve": [],
        "mu_hat": None,
        "delta_hat": None,
    }
    if curve is not None:
        doc.update(s0_curve=[[w, s] for w, s in curve.samples], mu_hat=curve.mu_hat, delta_hat=curve.delta_hat)
    return doc


class TransferSpectrum(BaseEstimator):
    """Estimator front-end: ``fit`` computes lambda, psi and Lambda at (sigma, u)."""

    def __init__(self, d: int = 1, m: int = 200, A_max: int = DEFAULT_A_MAX, sigma: float = 1.0, u: float = 0.0, cost: str = "len", tail_model: str = "rank_one"):
        self.d = d
        self.m = m
        self.A_max = A_max
        self.sigma = sigma
        self.u = u
        self.cost = cost
        self.tail_model = tail_model

    def fit(self, X=None, y=None):
        cfg = field_config(self.d)
        cost = {"len": CostFunction.length(), "logabs": CostFunction.log_abs()}[self.cost]
        max_tail = TAIL_LIMIT if self.tail_model == "rank_one" else None
        self.operator_ = assemble(cfg, self.m, self.A_max, self.sigma, self.u, cost, self.tail_model, max_tail=max_tail)
        self.result_ = dominant_eigen(self.operator_)
        self.lambda_ = self.result_.lam
        self.density_ = self.result_.psi
        self.Lambda_ = lyapunov_integral(self.result_)
        return self

    def predict(self, X) -> np.ndarray:
        """Invariant density psi at the given points of I."""
        z = np.asarray(X)
        if z.ndim == 2:
            z = z[:, 0] + 1j * z[:, 1]
        return self.density_[self.operator_.grid.box_of(z.astype(complex))]


class PressureCurveEstimator(BaseEstimator):
    """Estimator front-end for the pressure curve and the CLT constants."""

    def __init__(self, d: int = 1, m: int = 64, A_max: int = DEFAULT_A_MAX, w_values=(-0.02, -0.01, 0.0, 0.01, 0.02), cost: str = "len", calibrate: bool = True):
        self.d = d
        self.m = m
        self.A_max = A_max
        self.w_values = w_values
        self.cost = cost
        self.calibrate = calibrate

    def fit(self, X=None, y=None):
        cost = {"len": CostFunction.length(), "logabs": CostFunction.log_abs()}[self.cost]
        self.curve_ = solve_s0(field_config(self.d), tuple(self.w_values), m=self.m, A_max=self.A_max, cost=cost, calibrate=self.calibrate)
        self.mu_ = self.curve_.mu_hat
        self.delta_ = self.curve_.delta_hat
        return self
