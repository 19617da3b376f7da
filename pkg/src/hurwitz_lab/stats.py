"""Rational ensembles, cost moments, Gaussian fit, residues mod q and Dirichlet sums.

The ensembles are

    Sigma_n = {z in I cap K : ht(z)^2 = n},    Omega_N = union of Sigma_n, n <= N,

where ht(a/b) = max(|a|, |b|) for the reduced fraction; inside I this is |b|.
The origin 0 = 0/1 belongs to Sigma_1. Large ensembles are processed by a
compiled kernel that walks one denominator per associate class, runs the
nearest-integer Euclidean algorithm on every numerator and only keeps
histograms indexed by ht^2.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy import stats as sps

from .cf import CostFunction, expand
from .errors import DegenerateSample
from .ring import FieldConfig, QuadInt, QuadRat, closed_domain_contains, field_config, qnorm, strict_domain_contains

LMAX = 128
RESERVOIR = 1_000_000


@dataclass(frozen=True)
class OmegaSpec:
    """Omega_N for one field: reduced z in I with ht(z)^2 <= N.

    ``domain`` selects the closed cell I (default) or the strict domain I'.
    """

    d: int
    N: int
    domain: str = "closed"

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if self.domain not in ("closed", "strict"):
            raise ValueError("domain must be 'closed' or 'strict'")
        field_config(self.d)

    @property
    def cfg(self) -> FieldConfig:
        return field_config(self.d)


# ---------------------------------------------------------------------------
# pure Python reference enumeration


def _canonical_denominators(cfg: FieldConfig, n: int) -> list:
    """One denominator per associate class with qnorm = n (sorted)."""
    from .ring import canonical_associate

    out = set()
    r = math.isqrt(4 * n) + 2
    for a in range(-r, r + 1):
        for b in range(-r, r + 1):
            x = QuadInt(a, b, cfg.d)
            if qnorm(x) == n:
                out.add(canonical_associate(x))
    return sorted(out, key=lambda x: (x.a, x.b))


def enumerate_sigma(cfg: FieldConfig, n: int, domain: str = "closed") -> list:
    """All reduced a/b in I (or I') with qnorm(b) = n, in lexicographic order of (b, a)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    from .ring import quad_gcd

    inside = closed_domain_contains if domain == "closed" else strict_domain_contains
    R = math.sqrt(float(cfg.R_sq) * n)
    out = []
    for b in _canonical_denominators(cfg, n):
        rb = int(R) + 2
        for a1 in range(-2 * rb, 2 * rb + 1):
            for a2 in range(-2 * rb, 2 * rb + 1):
                a = QuadInt(a1, a2, cfg.d)
                if qnorm(a) > float(cfg.R_sq) * n:
                    continue
                z = QuadRat.from_fraction(a, b)
                if not inside(z, cfg):
                    continue
                if a and qnorm(quad_gcd(a, b)) != 1:
                    continue
                if not a and n != 1:
                    continue
                out.append(z)
    return out


def enumerate_omega(spec: OmegaSpec):
    """Stream (z, expansion) over Omega_N ordered by ht^2, then (den, num)."""
    for n in range(1, spec.N + 1):
        for z in enumerate_sigma(spec.cfg, n, spec.domain):
            yield z, expand(z, spec.cfg)


# ---------------------------------------------------------------------------
# compiled kernel


@numba.njit(cache=True)
def _closed(hexa, d, p, q, D):
    if not hexa:
        return 2 * abs(p) <= D and 2 * abs(q) <= D
    s = 2 * p + q
    if abs(s) > D:
        return False
    lim = (d + 1) * D
    dq = d * q
    return 2 * abs(dq + s) <= lim and 2 * abs(dq - s) <= lim


@numba.njit(cache=True)
def _strict(hexa, d, p, q, D):
    if not _closed(hexa, d, p, q, D):
        return False
    if _closed(hexa, d, p - D, q, D) or _closed(hexa, d, p, q - D, D):
        return False
    if hexa and _closed(hexa, d, p - D, q + D, D):
        return False
    return True


@numba.njit(cache=True)
def _floordiv(a, b):
    # b > 0
    q = a // b
    return q


@numba.njit(cache=True)
def _round(hexa, d, p, q, D):
    """Nearest integer of (p + q w)/D under the strict-domain convention."""
    a0 = _floordiv(2 * p + D, 2 * D)
    b0 = _floordiv(2 * q + D, 2 * D)
    if not hexa:
        return a0, b0
    for da in range(-1, 2):
        for db in range(-1, 2):
            a = a0 + da
            b = b0 + db
            if _strict(hexa, d, p - a * D, q - b * D, D):
                return a, b
    return a0 + 99, b0 + 99  # unreachable for a valid tiling


@numba.njit(cache=True)
def _mul(hexa, d, k, x1, y1, x2, y2):
    if hexa:
        return x1 * x2 - k * y1 * y2, x1 * y2 + y1 * x2 + y1 * y2
    return x1 * x2 - d * y1 * y2, x1 * y2 + y1 * x2


@numba.njit(cache=True)
def _conj(hexa, x, y):
    if hexa:
        return x + y, -y
    return x, -y


@numba.njit(cache=True)
def _norm(hexa, d, k, x, y):
    if hexa:
        return x * x + x * y + k * y * y
    return x * x + d * y * y


@numba.njit(cache=True)
def _canonical(hexa, d, a, b):
    if d == 1 or d == 3:
        return a > 0 and b >= 0
    return a > 0 or (a == 0 and b > 0)


@numba.njit(cache=True)
def _kernel(d, hexa, N, R_sq, strict_dom, table, toff, tdefault, wvals, n_shells, shell_of, res_size, seed):
    k = (1 + d) // 4
    hist_len = np.zeros((N + 1, LMAX), dtype=np.int64)
    cmax = table.max() if table.size > 0 else 0
    cmax = max(cmax, tdefault)
    hist_tab = np.zeros((N + 1, LMAX * (cmax + 1)), dtype=np.int64)
    s1 = np.zeros(N + 1)
    s2 = np.zeros(N + 1)
    ew = np.zeros((N + 1, wvals.size), dtype=np.complex128)
    res = np.zeros((n_shells, res_size))
    seen = np.zeros(n_shells, dtype=np.int64)
    law_viol = 0
    np.random.seed(seed)
    logR = 0.5 * math.log(1.0 / R_sq)
    rmax = int(math.sqrt(4.0 * N)) + 2
    tw = table.shape[0]
    for b1 in range(-rmax, rmax + 1):
        for b2 in range(-rmax, rmax + 1):
            n = _norm(hexa, d, k, b1, b2)
            if n == 0 or n > N or not _canonical(hexa, d, b1, b2):
                continue
            cb1, cb2 = _conj(hexa, b1, b2)
            lim = R_sq * n
            rb = int(math.sqrt(lim)) + 2
            a2max = 2 * rb if hexa else rb
            sh = shell_of[n]
            bound = math.log(math.sqrt(n)) / logR + 1 + 1e-9 if n > 1 else 1.0
            for a2 in range(-a2max, a2max + 1):
                for a1 in range(-2 * rb, 2 * rb + 1):
                    na = _norm(hexa, d, k, a1, a2)
                    if na > lim:
                        continue
                    # z = a conj(b) / n
                    p, q = _mul(hexa, d, k, a1, a2, cb1, cb2)
                    if strict_dom:
                        if not _strict(hexa, d, p, q, n):
                            continue
                    elif not _closed(hexa, d, p, q, n):
                        continue
                    # Euclid on (num, den) = (a, b): digit = round(den / num)
                    x1, y1, x2, y2 = a1, a2, b1, b2
                    ell = 0
                    clog = 0.0
                    ctab = 0
                    while x1 != 0 or y1 != 0:
                        cx, cy = _conj(hexa, x1, y1)
                        D = _norm(hexa, d, k, x1, y1)
                        pp, qq = _mul(hexa, d, k, x2, y2, cx, cy)
                        al, be = _round(hexa, d, pp, qq, D)
                        mx, my = _mul(hexa, d, k, al, be, x1, y1)
                        x1, y1, x2, y2 = x2 - mx, y2 - my, x1, y1
                        ell += 1
                        clog += 0.5 * math.log(_norm(hexa, d, k, al, be))
                        ia, ib = al + toff, be + toff
                        if 0 <= ia < tw and 0 <= ib < tw:
                            ctab += table[ia, ib]
                        else:
                            ctab += tdefault
                    if _norm(hexa, d, k, x2, y2) != 1:
                        continue  # not reduced
                    if a1 == 0 and a2 == 0 and n != 1:
                        continue
                    if ell >= LMAX:
                        ell = LMAX - 1
                    if ell > bound:
                        law_viol += 1
                    hist_len[n, ell] += 1
                    if ctab >= hist_tab.shape[1]:
                        ctab = hist_tab.shape[1] - 1
                    hist_tab[n, ctab] += 1
                    s1[n] += clog
                    s2[n] += clog * clog
                    for j in range(wvals.size):
                        ew[n, j] += np.exp(wvals[j] * clog)
                    # reservoir of log-abs costs per shell
                    t = seen[sh]
                    if t < res_size:
                        res[sh, t] = clog
                    else:
                        r = np.random.randint(0, t + 1)
                        if r < res_size:
                            res[sh, r] = clog
                    seen[sh] = t + 1
    return hist_len, hist_tab, s1, s2, ew, res, seen, law_viol


@dataclass
class EnsembleData:
    """Per-ht^2 accumulators of one enumeration pass over Omega_N."""

    d: int
    N: int
    domain: str
    cost_ids: tuple
    hist_len: np.ndarray = field(repr=False)
    hist_tab: np.ndarray = field(repr=False)
    s1: np.ndarray = field(repr=False)
    s2: np.ndarray = field(repr=False)
    ew: np.ndarray = field(repr=False)
    wvals: np.ndarray = field(repr=False)
    reservoir: np.ndarray = field(repr=False)
    seen: np.ndarray = field(repr=False)
    shells: np.ndarray = field(repr=False)
    law_violations: int = 0
    seconds: float = float("nan")  # wall time of the enumeration pass

    def count(self, N: int) -> int:
        return int(self.hist_len[: N + 1].sum())

    def counts_by_n(self) -> np.ndarray:
        return self.hist_len.sum(axis=1)

    def cost_hist(self, cost: CostFunction, N: int) -> tuple:
        """(values, counts) of an integer cost over Omega_N."""
        h = self.hist_len if cost.kind == "constant_one" else self.hist_tab
        if cost.kind == "log_abs":
            raise ValueError("log_abs is not integer valued")
        tot = h[: N + 1].sum(axis=0)
        vals = np.nonzero(tot)[0]
        return vals.astype(float), tot[vals]

    def save(self, path) -> None:
        tmp = str(path) + ".tmp.npz"
        np.savez_compressed(
            tmp,
            meta=np.array([self.d, self.N, self.law_violations]),
            domain=np.array(self.domain),
            cost_ids=np.array(self.cost_ids),
            hist_len=self.hist_len,
            hist_tab=self.hist_tab,
            s1=self.s1,
            s2=self.s2,
            ew=self.ew,
            wvals=self.wvals,
            reservoir=self.reservoir,
            seen=self.seen,
            shells=self.shells,
            seconds=np.array(self.seconds),
        )
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "EnsembleData":
        z = np.load(path, allow_pickle=False)
        d, N, viol = (int(x) for x in z["meta"])
        secs = float(z["seconds"]) if "seconds" in z.files else float("nan")
        return cls(d, N, str(z["domain"]), tuple(str(x) for x in z["cost_ids"]), z["hist_len"], z["hist_tab"], z["s1"], z["s2"], z["ew"], z["wvals"], z["reservoir"], z["seen"], z["shells"], viol, secs)


def _table_array(cost: CostFunction | None):
    if cost is None or cost.kind != "custom_integer" or not cost.table:
        return np.zeros((0, 0), dtype=np.int64), 0, int(cost.default) if cost is not None and cost.kind == "custom_integer" else 0
    K = max(max(abs(a), abs(b)) for (a, b), _ in cost.table)
    arr = np.full((2 * K + 1, 2 * K + 1), cost.default, dtype=np.int64)
    for (a, b), v in cost.table:
        arr[a + K, b + K] = v
    return arr, K, int(cost.default)


def run_ensemble(
    spec: OmegaSpec,
    checkpoints=(),
    table_cost: CostFunction | None = None,
    wvals=(),
    seed: int = 0,
    reservoir: int = RESERVOIR,
) -> EnsembleData:
    """One compiled pass over Omega_N accumulating histograms for every ht^2.

    The length histogram is always kept; ``table_cost`` adds a histogram for
    a custom integer cost; log-abs costs are kept through sums, the values
    exp(w C) for each w in ``wvals``, and a seeded reservoir per checkpoint
    shell.
    """
    cfg = spec.cfg
    cps = sorted(set(int(c) for c in checkpoints if c <= spec.N) | {spec.N})
    shell_of = np.zeros(spec.N + 1, dtype=np.int64)
    lo = 0
    for i, c in enumerate(cps):
        shell_of[lo + 1 : c + 1] = i
        lo = c
    table, toff, tdef = _table_array(table_cost)
    w = np.asarray(list(wvals), dtype=np.complex128)
    per_shell = max(1, reservoir // len(cps))
    t0 = time.perf_counter()
    out = _kernel(cfg.d, cfg.hexagonal, spec.N, float(cfg.R_sq), spec.domain == "strict", table, toff, tdef, w, len(cps), shell_of, per_shell, seed)
    hist_len, hist_tab, s1, s2, ew, res, seen, viol = out
    ids = ("len", "logabs") + ((table_cost.id,) if table_cost is not None and table_cost.kind == "custom_integer" else ())
    secs = time.perf_counter() - t0
    return EnsembleData(cfg.d, spec.N, spec.domain, ids, hist_len, hist_tab, s1, s2, ew, w, res, seen, np.array(cps), int(viol), secs)


def cached_ensemble(spec: OmegaSpec, cache_dir=None, **kw) -> EnsembleData:
    """run_ensemble with an on-disk cache keyed by the spec and options."""
    cache_dir = Path(cache_dir or os.environ.get("HURWITZ_LAB_CACHE", Path.home() / ".cache" / "hurwitz_lab"))
    key = repr((spec, sorted((k, repr(v)) for k, v in kw.items())))
    path = cache_dir / f"omega-{hashlib.sha256(key.encode()).hexdigest()[:16]}.npz"
    if path.exists():
        return EnsembleData.load(path)
    data = run_ensemble(spec, **kw)
    cache_dir.mkdir(parents=True, exist_ok=True)
    data.save(path)
    return data


# ---------------------------------------------------------------------------
# statistics


def ks_normal(sample) -> float:
    """Sup distance between the empirical CDF of the standardised sample and Phi."""
    x = np.asarray(sample, dtype=float)
    if x.size < 100:
        raise ValueError("KS needs at least 100 values")
    sd = x.std()
    if sd == 0:
        return 0.5  # point mass against Phi
    return ks_normal_weighted(*np.unique(x, return_counts=True))


def ks_normal_weighted(values, counts) -> float:
    """Exact KS distance for a discrete sample given as distinct values with multiplicities."""
    v = np.asarray(values, dtype=float)
    c = np.asarray(counts, dtype=float)
    n = c.sum()
    mean = (v * c).sum() / n
    var = ((v - mean) ** 2 * c).sum() / n
    if var <= 0:
        raise DegenerateSample("zero standard deviation")
    t = (v - mean) / math.sqrt(var)
    order = np.argsort(t)
    t, c = t[order], c[order]
    F = np.cumsum(c) / n
    Fm = F - c / n
    Phi = sps.norm.cdf(t)
    return float(max(np.max(np.abs(F - Phi)), np.max(np.abs(Fm - Phi))))


@dataclass
class MomentRow:
    N: int
    count: int
    mean: float
    var: float
    ks: float
    cost: str


@dataclass
class MomentTable:
    rows: list

    def column(self, name: str, cost: str = "len") -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows if r.cost == cost])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "count", "mean", "var", "ks", "cost"])
        for r in self.rows:
            w.writerow([r.N, r.count, f"{r.mean:.12g}", f"{r.var:.12g}", f"{r.ks:.12g}", r.cost])
        return buf.getvalue()


def _reservoir_sample(data: EnsembleData, N: int, seed: int) -> np.ndarray:
    """Weighted merge of the shell reservoirs making up Omega_N."""
    rng = np.random.default_rng(seed)
    idx = int(np.searchsorted(data.shells, N))
    if data.shells[idx] != N:
        raise ValueError(f"{N} is not a checkpoint of this ensemble")
    size = data.reservoir.shape[1]
    total = data.seen[: idx + 1].sum()
    parts = []
    for s in range(idx + 1):
        k = min(data.seen[s], size)
        take = int(round(size * data.seen[s] / total))
        pool = data.reservoir[s, :k]
        if k and take:
            parts.append(rng.choice(pool, size=take, replace=take > k))
    return np.concatenate(parts) if parts else np.zeros(0)


def moment_table(spec: OmegaSpec, costs, N_grid, data: EnsembleData | None = None, seed: int = 0) -> MomentTable:
    """Count, mean, variance and KS distance of each cost over Omega_N for N in N_grid."""
    N_grid = [int(n) for n in N_grid]
    if any(b <= a for a, b in zip(N_grid, N_grid[1:])):
        raise ValueError("N_grid must be increasing")
    if max(N_grid) > spec.N:
        raise ValueError("N_grid exceeds the ensemble bound")
    table = next((c for c in costs if c.kind == "custom_integer"), None)
    if data is None:
        data = run_ensemble(spec, N_grid, table_cost=table, seed=seed)
    rows = []
    for c in costs:
        for N in N_grid:
            cnt = data.count(N)
            if c.kind == "log_abs":
                m1 = data.s1[: N + 1].sum() / cnt
                var = data.s2[: N + 1].sum() / cnt - m1 * m1
                sample = _reservoir_sample(data, N, seed)
                ks = ks_normal(sample) if sample.size >= 100 else float("nan")
            else:
                vals, cts = data.cost_hist(c, N)
                m1 = float((vals * cts).sum() / cnt)
                var = float(((vals - m1) ** 2 * cts).sum() / cnt)
                ks = ks_normal_weighted(vals, cts) if cnt >= 100 and var > 0 else float("nan")
            rows.append(MomentRow(N, cnt, float(m1), float(max(var, 0.0)), ks, c.id))
    return MomentTable(rows)


def linear_fit(x, y) -> tuple:
    """Least-squares slope, intercept and R^2."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    A = np.column_stack([x, np.ones_like(x)])
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ np.array([slope, icpt])
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return float(slope), float(icpt), 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


@dataclass
class ModqRow:
    N: int
    q: int
    a: int
    count: int
    deviation: float


def modq_table(spec: OmegaSpec, cost: CostFunction, q: int, N_grid, data: EnsembleData | None = None) -> list:
    """Residues of an integer cost mod q over Omega_N; deviation = max_a |P(C = a mod q) - 1/q|."""
    if q < 1:
        raise ValueError("q must be positive")
    if not cost.integer_valued:
        raise ValueError("mod q statistics need an integer cost")
    if data is None:
        data = run_ensemble(spec, N_grid, table_cost=cost if cost.kind == "custom_integer" else None)
    rows = []
    for N in N_grid:
        vals, cts = data.cost_hist(cost, N)
        hist = np.zeros(q, dtype=np.int64)
        np.add.at(hist, vals.astype(np.int64) % q, cts)
        total = hist.sum()
        dev = float(np.max(np.abs(hist / total - 1.0 / q)))
        rows.extend(ModqRow(N, q, a, int(hist[a]), dev) for a in range(q))
    return rows


def modq_deviation(rows, N: int) -> float:
    return next(r.deviation for r in rows if r.N == N)


def modq_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "q", "a", "count", "deviation"])
    for r in rows:
        w.writerow([r.N, r.q, r.a, r.count, f"{r.deviation:.12g}"])
    return buf.getvalue()


@dataclass
class DirichletRow:
    N: int
    w: complex
    partial: complex
    ratio: float  # |partial(w)| / partial(0)
    fit_slope: float


def dirichlet_partial(spec: OmegaSpec, w: complex, N_grid, cost: CostFunction | None = None, data: EnsembleData | None = None) -> list:
    """Partial sums sum_{n <= N} d_n(w), d_n(w) = sum over Sigma_n of exp(w C(z)).

    The fitted slope of log|partial| against log N over N_grid is attached
    to every row; ``ratio`` normalises by the w = 0 partial sum (|Omega_N|).
    """
    cost = cost or CostFunction.length()
    w = complex(w)
    if w.imag == 0 and abs(w.real) > 0.05:
        raise ValueError("real w must satisfy |w| <= 0.05")
    if w.real != 0 and w.imag != 0:
        raise ValueError("w must be real or purely imaginary")
    if w.imag != 0 and not 0 < abs(w.imag) < math.pi:
        raise ValueError("imaginary w = i tau needs 0 < |tau| < pi")
    if data is None:
        data = run_ensemble(spec, N_grid, table_cost=cost if cost.kind == "custom_integer" else None, wvals=(w,) if cost.kind == "log_abs" else ())
    partials = []
    for N in N_grid:
        if cost.kind == "log_abs":
            j = int(np.argmin(np.abs(data.wvals - w)))
            if abs(data.wvals[j] - w) > 1e-15:
                raise ValueError("ensemble lacks exp(w C) sums for this w")
            s = complex(data.ew[: N + 1, j].sum())
        else:
            vals, cts = data.cost_hist(cost, N)
            s = complex((cts * np.exp(w * vals)).sum())
        partials.append(s)
    counts = [data.count(N) for N in N_grid]
    slope = linear_fit(np.log(N_grid), np.log(np.abs(partials)))[0] if len(N_grid) >= 2 else float("nan")
    return [DirichletRow(N, w, s, abs(s) / c, slope) for N, s, c in zip(N_grid, partials, counts)]


def dirichlet_csv(rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["N", "w_re", "w_im", "partial_re", "partial_im", "fit_slope"])
    for r in rows:
        wr.writerow([r.N, f"{r.w.real:.12g}", f"{r.w.imag:.12g}", f"{r.partial.real:.12g}", f"{r.partial.imag:.12g}", f"{r.fit_slope:.12g}"])
    return buf.getvalue()


def moments_from_orbits(values) -> tuple:
    x = np.asarray(values, dtype=float)
    return float(x.mean()), float(x.var())
