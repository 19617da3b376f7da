"""The nearest-integer (Hurwitz) continued fraction map and digit costs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import HurwitzLabError, OutOfDomain, ZeroInput
from .ring import (
    FieldConfig,
    QuadInt,
    QuadRat,
    closed_domain_contains,
    field_config,
    qnorm,
    round_nearest,
    strict_domain_contains,
)

HIT_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class CostFunction:
    """A digit cost ``c: O_d -> R>=0``.

    ``kind`` is ``"constant_one"`` (total cost = length), ``"log_abs"``
    (c(a) = log|a|) or ``"custom_integer"`` (a finite table keyed by the
    digit's basis coordinates, with a default for absent digits).
    """

    kind: str = "constant_one"
    table: tuple = ()
    default: int = 0
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("constant_one", "log_abs", "custom_integer"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.kind == "custom_integer":
            for _, v in self.table:
                if int(v) != v or v < 0:
                    raise ValueError("custom costs must be non-negative integers")
            if self.default < 0:
                raise ValueError("custom costs must be non-negative integers")

    @classmethod
    def length(cls) -> "CostFunction":
        return cls("constant_one")

    @classmethod
    def log_abs(cls) -> "CostFunction":
        return cls("log_abs")

    @classmethod
    def from_table(cls, mapping: dict, default: int = 0, name: str = "table") -> "CostFunction":
        items = tuple(sorted(((int(a), int(b)), int(v)) for (a, b), v in mapping.items()))
        return cls("custom_integer", items, int(default), name)

    @classmethod
    def from_json_file(cls, path) -> "CostFunction":
        """Load ``{"default": k, "costs": [[a, b, c], ...]}``."""
        with open(path) as fh:
            doc = json.load(fh)
        mapping = {(a, b): c for a, b, c in doc["costs"]}
        return cls.from_table(mapping, doc.get("default", 0), name=str(path))

    @property
    def id(self) -> str:
        if self.kind == "constant_one":
            return "len"
        if self.kind == "log_abs":
            return "logabs"
        return f"table:{self.name}"

    @property
    def integer_valued(self) -> bool:
        return self.kind != "log_abs"

    @property
    def bound(self) -> float:
        """Supremum of the cost (infinite for log_abs)."""
        if self.kind == "constant_one":
            return 1.0
        if self.kind == "log_abs":
            return math.inf
        return float(max([self.default] + [v for _, v in self.table]))

    def lookup(self) -> dict:
        return dict(self.table)

    def __call__(self, alpha: QuadInt) -> float:
        if self.kind == "constant_one":
            return 1
        if self.kind == "log_abs":
            return 0.5 * math.log(qnorm(alpha))
        return dict(self.table).get((alpha.a, alpha.b), self.default)

    def weights(self, a: np.ndarray, b: np.ndarray, norms: np.ndarray) -> np.ndarray:
        """Vectorised evaluation over digit coordinate arrays."""
        if self.kind == "constant_one":
            return np.ones(len(norms))
        if self.kind == "log_abs":
            return 0.5 * np.log(norms)
        lut = dict(self.table)
        return np.array([lut.get((int(x), int(y)), self.default) for x, y in zip(a, b)], dtype=float)


Matrix = tuple  # ((p, q), (r, s)) with QuadInt entries


def _matmul(m1, m2):
    (a, b), (c, d) = m1
    (e, f), (g, h) = m2
    return ((a * e + b * g, a * f + b * h), (c * e + d * g, c * f + d * h))


def det(m) -> QuadInt:
    (a, b), (c, d) = m
    return a * d - b * c


@dataclass
class CFExpansion:
    """Digits, convergent matrices and lazily evaluated costs of a field rational."""

    input: QuadRat
    digits: list
    convergents: list
    _costs: dict = field(default_factory=dict, repr=False)

    @property
    def length(self) -> int:
        return len(self.digits)

    @property
    def costs(self) -> dict:
        return dict(self._costs)

    def cost(self, c: CostFunction) -> float:
        if c.id not in self._costs:
            self._costs[c.id] = cost_total(self, c)
        return self._costs[c.id]

    def reconstruct(self) -> QuadRat:
        return evaluate_digits(self.digits, self.input.d)

    def denominators(self) -> list:
        """Q_0, Q_1, ..., Q_l read off the convergent matrices."""
        one = QuadInt(1, 0, self.input.d)
        return [one] + [m[1][1] for m in self.convergents]

    def to_record(self) -> dict:
        num, den = self.input.as_fraction()
        return {
            "field": self.input.d,
            "num": [str(num.a), str(num.b)],
            "den": [str(den.a), str(den.b)],
            "digits": [[str(a.a), str(a.b)] for a in self.digits],
            "length": self.length,
            "costs": {k: v for k, v in sorted(self._costs.items())},
        }


def _cfg(z: QuadRat, cfg: FieldConfig | None) -> FieldConfig:
    return cfg if cfg is not None else field_config(z.d)


def cf_step(z: QuadRat, cfg: FieldConfig | None = None) -> tuple:
    """One application of T: returns ``([1/z], 1/z - [1/z])``."""
    cfg = _cfg(z, cfg)
    if not z:
        raise ZeroInput("T is not expanded at 0")
    if not closed_domain_contains(z, cfg):
        raise OutOfDomain(f"{z!r} is not in I_{cfg.d}")
    w = z.inverse()
    alpha = round_nearest(w, cfg)
    return alpha, w - alpha


def expand(z: QuadRat, cfg: FieldConfig | None = None) -> CFExpansion:
    cfg = _cfg(z, cfg)
    if not closed_domain_contains(z, cfg):
        raise OutOfDomain(f"{z!r} is not in I_{cfg.d}")
    zero, one = cfg.zero, cfg.one
    m = ((one, zero), (zero, one))
    digits, convs = [], []
    cur = z
    while cur:
        alpha, cur = cf_step(cur, cfg)
        digits.append(alpha)
        m = _matmul(m, ((zero, one), (one, alpha)))
        convs.append(m)
    return CFExpansion(z, digits, convs, {"len": len(digits)})


def evaluate_digits(digits, d: int) -> QuadRat:
    """Value of [a_1, ..., a_n] = 1/(a_1 + 1/(a_2 + ...))."""
    val = QuadRat(0, 0, 1, d)
    for a in reversed(digits):
        val = (val + a).inverse()
    return val


def convergents_reversed_identity(digits) -> bool:
    """Check Q_{n-1}/Q_n = [a_n, ..., a_1] for the matrix product of the digits."""
    if not digits:
        return True
    d = digits[0].d
    zero, one = QuadInt(0, 0, d), QuadInt(1, 0, d)
    m = ((one, zero), (zero, one))
    for a in digits:
        m = _matmul(m, ((zero, one), (one, a)))
    q_prev, q_n = m[1][0], m[1][1]
    if not q_n:
        return False
    return QuadRat.from_fraction(q_prev, q_n) == evaluate_digits(list(reversed(digits)), d)


def cost_total(e: CFExpansion, c: CostFunction) -> float:
    return sum(c(a) for a in e.digits) if e.digits else 0


def expansions_json(expansions) -> str:
    """JSON array of expansion records (integers as decimal strings)."""
    return json.dumps([e.to_record() for e in expansions], indent=1)


def h_branch(z: QuadRat, alpha: QuadInt) -> QuadRat:
    """The inverse branch z -> 1/(z + alpha)."""
    return (z + alpha).inverse()


def in_image_of_cylinder(z: QuadRat, alpha: QuadInt, cfg: FieldConfig | None = None) -> bool:
    """Exact membership of z in T(O_alpha)."""
    cfg = _cfg(z, cfg)
    if not strict_domain_contains(z, cfg):
        return False
    w = z + alpha
    if not w:
        return False
    return closed_domain_contains(w.inverse(), cfg)


# ---------------------------------------------------------------------------
# floating point orbits


def _lattice_candidates(z: np.ndarray, cfg: FieldConfig):
    """Basis coordinates of the nearest lattice point (Voronoi rounding)."""
    s = math.sqrt(cfg.d)
    if not cfg.hexagonal:
        a = np.floor(z.real + 0.5)
        b = np.floor(z.imag / s + 0.5)
        return a.astype(np.int64), b.astype(np.int64)
    q = 2 * z.imag / s
    p = z.real - q / 2
    a0, b0 = np.rint(p), np.rint(q)
    best = None
    best_d = None
    for da in (-1, 0, 1):
        for db in (-1, 0, 1):
            a, b = a0 + da, b0 + db
            c = (a + b / 2) + 1j * (b * s / 2)
            dist = np.abs(z - c)
            if best is None:
                best, best_d = (a.copy(), b.copy()), dist
            else:
                upd = dist < best_d
                best[0][upd], best[1][upd] = a[upd], b[upd]
                best_d = np.where(upd, dist, best_d)
    return best[0].astype(np.int64), best[1].astype(np.int64)


def lattice_point(a, b, cfg: FieldConfig):
    """Complex value of a + b w for array coordinates."""
    s = math.sqrt(cfg.d)
    if cfg.hexagonal:
        return (a + b / 2) + 1j * (b * s / 2)
    return a + 1j * (b * s)


def round_nearest_float(z, cfg: FieldConfig):
    """Vectorised nearest-integer rounding of complex floats; returns (a, b) arrays."""
    z = np.asarray(z, dtype=complex)
    return _lattice_candidates(z, cfg)


def closed_domain_contains_float(z, cfg: FieldConfig, tol: float = 0.0):
    """Vectorised closed-cell test, optionally shrunk (tol > 0) or grown (tol < 0)."""
    z = np.asarray(z, dtype=complex)
    x, y = z.real, z.imag
    ok = np.abs(x) <= 0.5 - tol
    s = math.sqrt(cfg.d)
    if not cfg.hexagonal:
        return ok & (np.abs(y) <= s / 2 - tol)
    c = (cfg.d + 1) / (4 * s)
    # distance to the slanted sides is |y +- x/s - c| / sqrt(1 + 1/d)
    scale = math.sqrt(1 + 1 / cfg.d)
    return ok & (np.abs(y + x / s) <= c - tol * scale) & (np.abs(y - x / s) <= c - tol * scale)


def gauss_map_float(z, cfg: FieldConfig):
    """Vectorised T on complex floats (z must be non-zero); returns (a, b, T z)."""
    w = 1.0 / np.asarray(z, dtype=complex)
    a, b = _lattice_candidates(w, cfg)
    return a, b, w - lattice_point(a, b, cfg)


def _to_rat(zc: complex, d: int) -> QuadRat:
    u = Fraction(zc.real)
    v = Fraction(zc.imag) / Fraction(math.sqrt(d)) if d != 1 else Fraction(zc.imag)
    return QuadRat.from_uv(u, v, d)


@dataclass
class OrbitResult:
    cost: float
    digits: list
    hit_zero: bool
    final: complex
    partial_costs: list = field(default_factory=list)


def orbit_cost_float(z0: complex, n: int, c: CostFunction, d: int = 1, exact_rounding: bool = True) -> OrbitResult:
    """Partial cost C_n(z0) along a double precision orbit of T.

    Rounding decisions are taken exactly at the binary rational nearest to
    each 1/z (unless ``exact_rounding`` is off). When the orbit falls within
    1e-12 of zero the input was (numerically) a field rational; the partial
    result is returned with ``hit_zero`` set.
    """
    cfg = field_config(d)
    z = complex(z0)
    total = 0.0
    digits, partial = [], []
    for _ in range(n):
        if abs(z) < HIT_ZERO_TOL:
            return OrbitResult(total, digits, True, z, partial)
        w = 1.0 / z
        if exact_rounding:
            alpha = round_nearest(_to_rat(w, d), cfg)
        else:
            a, b = _lattice_candidates(np.array([w]), cfg)
            alpha = QuadInt(int(a[0]), int(b[0]), d)
        digits.append(alpha)
        total += c(alpha)
        partial.append(total)
        z = w - complex(alpha)
    return OrbitResult(total, digits, abs(z) < HIT_ZERO_TOL, z, partial)


def birkhoff_log_jacobian(cfg: FieldConfig, n_steps: int, n_orbits: int = 8, seed: int = 0) -> float:
    """Time average of log|J_T| = -4 log|z| along random float orbits."""
    rng = np.random.default_rng(seed)
    z = _uniform_points(cfg, n_orbits, rng)
    acc = 0.0
    count = 0
    for _ in range(n_steps):
        r = np.abs(z)
        good = r > HIT_ZERO_TOL
        acc += float(np.sum(-4 * np.log(r[good])))
        count += int(good.sum())
        z = np.where(good, z, _uniform_points(cfg, len(z), rng))
        _, _, z = gauss_map_float(z, cfg)
    return acc / count


def _uniform_points(cfg: FieldConfig, n: int, rng) -> np.ndarray:
    s = math.sqrt(cfg.d)
    ymax = (cfg.d + 1) / (4 * s) if cfg.hexagonal else s / 2
    out = np.empty(0, dtype=complex)
    while len(out) < n:
        z = rng.uniform(-0.5, 0.5, 2 * n) + 1j * rng.uniform(-ymax, ymax, 2 * n)
        out = np.concatenate([out, z[closed_domain_contains_float(z, cfg)]])
    return out[:n]


class HurwitzCostTransformer(TransformerMixin, BaseEstimator):
    """Map points of I to their partial costs C_1, ..., C_n along float orbits.

    ``fit`` only validates parameters; ``transform`` returns one row of
    cumulative costs per input point (complex array or (n, 2) real array).
    """

    def __init__(self, d: int = 1, n_steps: int = 10, cost: str = "len"):
        self.d = d
        self.n_steps = n_steps
        self.cost = cost

    def _cost_fn(self) -> CostFunction:
        return {"len": CostFunction.length(), "logabs": CostFunction.log_abs()}[self.cost]

    def fit(self, X=None, y=None):
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")
        self.cfg_ = field_config(self.d)
        self.cost_fn_ = self._cost_fn()
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "cfg_"):
            raise RuntimeError("HurwitzCostTransformer is not fitted")
        z = np.asarray(X)
        if z.ndim == 2:
            z = z[:, 0] + 1j * z[:, 1]
        z = z.astype(complex)
        out = np.zeros((len(z), self.n_steps))
        total = np.zeros(len(z))
        alive = np.abs(z) > HIT_ZERO_TOL
        for k in range(self.n_steps):
            zz = np.where(alive, z, 1.0)
            a, b, nz = gauss_map_float(zz, self.cfg_)
            norms = np.abs(lattice_point(a, b, self.cfg_)) ** 2
            total = total + np.where(alive, self.cost_fn_.weights(a, b, np.maximum(norms, 1e-300)), 0.0)
            out[:, k] = total
            z = np.where(alive, nz, 0)
            alive = alive & (np.abs(z) > HIT_ZERO_TOL)
        return out


# ---------------------------------------------------------------------------
# empty cylinders


def _digit_ball(cfg: FieldConfig, norm_bound: int) -> list:
    out = []
    r = int(math.isqrt(4 * norm_bound)) + 2
    for a in range(-r, r + 1):
        for b in range(-r, r + 1):
            alpha = QuadInt(a, b, cfg.d)
            n = qnorm(alpha)
            if 0 < n <= norm_bound:
                out.append(alpha)
    out.sort(key=lambda x: (qnorm(x), x.a, x.b))
    return out


def digits_up_to(cfg: FieldConfig, norm_bound: int) -> list:
    """All non-zero alpha with qnorm(alpha) <= norm_bound, ordered by norm."""
    return _digit_ball(cfg, norm_bound)


def _inversion_disks(cfg: FieldConfig):
    # 1/w beyond side (cu u + cv v <= c)  <=>  c(u^2 + d v^2) - cu u + cv v < 0
    return [(hp.c, -hp.cu, hp.cv) for hp in cfg.boundary_lines]


def _in_some_disk(cfg: FieldConfig, disks, u, v) -> list:
    r2 = u * u + cfg.d * v * v
    return [i for i, (c, pu, pv) in enumerate(disks) if c * r2 + pu * u + pv * v < 0]


def _triangle_covered(cfg, disks, tri, depth) -> bool:
    sets = [set(_in_some_disk(cfg, disks, u, v)) for u, v in tri]
    if sets[0] & sets[1] & sets[2]:
        return True
    if depth == 0:
        return False
    (a, b, c) = tri
    ab = ((a[0] + b[0]) / 2, (a[1] + b[1]) / 2)
    bc = ((b[0] + c[0]) / 2, (b[1] + c[1]) / 2)
    ca = ((c[0] + a[0]) / 2, (c[1] + a[1]) / 2)
    return all(
        _triangle_covered(cfg, disks, t, depth - 1)
        for t in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))
    )


def translate_covered_by_inversion_disks(cfg: FieldConfig, alpha: QuadInt, depth: int = 7) -> bool:
    """Certify exactly that the closed cell I + alpha misses I^{-1}.

    The cell is triangulated and refined until every triangle lies inside a
    single open inversion disk of a side of I (each such disk is convex, so
    checking the vertices suffices).
    """
    du, dv = alpha.uv()
    verts = [(u + du, v + dv) for u, v in cfg.vertices_uv()]
    centre = (du, dv)
    disks = _inversion_disks(cfg)
    for p, q in zip(verts, verts[1:] + verts[:1]):
        if not _triangle_covered(cfg, disks, (centre, p, q), depth):
            return False
    return True


def _witness(cfg: FieldConfig, alpha: QuadInt, grid: int) -> QuadRat | None:
    """Search an exact point z of I with [1/z] = alpha."""
    verts = cfg.vertices_uv()
    umin = min(u for u, _ in verts)
    vmin = min(v for _, v in verts)
    umax = max(u for u, _ in verts)
    vmax = max(v for _, v in verts)
    for i in range(grid + 1):
        for j in range(grid + 1):
            t = QuadRat.from_uv(umin + (umax - umin) * Fraction(i, grid), vmin + (vmax - vmin) * Fraction(j, grid), cfg.d)
            if not strict_domain_contains(t, cfg):
                continue
            w = t + alpha
            if not w:
                continue
            z = w.inverse()
            if closed_domain_contains(z, cfg) and round_nearest(w, cfg) == alpha:
                return z
    return None


def empty_digit_scan(cfg: FieldConfig, norm_bound: int = 16, sample: int = 48, grid: int = 24) -> set:
    """Digits alpha with qnorm(alpha) <= norm_bound whose cylinder O_alpha is empty.

    A digit is declared empty only when an exact sample of I produced no
    point with that first digit, a directed search inside I' + alpha found no
    witness, and the closed translate I + alpha is certified to lie in the
    union of the open inversion disks of the sides of I.
    """
    if norm_bound < 4:
        raise ValueError("norm_bound must be at least 4")
    seen = set()
    verts = cfg.vertices_uv()
    umin, umax = min(u for u, _ in verts), max(u for u, _ in verts)
    vmin, vmax = min(v for _, v in verts), max(v for _, v in verts)
    for i in range(sample + 1):
        for j in range(sample + 1):
            z = QuadRat.from_uv(umin + (umax - umin) * Fraction(i, sample), vmin + (vmax - vmin) * Fraction(j, sample), cfg.d)
            if z and closed_domain_contains(z, cfg):
                seen.add(round_nearest(z.inverse(), cfg))
    empty = set()
    for alpha in _digit_ball(cfg, norm_bound):
        if alpha in seen or _witness(cfg, alpha, grid) is not None:
            continue
        if translate_covered_by_inversion_disks(cfg, alpha):
            empty.add(alpha)
        else:
            raise HurwitzLabError(f"undecided cylinder for digit {alpha}")
    return empty


# ---------------------------------------------------------------------------
# contraction and distortion of inverse branches


@dataclass
class BranchSample:
    jacobian_over_R4: float
    max_jacobian: float
    max_distortion: float
    max_distortion_euclidean: float
    distortion_bound: float
    n: int


def sample_branch_distortion(cfg: FieldConfig, n: int, norm_bound: int = 400, seed: int = 0, batch: int = 200_000) -> BranchSample:
    """Sample pairs (alpha, z) with z in T(O_alpha) and record |h'|^2 and log-derivative sizes of J_alpha.

    The distortion ratio is reported for tangent vectors normalised as
    |v_1|^2 + |v_2|^2 = 1/2 in the Wirtinger frame (Euclidean length 1/2),
    for which |d_v J| / J = 2/|z + alpha|. The Euclidean-unit value is twice
    that and is reported alongside.
    """
    rng = np.random.default_rng(seed)
    digits = _digit_ball(cfg, norm_bound)
    da = np.array([a.a for a in digits])
    db = np.array([a.b for a in digits])
    dvals = lattice_point(da, db, cfg)
    R4 = float(cfg.R_sq) ** 2
    max_j = 0.0
    max_dist = 0.0
    got = 0
    while got < n:
        m = min(batch, n - got)
        z = _uniform_points(cfg, m, rng)
        k = rng.integers(0, len(digits), m)
        w = z + dvals[k]
        h = 1.0 / w
        ok = closed_domain_contains_float(h, cfg)
        h = h[ok]
        if len(h) == 0:
            continue
        jac = np.abs(h) ** 4
        max_j = max(max_j, float(jac.max()))
        max_dist = max(max_dist, float((2 * np.abs(h)).max()))
        got += len(h)
    rho = R4
    bound = 2 * cfg.R / (1 - math.sqrt(rho))
    return BranchSample(max_j / R4, max_j, max_dist, 2 * max_dist, bound, got)
