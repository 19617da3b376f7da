"""Generalised circles, the W_n recursion and the Markov cell complex.

Everything is expressed in the coordinates ``z = u + v*sqrt(-d)``, in which
``|z|^2 = u^2 + d v^2``. A generalised circle is the locus

    A |z|^2 + 2 Re(conj(B) z) + C = 0,    B = b1 + b2 sqrt(-d),

i.e. ``A(u^2 + d v^2) + 2(b1 u + d b2 v) + C = 0`` with rational data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator

from .cf import closed_domain_contains_float, digits_up_to, lattice_point
from .errors import NoStabilization, ResolutionTooCoarse
from .ring import FieldConfig, QuadInt, QuadRat, closed_domain_contains, field_config, qnorm

Point = tuple  # (u, v) with Fraction entries


def _lcm(a: int, b: int) -> int:
    return a * b // math.gcd(a, b)


@dataclass(frozen=True, eq=False)
class GenCircle:
    """An exact line or circle; equality and hashing use the canonical form.

    ``anchor`` is an exact rational point of the locus (not part of the
    identity) from which further rational points are produced.
    """

    A: Fraction
    b1: Fraction
    b2: Fraction
    C: Fraction
    d: int
    anchor: Point | None = None

    def __post_init__(self):
        for name in ("A", "b1", "b2", "C"):
            object.__setattr__(self, name, Fraction(getattr(self, name)))
        if not (self.A or self.b1 or self.b2 or self.C):
            raise ValueError("zero coefficient triple")
        if self.discriminant <= 0:
            raise ValueError("degenerate generalised circle")
        if self.anchor is not None and self.value(*self.anchor) != 0:
            raise ValueError("anchor is not on the curve")

    @property
    def discriminant(self) -> Fraction:
        return self.b1 * self.b1 + self.d * self.b2 * self.b2 - self.A * self.C

    @property
    def is_line(self) -> bool:
        return self.A == 0

    def key(self) -> tuple:
        """Primitive integer data with the first non-zero entry positive."""
        vals = (self.A, self.b1, self.b2, self.C)
        den = reduce(_lcm, (x.denominator for x in vals), 1)
        ints = [int(x * den) for x in vals]
        g = reduce(math.gcd, ints, 0)
        ints = [x // g for x in ints]
        first = next(x for x in ints if x)
        if first < 0:
            ints = [-x for x in ints]
        return tuple(ints)

    def canonical(self) -> "GenCircle":
        A, b1, b2, C = self.key()
        return GenCircle(A, b1, b2, C, self.d, self.anchor)

    def __eq__(self, other):
        return isinstance(other, GenCircle) and self.d == other.d and self.key() == other.key()

    def __hash__(self):
        return hash((self.d, self.key()))

    def value(self, u, v) -> Fraction:
        return self.A * (u * u + self.d * v * v) + 2 * (self.b1 * u + self.d * self.b2 * v) + self.C

    def sign(self, z) -> int:
        u, v = z.uv() if isinstance(z, QuadRat) else z
        val = self.value(Fraction(u), Fraction(v))
        return (val > 0) - (val < 0)

    def contains(self, z) -> bool:
        return self.sign(z) == 0

    def float_value(self, x, y):
        """Vectorised form value at real coordinates x + iy."""
        s = math.sqrt(self.d)
        return float(self.A) * (x * x + y * y) + 2 * (float(self.b1) * x + s * float(self.b2) * y) + float(self.C)

    def center_radius(self):
        """Centre (complex) and radius of a circle in the plane."""
        if self.is_line:
            raise ValueError("a line has no centre")
        s = math.sqrt(self.d)
        c = complex(-float(self.b1 / self.A), -s * float(self.b2 / self.A))
        return c, math.sqrt(float(self.discriminant / (self.A * self.A)))

    def rational_point(self, t: Fraction) -> Point | None:
        """Second intersection of the curve with the line through the anchor of slope t (uv coordinates)."""
        if self.anchor is None:
            return None
        pu, pv = self.anchor
        t = Fraction(t)
        # point (pu + s, pv + s t): A(s^2 (1 + d t^2) + 2 s (pu + d pv t)) + 2 s (b1 + d b2 t) = 0
        if self.is_line:
            # direction must lie along the line: b1 + d b2 t = 0
            if self.b2 == 0:
                return (pu, pv + t)
            return (pu + t, pv - self.b1 * t / (self.d * self.b2))
        qa = self.A * (1 + self.d * t * t)
        qb = 2 * self.A * (pu + self.d * pv * t) + 2 * (self.b1 + self.d * self.b2 * t)
        s = -qb / qa
        return (pu + s, pv + s * t)

    def __repr__(self):
        A, b1, b2, C = self.key()
        return f"GenCircle(A={A}, b1={b1}, b2={b2}, C={C}, d={self.d})"


def invert_circle(g: GenCircle) -> GenCircle:
    """Image of the locus under z -> 1/z: (A, B, C) -> (C, conj B, A)."""
    anchor = None
    if g.anchor is not None:
        p = g.anchor
        t = 1
        while p == (0, 0) or p is None:
            p = g.rational_point(Fraction(t))
            t += 1
        u, v = p
        n = u * u + g.d * v * v
        anchor = (u / n, -v / n)
    return GenCircle(g.C, g.b1, -g.b2, g.A, g.d, anchor).canonical()


def translate_circle(g: GenCircle, b: QuadInt) -> GenCircle:
    """The locus {z - b : z on g}."""
    bu, bv = (Fraction(x) for x in b.uv())
    A = g.A
    b1 = g.b1 + A * bu
    b2 = g.b2 + A * bv
    C = A * (bu * bu + g.d * bv * bv) + 2 * (g.b1 * bu + g.d * g.b2 * bv) + g.C
    anchor = None if g.anchor is None else (g.anchor[0] - bu, g.anchor[1] - bv)
    return GenCircle(A, b1, b2, C, g.d, anchor).canonical()


def boundary_curves(cfg: FieldConfig) -> list:
    """The lines through the sides of I_d."""
    out = []
    for hp in cfg.boundary_lines:
        # cu u + cv v - c = 0 as a form with A = 0
        if hp.cv == 0:
            anchor = (hp.c / hp.cu, Fraction(0))
        else:
            anchor = (Fraction(1, 2), (hp.c - hp.cu / 2) / hp.cv)
        out.append(GenCircle(0, hp.cu / 2, hp.cv / (2 * cfg.d), -hp.c, cfg.d, anchor).canonical())
    return out


def curve_points_in_I(g: GenCircle, cfg: FieldConfig, n: int = 1000, tol: float = -1e-12) -> np.ndarray:
    """Float samples of g intersected with the closed cell I (complex array).

    The default slightly negative ``tol`` keeps samples of the sides of I,
    which rounding would otherwise push outside.
    """
    if g.is_line:
        s = math.sqrt(cfg.d)
        nx, ny = float(g.b1), s * float(g.b2)
        norm = math.hypot(nx, ny)
        p0 = -float(g.C) / 2 / norm**2 * complex(nx, ny)
        t = np.linspace(-1.5, 1.5, n)
        pts = p0 + t * complex(-ny, nx) / norm
    else:
        c, r = g.center_radius()
        th = np.linspace(0, 2 * np.pi, n, endpoint=False)
        pts = c + r * np.exp(1j * th)
    return pts[closed_domain_contains_float(pts, cfg, tol)]


def recursion_step(curves, cfg: FieldConfig, samples: int = 1000, margin: float = 1e-8) -> set:
    """Canonical curves of translate(invert(g), b) for every g and admissible b.

    A translate is admissible when some point q = 1/p, p on g inside I,
    satisfies q - b in I with the margin ``margin`` to its boundary; boundary
    lines of I are dropped, as the recursion removes W_0.
    """
    base = set(boundary_curves(cfg))
    out = set()
    for g in curves:
        p = curve_points_in_I(g, cfg, samples)
        p = p[np.abs(p) > 1e-9]
        if len(p) == 0:
            continue
        ig = invert_circle(g)
        q = 1.0 / p
        a0, b0 = _coords(q, cfg)
        found = set()
        for da in (-1, 0, 1):
            for db in (-1, 0, 1):
                a, b = a0 + da, b0 + db
                inside = closed_domain_contains_float(q - lattice_point(a, b, cfg), cfg, margin)
                found.update(zip(a[inside].tolist(), b[inside].tolist()))
        for a, b in found:
            h = translate_circle(ig, QuadInt(a, b, cfg.d))
            if h not in base:
                out.add(h)
    return out


def _coords(z: np.ndarray, cfg: FieldConfig):
    s = math.sqrt(cfg.d)
    if cfg.hexagonal:
        q = 2 * z.imag / s
        return np.rint(z.real - q / 2).astype(np.int64), np.rint(q).astype(np.int64)
    return np.rint(z.real).astype(np.int64), np.rint(z.imag / s).astype(np.int64)


def generate_W(cfg: FieldConfig, max_iter: int = 10, samples: int = 1000) -> tuple:
    """Run the W_n recursion until no new curve appears.

    Returns ``(curves, n0)`` where curves lists the boundary lines first and
    then the generated curves in a deterministic order, and n0 is the last
    depth that contributed a new curve.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    base = boundary_curves(cfg)
    known = list(base)
    seen = set(base)
    frontier = list(base)
    for n in range(1, max_iter + 1):
        new = recursion_step(frontier, cfg, samples) - seen
        if not new:
            return known, n - 1
        new = sorted(new, key=GenCircle.key)
        known.extend(new)
        seen.update(new)
        frontier = new
    raise NoStabilization(f"W_n did not stabilise within {max_iter} steps", curves=known)


def local_dimension(z, curves) -> int:
    """2, 1 or 0 according to whether z lies on none, one or several curves."""
    k = sum(1 for g in curves if g.contains(z))
    return 2 if k == 0 else (1 if k == 1 else 0)


# ---------------------------------------------------------------------------
# cell complex


@dataclass
class Cell:
    id: int
    dim: int
    sign_vector: tuple
    rep_points: list
    bbox: tuple
    curve_ids: tuple = ()
    exact: bool = True


@dataclass
class CellComplex:
    cfg: FieldConfig
    curves: list
    cells: list
    n0: int
    resolution: int
    labels: np.ndarray = field(repr=False, default=None)
    grid_u: np.ndarray = field(repr=False, default=None)
    grid_v: np.ndarray = field(repr=False, default=None)
    adjacency: dict = field(default_factory=dict, repr=False)

    def counts(self) -> dict:
        out = {0: 0, 1: 0, 2: 0}
        for c in self.cells:
            out[c.dim] += 1
        return out

    @property
    def two_cells(self) -> list:
        return [c for c in self.cells if c.dim == 2]

    def area_estimate(self) -> float:
        du = self.grid_u[1] - self.grid_u[0]
        dv = self.grid_v[1] - self.grid_v[0]
        return float((self.labels >= 0).sum()) * du * dv * math.sqrt(self.cfg.d)

    def signs_float(self, z: np.ndarray, eps: float = 1e-11) -> np.ndarray:
        """Sign matrix (points x curves) with 0 marking near-zero values."""
        x, y = z.real, z.imag
        vals = np.stack([g.float_value(x, y) for g in self.curves], axis=-1)
        out = np.sign(vals).astype(np.int8)
        out[np.abs(vals) < eps] = 0
        return out

    def _label_at(self, z: np.ndarray, signs: np.ndarray) -> np.ndarray:
        """Component label of points with a full sign vector (-1 if not found)."""
        n, m = self.labels.shape
        s = math.sqrt(self.cfg.d)
        u, v = z.real, z.imag / s
        iu = np.clip(np.rint((u - self.grid_u[0]) / (self.grid_u[1] - self.grid_u[0])).astype(int), 0, n - 1)
        iv = np.clip(np.rint((v - self.grid_v[0]) / (self.grid_v[1] - self.grid_v[0])).astype(int), 0, m - 1)
        out = np.full(len(z), -1, dtype=np.int64)
        for r in range(0, 5):
            todo = np.nonzero(out < 0)[0]
            if len(todo) == 0:
                break
            for du in range(-r, r + 1):
                for dv in range(-r, r + 1):
                    if max(abs(du), abs(dv)) != r:
                        continue
                    t = todo[out[todo] < 0]
                    ju = np.clip(iu[t] + du, 0, n - 1)
                    jv = np.clip(iv[t] + dv, 0, m - 1)
                    lab = self.labels[ju, jv]
                    ok = lab >= 0
                    ok[ok] = np.all(self._sv2[lab[ok]] == signs[t][ok], axis=1)
                    out[t[ok]] = lab[ok]
        return out

    def classify_float(self, z) -> np.ndarray:
        """2-cell id of each float point, -2 outside I, -1 for points on curves or unresolved."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        out = np.full(len(z), -1, dtype=np.int64)
        inside = closed_domain_contains_float(z, self.cfg, -1e-12)
        out[~inside] = -2
        idx = np.nonzero(inside)[0]
        if len(idx):
            sg = self.signs_float(z[idx])
            full = np.all(sg != 0, axis=1)
            res = np.full(len(idx), -1, dtype=np.int64)
            multi = np.zeros(len(idx), dtype=bool)
            for r in np.nonzero(full)[0]:
                cands = self._by_sign.get(tuple(int(x) for x in sg[r]), ())
                if len(cands) == 1:
                    res[r] = cands[0]
                elif len(cands) > 1:
                    multi[r] = True
            if multi.any():
                lab = self._label_at(z[idx][multi], sg[multi])
                res[multi] = np.where(lab >= 0, self._cell_of_label[np.maximum(lab, 0)], -1)
            out[idx] = res
        return out

    def locate(self, z: QuadRat) -> int:
        """Exact cell id of a rational point of I (-2 outside I)."""
        if not closed_domain_contains(z, self.cfg):
            return -2
        sv = tuple(g.sign(z) for g in self.curves)
        cands = self._by_sign.get(sv, [])
        if len(cands) == 1:
            return cands[0]
        if not cands:
            return -1
        lab = self._label_at(np.array([complex(z)]), np.array([sv], dtype=np.int8))[0]
        return int(self._cell_of_label[lab]) if lab >= 0 else cands[0]

    def to_json(self) -> dict:
        return {
            "field": self.cfg.d,
            "n0": self.n0,
            "curves": [curve_record(g, self.cfg) for g in self.curves],
            "cells": [
                {
                    "id": c.id,
                    "dim": c.dim,
                    "sign_vector": list(c.sign_vector),
                    "rep_points": [[_fstr(p[0]), _fstr(p[1])] for p in c.rep_points],
                }
                for c in self.cells
            ],
        }


def _fstr(x) -> str:
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}"
    return repr(float(x))


def curve_record(g: GenCircle, cfg: FieldConfig) -> dict:
    """Coefficients with B written in the integral basis {1, w}."""
    A, b1, b2, C = (Fraction(x) for x in g.key())
    if cfg.hexagonal:
        # sqrt(-d) = 2w - 1
        re, om = b1 - b2, 2 * b2
    else:
        re, om = b1, b2
    return {"A": _fstr(A), "B_re": _fstr(re), "B_omega": _fstr(om), "C": _fstr(C)}


def _grid(cfg: FieldConfig, resolution: int):
    """Cell-centred grid: u = U/L, v = V/L with integer arrays U, V."""
    vmax = Fraction(cfg.d + 1, 4 * cfg.d) if cfg.hexagonal else Fraction(1, 2)
    n = resolution
    L = 2 * n * vmax.denominator
    odd = np.arange(n, dtype=np.int64) * 2 - (n - 1)
    # u = odd / (2n), v = vmax * odd / n
    return odd * vmax.denominator, odd * 2 * vmax.numerator, L


def _int_form(g: GenCircle, L: int):
    """Integer coefficients of L^2 * scale * form(U/L, V/L) as functions of integer U, V."""
    A, b1, b2, C = g.key()
    return A, 2 * L * b1, 2 * L * g.d * b2, C * L * L


def _exact_signs(curves, Ui, Vi, L, d) -> np.ndarray:
    UU, VV = np.meshgrid(Ui, Vi, indexing="ij")
    q = UU * UU + d * VV * VV
    out = np.empty(UU.shape + (len(curves),), dtype=np.int8)
    for k, g in enumerate(curves):
        A, p1, p2, c = _int_form(g, L)
        if max(abs(A) * int(q.max()), abs(p1) * int(np.abs(Ui).max()) + abs(p2) * int(np.abs(Vi).max()), abs(c)) > 2**61:
            raise OverflowError("grid too fine for exact int64 evaluation")
        val = A * q + p1 * UU + p2 * VV + c
        out[..., k] = np.sign(val)
    return out


def _pair_intersections(g: GenCircle, h: GenCircle, cfg: FieldConfig) -> list:
    """Intersection points of two curves inside I: exact (uv Fractions) when rational, else floats."""
    d = cfg.d
    # eliminate the quadratic part: A_h * g - A_g * h is a line (or g, h both lines)
    if g.is_line and h.is_line:
        line, circ = g, None
    elif g.is_line:
        line, circ = g, h
    elif h.is_line:
        line, circ = h, g
    else:
        line = GenCircle.__new__(GenCircle)
        lb1 = h.A * g.b1 - g.A * h.b1
        lb2 = h.A * g.b2 - g.A * h.b2
        lc = h.A * g.C - g.A * h.C
        if lb1 == 0 and lb2 == 0:
            return []
        object.__setattr__(line, "A", Fraction(0))
        object.__setattr__(line, "b1", lb1)
        object.__setattr__(line, "b2", lb2)
        object.__setattr__(line, "C", lc)
        object.__setattr__(line, "d", d)
        object.__setattr__(line, "anchor", None)
        circ = g
    if circ is None:
        # two lines: 2 b1 u + 2 d b2 v + C = 0
        a1, c1, e1 = 2 * g.b1, 2 * d * g.b2, -g.C
        a2, c2, e2 = 2 * h.b1, 2 * d * h.b2, -h.C
        det = a1 * c2 - a2 * c1
        if det == 0:
            return []
        pts = [((e1 * c2 - e2 * c1) / det, (a1 * e2 - a2 * e1) / det)]
    else:
        # parametrise the line 2 b1 u + 2 d b2 v + C = 0
        lb1, lb2, lc = line.b1, line.b2, line.C
        if lb2 != 0:
            # v = -(2 b1 u + C) / (2 d b2) = m u + k
            m = -lb1 / (lb2 * d)
            k = -lc / (2 * d * lb2)
            qa = circ.A * (1 + d * m * m)
            qb = circ.A * 2 * d * m * k + 2 * (circ.b1 + d * circ.b2 * m)
            qc = circ.A * d * k * k + 2 * d * circ.b2 * k + circ.C
            roots = _quad_roots(qa, qb, qc)
            pts = [(r, m * r + k) if isinstance(r, Fraction) else (r, float(m) * r + float(k)) for r in roots]
        else:
            u0 = -lc / (2 * lb1)
            qa = circ.A * d
            qb = 2 * d * circ.b2
            qc = circ.A * u0 * u0 + 2 * circ.b1 * u0 + circ.C
            roots = _quad_roots(qa, qb, qc)
            pts = [(u0, r) if isinstance(r, Fraction) else (float(u0), r) for r in roots]
    out = []
    for p in pts:
        if isinstance(p[0], Fraction) and isinstance(p[1], Fraction):
            if closed_domain_contains(QuadRat.from_uv(p[0], p[1], d), cfg):
                out.append(p)
        else:
            z = complex(float(p[0]), float(p[1]) * math.sqrt(d))
            if closed_domain_contains_float(np.array([z]), cfg, -1e-10)[0]:
                out.append((float(p[0]), float(p[1])))
    return out


def _quad_roots(a: Fraction, b: Fraction, c: Fraction) -> list:
    if a == 0:
        return [] if b == 0 else [-c / b]
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    num, den = disc.numerator, disc.denominator
    rn, rd = math.isqrt(num), math.isqrt(den)
    if rn * rn == num and rd * rd == den:
        r = Fraction(rn, rd)
        return sorted({(-b + r) / (2 * a), (-b - r) / (2 * a)})
    s = math.sqrt(float(disc))
    return [(-float(b) + s) / (2 * float(a)), (-float(b) - s) / (2 * float(a))]


def _same_point(p, q, tol=1e-10) -> bool:
    return abs(float(p[0]) - float(q[0])) < tol and abs(float(p[1]) - float(q[1])) < tol


def _rational_near(g: GenCircle, target: complex, d: int) -> Point | None:
    """An exact rational point of g close to a float point of g."""
    if g.anchor is None:
        return None
    pu, pv = (float(x) for x in g.anchor)
    tu, tv = target.real, target.imag / math.sqrt(d)
    if g.is_line:
        if g.b2 == 0:
            return (g.anchor[0], Fraction(tv).limit_denominator(10**6))
        t = Fraction(tu - pu).limit_denominator(10**6)
        return g.rational_point(t)
    if abs(tu - pu) < 1e-12:
        return None
    t = Fraction((tv - pv) / (tu - pu)).limit_denominator(10**6)
    return g.rational_point(t)


def build_cells(curves, cfg: FieldConfig, resolution: int = 512, n0: int = 0) -> CellComplex:
    """Cell decomposition of I cut out by ``curves``.

    2-cells are connected components of grid nodes sharing one sign vector;
    0-cells are pairwise intersections inside I; 1-cells are the arcs of a
    single curve between consecutive 0-cells.
    """
    if resolution < 64:
        raise ValueError("resolution must be at least 64")
    curves = list(curves)
    d = cfg.d
    Ui, Vi, L = _grid(cfg, resolution)
    signs = _exact_signs(curves, Ui, Vi, L, d)
    gu = Ui / L
    gv = Vi / L
    UU, VV = np.meshgrid(gu, gv, indexing="ij")
    zz = UU + 1j * VV * math.sqrt(d)
    # grid nodes strictly inside I and off every curve
    inside_closed = closed_domain_contains_float(zz, cfg, 0.0)
    usable = inside_closed & np.all(signs != 0, axis=-1)
    flat = signs.reshape(-1, len(curves))
    uniq, inv = np.unique(flat, axis=0, return_inverse=True)
    inv = inv.reshape(UU.shape)
    labels = np.full(UU.shape, -1, dtype=np.int64)
    sv_of_label = []
    cells = []
    for cls in range(len(uniq)):
        mask = usable & (inv == cls)
        if not mask.any():
            continue
        # diagonal neighbours with equal sign vectors are never separated by a curve
        lab, nlab = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
        groups = _merge_slivers(lab, nlab, zz, curves, uniq[cls])
        for members in groups:
            labels[np.isin(lab, members)] = len(sv_of_label)
            sv_of_label.append(uniq[cls])
    sv2 = np.array(sv_of_label, dtype=np.int8).reshape(-1, len(curves))
    for lab_id, sv in enumerate(sv_of_label):
        idx = np.argwhere(labels == lab_id)
        mid = idx[len(idx) // 2]
        i_u, i_v = int(mid[0]), int(mid[1])
        rep = (Fraction(int(Ui[i_u]), L), Fraction(int(Vi[i_v]), L))
        lo = idx.min(axis=0)
        hi = idx.max(axis=0)
        bbox = (float(gu[lo[0]]), float(gv[lo[1]]), float(gu[hi[0]]), float(gv[hi[1]]))
        cells.append(Cell(len(cells), 2, tuple(int(s) for s in sv), [rep], bbox))
    if not cells:
        raise ResolutionTooCoarse("no 2-cell found")
    # 0-cells
    zero_pts = []
    for i in range(len(curves)):
        for j in range(i + 1, len(curves)):
            for p in _pair_intersections(curves[i], curves[j], cfg):
                if not any(_same_point(p, q) for q, _ in zero_pts):
                    zero_pts.append((p, set()))
    for p, on in zero_pts:
        for k, g in enumerate(curves):
            if isinstance(p[0], Fraction) and isinstance(p[1], Fraction):
                if g.value(p[0], p[1]) == 0:
                    on.add(k)
            elif abs(g.float_value(float(p[0]), float(p[1]) * math.sqrt(d))) < 1e-9:
                on.add(k)
    zero_ids = []
    for p, on in zero_pts:
        exact = isinstance(p[0], Fraction) and isinstance(p[1], Fraction)
        sv = tuple(0 if k in on else _float_sign(g, p, d) for k, g in enumerate(curves))
        c = Cell(len(cells), 0, sv, [p], (float(p[0]), float(p[1]), float(p[0]), float(p[1])), tuple(sorted(on)), exact)
        cells.append(c)
        zero_ids.append(c.id)
    # 1-cells: arcs of each curve between consecutive 0-cells
    adjacency = {}
    for k, g in enumerate(curves):
        pts = _dense_curve(g, cfg)
        if len(pts) == 0:
            continue
        ends = [(p, cid) for (p, on), cid in zip(zero_pts, zero_ids) if k in on]
        pieces = _split_arc(pts, [complex(float(p[0]), float(p[1]) * math.sqrt(d)) for p, _ in ends], g)
        for piece in pieces:
            mid = piece[len(piece) // 2]
            rp = _rational_near(g, mid, d)
            exact = rp is not None and g.value(*rp) == 0 and closed_domain_contains(QuadRat.from_uv(rp[0], rp[1], d), cfg)
            if not exact:
                rp = (mid.real, mid.imag / math.sqrt(d))
            sv = tuple(0 if j == k else _float_sign(h, (mid.real, mid.imag / math.sqrt(d)), d) for j, h in enumerate(curves))
            if exact:
                sv = tuple(h.sign(rp) for h in curves)
            if sum(1 for s in sv if s == 0) != 1:
                continue
            bb = (piece.real.min(), piece.imag.min() / math.sqrt(d), piece.real.max(), piece.imag.max() / math.sqrt(d))
            c = Cell(len(cells), 1, sv, [rp], bb, (k,), exact)
            cells.append(c)
            adjacency[c.id] = [cid for (p, cid) in ends if min(abs(piece[0] - _cz(p, d)), abs(piece[-1] - _cz(p, d))) < 1e-6]
    cx = CellComplex(cfg, curves, cells, n0, resolution, labels, gu, gv, adjacency)
    cx._sv2 = sv2
    cx._grid_int = (Ui, Vi, L)
    cx._cell_of_label = np.arange(len(sv_of_label), dtype=np.int64)
    by_sign = {}
    for c in cells:
        if c.dim == 2:
            by_sign.setdefault(c.sign_vector, []).append(c.id)
    cx._by_sign = by_sign
    return cx


def _segment_in_class(a: complex, b: complex, curves, sv, n: int = 256) -> bool:
    t = np.linspace(0.0, 1.0, n)
    pts = a + t * (b - a)
    return all(np.all(np.sign(g.float_value(pts.real, pts.imag)) == s) for g, s in zip(curves, sv))


def _merge_slivers(lab: np.ndarray, nlab: int, zz: np.ndarray, curves, sv) -> list:
    """Group grid components of one sign class that belong to the same region.

    Thin horns (a circle tangent to another curve) break into several grid
    components; two components are joined when the straight segment between
    their closest nodes stays in the sign class.
    """
    if nlab <= 1:
        return [[1]] if nlab == 1 else []
    pts = [zz[lab == j] for j in range(1, nlab + 1)]
    parent = list(range(nlab))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    trees = [cKDTree(np.column_stack([p.real, p.imag])) for p in pts]
    for i in range(nlab):
        for j in range(i + 1, nlab):
            if find(i) == find(j):
                continue
            small, big = (i, j) if len(pts[i]) <= len(pts[j]) else (j, i)
            dist, k = trees[big].query(np.column_stack([pts[small].real, pts[small].imag]))
            m = int(np.argmin(dist))
            if _segment_in_class(pts[small][m], pts[big][k[m]], curves, sv):
                parent[find(i)] = find(j)
    groups = {}
    for i in range(nlab):
        groups.setdefault(find(i), []).append(i + 1)
    return sorted(groups.values())


def _cz(p, d) -> complex:
    return complex(float(p[0]), float(p[1]) * math.sqrt(d))


def _float_sign(g: GenCircle, p, d) -> int:
    v = g.float_value(float(p[0]), float(p[1]) * math.sqrt(d))
    return int(np.sign(v))


def _dense_curve(g: GenCircle, cfg: FieldConfig, n: int = 20000) -> np.ndarray:
    if g.is_line:
        s = math.sqrt(cfg.d)
        nx, ny = float(g.b1), s * float(g.b2)
        norm = math.hypot(nx, ny)
        p0 = -float(g.C) / 2 / norm**2 * complex(nx, ny)
        t = np.linspace(-1.5, 1.5, n)
        pts = p0 + t * complex(-ny, nx) / norm
        closed = False
    else:
        c, r = g.center_radius()
        th = np.linspace(0, 2 * np.pi, n, endpoint=False)
        pts = c + r * np.exp(1j * th)
        closed = True
    inside = closed_domain_contains_float(pts, cfg, -1e-12)
    if not inside.any():
        return np.empty(0, dtype=complex)
    if closed and inside.all():
        return pts
    if closed:
        # rotate so the sequence starts just after an outside sample
        k = int(np.argmin(inside))
        pts, inside = np.roll(pts, -k), np.roll(inside, -k)
    # keep it as a list of runs separated by NaN
    out = np.where(inside, pts, np.nan)
    return out


def _split_arc(pts: np.ndarray, ends: list, g: GenCircle) -> list:
    """Split the sampled curve (NaN separating runs) at the 0-cell points."""
    pieces = []
    cur = []
    for z in pts:
        if np.isnan(z):
            if cur:
                pieces.append(cur)
            cur = []
            continue
        cur.append(z)
    if cur:
        pieces.append(cur)
    out = []
    for run in pieces:
        run = np.array(run)
        if len(ends) == 0:
            out.append(run)
            continue
        dist = np.min(np.abs(run[:, None] - np.array(ends)[None, :]), axis=1)
        spacing = np.max(np.abs(np.diff(run))) if len(run) > 1 else 1.0
        cut = dist <= 1.5 * spacing
        seg = []
        for z, c in zip(run, cut):
            if c:
                if len(seg) >= 3:
                    out.append(np.array(seg))
                seg = []
            else:
                seg.append(z)
        if len(seg) >= 3:
            out.append(np.array(seg))
    return out


# ---------------------------------------------------------------------------
# Markov compatibility


@dataclass
class ViolationReport:
    d: int
    digit_norm_bound: int
    samples: int
    membership_violations: int
    image_violations: int
    witnesses: list = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.membership_violations + self.image_violations

    def to_json(self) -> dict:
        return {
            "field": self.d,
            "digit_norm_bound": self.digit_norm_bound,
            "samples": self.samples,
            "membership_violations": self.membership_violations,
            "image_violations": self.image_violations,
            "witnesses": self.witnesses[:20],
        }


def _cell_samples(cx: CellComplex, rng, per_cell: int) -> tuple:
    """Exact rational points inside each 2-cell.

    Points live on a grid 64 times finer than the labelling grid and are
    drawn around random nodes of the cell; a point is kept only if its
    float sign vector (with margin) matches the cell. Returns complex
    values, owning cell ids and the integer uv numerators over ``M``.
    """
    Ui, Vi, L = cx._grid_int
    M = 64 * L
    s = math.sqrt(cx.cfg.d)
    zs, owners, nums = [], [], []
    for c in cx.two_cells:
        idx = np.argwhere(cx.labels == c.id)
        got_z, got_n = [], []
        need = per_cell
        for _ in range(50):
            if need <= 0:
                break
            pick = idx[rng.integers(0, len(idx), 2 * need + 8)]
            iu = Ui[pick[:, 0]] * 64 + rng.integers(-32, 33, len(pick))
            iv = Vi[pick[:, 1]] * 64 + rng.integers(-32, 33, len(pick))
            z = iu / M + 1j * (iv / M) * s
            vals = np.stack([g.float_value(z.real, z.imag) for g in cx.curves], axis=-1)
            ok = np.all((np.sign(vals) == np.array(c.sign_vector)) & (np.abs(vals) > 1e-9), axis=1)
            ok &= cx.classify_float(z) == c.id
            z, iu, iv = z[ok][:need], iu[ok][:need], iv[ok][:need]
            got_z.append(z)
            got_n.append(np.column_stack([iu, iv]))
            need -= len(z)
        zs.append(np.concatenate(got_z))
        nums.append(np.concatenate(got_n))
        owners.append(np.full(len(zs[-1]), c.id))
    return np.concatenate(zs), np.concatenate(owners), np.concatenate(nums), M


def verify_markov(cx: CellComplex, cfg: FieldConfig | None = None, digit_norm_bound: int = 100, samples: int = 100_000, seed: int = 0) -> ViolationReport:
    """Sample the compatibility of the partition with the inverse branches.

    For each digit alpha with non-empty cylinder and each 2-cell Q, the
    sampled points z of Q must agree on whether h_alpha(z) = 1/(z + alpha)
    lies in I (membership of z in T O_alpha), and the images that do lie in
    I must fall in a single 2-cell.
    """
    from .cf import empty_digit_scan

    cfg = cfg or cx.cfg
    rng = np.random.default_rng(seed)
    empty = empty_digit_scan(cfg, max(4, min(digit_norm_bound, 16)))
    digits = [a for a in digits_up_to(cfg, digit_norm_bound) if a not in empty]
    n_cells = len(cx.two_cells)
    per = max(2, int(math.ceil(samples / (len(digits) * n_cells))))
    z, owner, nums, M = _cell_samples(cx, rng, per)
    mem_v = img_v = 0
    witnesses = []
    total = 0
    for alpha in digits:
        h = 1.0 / (z + complex(alpha))
        tgt = cx.classify_float(h)
        # points near a curve are settled exactly
        unresolved = np.nonzero(tgt == -1)[0]
        for i in unresolved:
            zr = QuadRat.from_uv(Fraction(int(nums[i, 0]), M), Fraction(int(nums[i, 1]), M), cfg.d)
            tgt[i] = cx.locate((zr + alpha).inverse())
        total += len(z)
        order = np.argsort(owner, kind="stable")
        o, t = owner[order], tgt[order]
        bounds = np.flatnonzero(np.diff(o)) + 1
        for grp_o, grp_t in zip(np.split(o, bounds), np.split(t, bounds)):
            out = grp_t == -2
            if out.any() and not out.all():
                mem_v += 1
                witnesses.append({"alpha": str(alpha), "cell": int(grp_o[0]), "kind": "membership"})
            ins = grp_t[~out]
            if len(ins) and (len(np.unique(ins)) > 1 or (ins < 0).any()):
                img_v += 1
                witnesses.append({"alpha": str(alpha), "cell": int(grp_o[0]), "kind": "image", "targets": sorted(set(ins.tolist()))})
    return ViolationReport(cfg.d, digit_norm_bound, total, mem_v, img_v, witnesses)


def corrupted(cx: CellComplex, drop: int | None = None) -> CellComplex:
    """Rebuild the complex without one non-boundary curve (negative control)."""
    nb = len(cx.cfg.boundary_lines)
    if drop is None:
        drop = nb
    if drop < nb:
        raise ValueError("only generated curves may be dropped")
    curves = [g for k, g in enumerate(cx.curves) if k != drop]
    return build_cells(curves, cx.cfg, cx.resolution, cx.n0)


# ---------------------------------------------------------------------------
# estimator front-end and rendering


class MarkovPartition(BaseEstimator):
    """Fit the stabilised curve family and cell complex of one field.

    ``predict`` maps points of I (complex array or (n, 2) real array) to the
    id of the 2-cell containing them (-1 on curves, -2 outside I).
    """

    def __init__(self, d: int = 1, resolution: int = 512, max_iter: int = 10):
        self.d = d
        self.resolution = resolution
        self.max_iter = max_iter

    def fit(self, X=None, y=None):
        cfg = field_config(self.d)
        if self.resolution < 64:
            raise ValueError("resolution must be at least 64")
        curves, n0 = generate_W(cfg, self.max_iter)
        self.curves_ = curves
        self.n0_ = n0
        self.complex_ = build_cells(curves, cfg, self.resolution, n0)
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "complex_"):
            raise RuntimeError("MarkovPartition is not fitted")
        z = np.asarray(X)
        if z.ndim == 2:
            z = z[:, 0] + 1j * z[:, 1]
        return self.complex_.classify_float(z.astype(complex))


def render_svg(cx: CellComplex, size: int = 600, shade: int = 160) -> str:
    """Static SVG of the curves and shaded 2-cells."""
    cfg = cx.cfg
    s = math.sqrt(cfg.d)
    ymax = (cfg.d + 1) / (4 * s) if cfg.hexagonal else s / 2
    scale = size / max(1.0, 2 * ymax) * 0.9
    W, H = size, int(2 * ymax * scale / 0.9)

    def tx(z):
        return W / 2 + z.real * scale, H / 2 - z.imag * scale

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">']
    xs = np.linspace(-0.5, 0.5, shade)
    ys = np.linspace(-ymax, ymax, shade)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    ids = cx.classify_float((X + 1j * Y).ravel()).reshape(X.shape)
    cw = scale / (shade - 1) * 1.0
    ch = scale * 2 * ymax / (shade - 1)
    for i in range(shade):
        for j in range(shade):
            c = ids[i, j]
            if c < 0:
                continue
            hue = (int(c) * 47) % 360
            px, py = tx(complex(xs[i], ys[j]))
            parts.append(f'<rect x="{px - cw / 2:.2f}" y="{py - ch / 2:.2f}" width="{cw:.2f}" height="{ch:.2f}" fill="hsl({hue},55%,80%)"/>')
    for g in cx.curves:
        pts = _dense_curve(g, cfg, 2000)
        run = []
        for z in list(pts) + [complex(np.nan, np.nan)]:
            if np.isnan(z):
                if len(run) > 1:
                    path = " ".join(f"{x:.2f},{y:.2f}" for x, y in map(tx, run))
                    parts.append(f'<polyline points="{path}" fill="none" stroke="black" stroke-width="1"/>')
                run = []
            else:
                run.append(z)
    parts.append("</svg>")
    return "\n".join(parts)


def partition_json(cx: CellComplex) -> str:
    return json.dumps(cx.to_json(), indent=1, sort_keys=True)
