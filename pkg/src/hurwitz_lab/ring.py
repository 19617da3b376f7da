"""Exact arithmetic in the rings of integers of the Euclidean imaginary quadratic fields.

Elements of O_d are stored by their coordinates over the integral basis {1, w}
where w = sqrt(-d) when d is 1 or 2 and w = (1 + sqrt(-d))/2 when d is 3, 7 or 11.
Field elements are kept in a canonical form (x + y w)/D with D > 0 and
gcd(x, y, D) = 1, so equal values always compare and hash equal.

Domain tests never touch floating point. Points are tested in the rational
"uv" coordinates z = u + v sqrt(-d), where every side of the fundamental
cell is a rational linear inequality.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple

from .errors import BothZero, DivisionByZero, UniquenessViolation

SUPPORTED_D = (1, 2, 3, 7, 11)

# Uniform bound on the squared circumradius used for contraction estimates.
R_SQ_UNIFORM_BOUND = Fraction(15, 16)


class HalfPlane(NamedTuple):
    """The closed half plane ``cu*u + cv*v <= c`` in uv coordinates."""

    cu: Fraction
    cv: Fraction
    c: Fraction

    def holds(self, u, v) -> bool:
        return self.cu * u + self.cv * v <= self.c


@dataclass(frozen=True)
class FieldConfig:
    d: int
    omega_kind: str
    R_sq: Fraction
    boundary_lines: tuple
    excluded_translates: tuple = field(repr=False)

    @property
    def hexagonal(self) -> bool:
        return self.omega_kind == "half"

    @property
    def k(self) -> int:
        """Constant with w^2 = w - k in the hexagonal case."""
        return (1 + self.d) // 4

    @property
    def covolume(self) -> float:
        """Area of a fundamental cell of O_d in the complex plane."""
        s = math.sqrt(self.d)
        return s / 2 if self.hexagonal else s

    @property
    def R(self) -> float:
        return math.sqrt(self.R_sq)

    def int(self, a: int, b: int = 0) -> "QuadInt":
        return QuadInt(a, b, self.d)

    @property
    def zero(self) -> "QuadInt":
        return QuadInt(0, 0, self.d)

    @property
    def one(self) -> "QuadInt":
        return QuadInt(1, 0, self.d)

    @property
    def omega(self) -> "QuadInt":
        return QuadInt(0, 1, self.d)

    def units(self) -> tuple:
        return _units(self.d)

    def rat(self, num, den=1) -> "QuadRat":
        return QuadRat.from_fraction(num, den, self.d)

    def vertices_uv(self) -> list:
        """Vertices of I_d in uv coordinates, counter-clockwise."""
        h = Fraction(1, 2)
        if not self.hexagonal:
            return [(h, -h), (h, h), (-h, h), (-h, -h)]
        d = self.d
        top = Fraction(d + 1, 4 * d)
        side = Fraction(d - 1, 4 * d)
        return [(h, -side), (h, side), (Fraction(0), top), (-h, side), (-h, -side), (Fraction(0), -top)]

    def area(self) -> float:
        """Euclidean area of I_d."""
        verts = self.vertices_uv()
        s = Fraction(0)
        for (u0, v0), (u1, v1) in zip(verts, verts[1:] + verts[:1]):
            s += u0 * v1 - u1 * v0
        return abs(float(s)) / 2 * math.sqrt(self.d)


@lru_cache(maxsize=None)
def field_config(d: int) -> FieldConfig:
    """Return the configuration of I_d for one of the five Euclidean fields."""
    if d not in SUPPORTED_D:
        raise ValueError(f"d must be one of {set(SUPPORTED_D)}, got {d}")
    h = Fraction(1, 2)
    one = Fraction(1)
    zero = Fraction(0)
    if d % 4 != 3:
        lines = (
            HalfPlane(one, zero, h),
            HalfPlane(-one, zero, h),
            HalfPlane(zero, one, h),
            HalfPlane(zero, -one, h),
        )
        R_sq = Fraction(1 + d, 4)
        excluded = (QuadInt(1, 0, d), QuadInt(0, 1, d))
        kind = "sqrt"
    else:
        c = Fraction(d + 1, 4)
        dd = Fraction(d)
        lines = (
            HalfPlane(one, zero, h),
            HalfPlane(-one, zero, h),
            HalfPlane(one, dd, c),
            HalfPlane(-one, -dd, c),
            HalfPlane(-one, dd, c),
            HalfPlane(one, -dd, c),
        )
        R_sq = Fraction((d + 1) ** 2, 16 * d)
        # 1, (1 + sqrt(-d))/2 = w and (1 - sqrt(-d))/2 = 1 - w
        excluded = (QuadInt(1, 0, d), QuadInt(0, 1, d), QuadInt(1, -1, d))
        kind = "half"
    return FieldConfig(d, kind, R_sq, lines, excluded)


@lru_cache(maxsize=None)
def _units(d: int) -> tuple:
    if d == 1:
        return (QuadInt(1, 0, 1), QuadInt(0, 1, 1), QuadInt(-1, 0, 1), QuadInt(0, -1, 1))
    if d == 3:
        w = QuadInt(0, 1, 3)
        out, u = [], QuadInt(1, 0, 3)
        for _ in range(6):
            out.append(u)
            u = u * w
        return tuple(out)
    return (QuadInt(1, 0, d), QuadInt(-1, 0, d))


@dataclass(frozen=True, slots=True)
class QuadInt:
    """The element ``a + b*w`` of O_d."""

    a: int
    b: int
    d: int

    def _check(self, other):
        if isinstance(other, int):
            return QuadInt(other, 0, self.d)
        if not isinstance(other, QuadInt):
            return NotImplemented
        if other.d != self.d:
            raise ValueError("elements of different fields")
        return other

    def __add__(self, other):
        other = self._check(other)
        if other is NotImplemented:
            return other
        return QuadInt(self.a + other.a, self.b + other.b, self.d)

    __radd__ = __add__

    def __neg__(self):
        return QuadInt(-self.a, -self.b, self.d)

    def __sub__(self, other):
        other = self._check(other)
        if other is NotImplemented:
            return other
        return QuadInt(self.a - other.a, self.b - other.b, self.d)

    def __rsub__(self, other):
        return -(self - other)

    def __mul__(self, other):
        other = self._check(other)
        if other is NotImplemented:
            return other
        a, b, c, e, d = self.a, self.b, other.a, other.b, self.d
        if d % 4 == 3:
            k = (1 + d) // 4
            return QuadInt(a * c - k * b * e, a * e + b * c + b * e, d)
        return QuadInt(a * c - d * b * e, a * e + b * c, d)

    __rmul__ = __mul__

    def __bool__(self):
        return bool(self.a or self.b)

    def conj(self) -> "QuadInt":
        if self.d % 4 == 3:
            return QuadInt(self.a + self.b, -self.b, self.d)
        return QuadInt(self.a, -self.b, self.d)

    def norm(self) -> int:
        return qnorm(self)

    def uv(self) -> tuple:
        """Coordinates (u, v) with value u + v*sqrt(-d)."""
        if self.d % 4 == 3:
            return Fraction(2 * self.a + self.b, 2), Fraction(self.b, 2)
        return Fraction(self.a), Fraction(self.b)

    def __complex__(self):
        u, v = self.uv()
        return complex(float(u), float(v) * math.sqrt(self.d))

    def __divmod__(self, other):
        return divmod_nearest(self, other)

    def __str__(self):
        return _format_pair(self.a, self.b, self.d)


def _format_pair(a, b, d) -> str:
    sym = "i" if d == 1 else "w"
    if b == 0:
        return str(a)
    coeff = {1: "", -1: "-"}.get(b, str(b))
    if a == 0:
        return f"{coeff}{sym}"
    sign = "+" if b > 0 else "-"
    mag = "" if abs(b) == 1 else str(abs(b))
    return f"{a}{sign}{mag}{sym}"


def qnorm(alpha: QuadInt) -> int:
    """Return |alpha|^2 as an exact integer."""
    a, b, d = alpha.a, alpha.b, alpha.d
    if d % 4 == 3:
        return a * a + a * b + (1 + d) // 4 * b * b
    return a * a + d * b * b


class QuadRat:
    """An element (x + y*w)/D of K_d in canonical form."""

    __slots__ = ("x", "y", "D", "d", "_frac")

    def __init__(self, x: int, y: int, D: int, d: int):
        if D == 0:
            raise DivisionByZero("zero denominator")
        if D < 0:
            x, y, D = -x, -y, -D
        g = math.gcd(math.gcd(x, y), D)
        if g > 1:
            x, y, D = x // g, y // g, D // g
        self.x, self.y, self.D, self.d = x, y, D, d
        self._frac = None

    @classmethod
    def from_int(cls, alpha: QuadInt) -> "QuadRat":
        return cls(alpha.a, alpha.b, 1, alpha.d)

    @classmethod
    def from_fraction(cls, num: QuadInt, den, d: int | None = None) -> "QuadRat":
        if isinstance(num, int):
            num = QuadInt(num, 0, d)
        if isinstance(den, int):
            den = QuadInt(den, 0, num.d)
        if not den:
            raise DivisionByZero("zero denominator")
        n = num * den.conj()
        return cls(n.a, n.b, qnorm(den), num.d)

    @classmethod
    def from_uv(cls, u, v, d: int) -> "QuadRat":
        """Build u + v*sqrt(-d) from rational coordinates."""
        u, v = Fraction(u), Fraction(v)
        if d % 4 == 3:
            # u + v sqrt(-d) = (u - v) + 2v w
            p, q = u - v, 2 * v
        else:
            p, q = u, v
        D = math.lcm(p.denominator, q.denominator)
        return cls(p.numerator * (D // p.denominator), q.numerator * (D // q.denominator), D, d)

    def _key(self):
        return (self.x, self.y, self.D, self.d)

    def __eq__(self, other):
        if isinstance(other, QuadInt):
            other = QuadRat.from_int(other)
        elif isinstance(other, int):
            other = QuadRat(other, 0, 1, self.d)
        if not isinstance(other, QuadRat):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def _coerce(self, other) -> "QuadRat":
        if isinstance(other, QuadRat):
            if other.d != self.d:
                raise ValueError("elements of different fields")
            return other
        if isinstance(other, QuadInt):
            return QuadRat.from_int(other)
        if isinstance(other, int):
            return QuadRat(other, 0, 1, self.d)
        return NotImplemented

    def __add__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return QuadRat(self.x * o.D + o.x * self.D, self.y * o.D + o.y * self.D, self.D * o.D, self.d)

    __radd__ = __add__

    def __neg__(self):
        return QuadRat(-self.x, -self.y, self.D, self.d)

    def __sub__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return self + (-o)

    def __rsub__(self, other):
        return -(self - other)

    def __mul__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        p = QuadInt(self.x, self.y, self.d) * QuadInt(o.x, o.y, self.d)
        return QuadRat(p.a, p.b, self.D * o.D, self.d)

    __rmul__ = __mul__

    def inverse(self) -> "QuadRat":
        if not (self.x or self.y):
            raise DivisionByZero("inverse of zero")
        n = QuadInt(self.x, self.y, self.d)
        c = n.conj()
        return QuadRat(c.a * self.D, c.b * self.D, qnorm(n), self.d)

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return self * o.inverse()

    def __rtruediv__(self, other):
        return self._coerce(other) * self.inverse()

    def __bool__(self):
        return bool(self.x or self.y)

    def is_integral(self) -> bool:
        return self.D == 1

    def to_int(self) -> QuadInt:
        if self.D != 1:
            raise ValueError(f"{self} is not integral")
        return QuadInt(self.x, self.y, self.d)

    def coords(self) -> tuple:
        """Coordinates over {1, w}."""
        return Fraction(self.x, self.D), Fraction(self.y, self.D)

    def uv(self) -> tuple:
        if self.d % 4 == 3:
            return Fraction(2 * self.x + self.y, 2 * self.D), Fraction(self.y, 2 * self.D)
        return Fraction(self.x, self.D), Fraction(self.y, self.D)

    def __complex__(self):
        u, v = self.uv()
        return complex(float(u), float(v) * math.sqrt(self.d))

    def norm(self) -> Fraction:
        return Fraction(qnorm(QuadInt(self.x, self.y, self.d)), self.D * self.D)

    def as_fraction(self) -> tuple:
        """Reduced ``(num, den)`` with gcd a unit and den a canonical associate."""
        if self._frac is None:
            num = QuadInt(self.x, self.y, self.d)
            den = QuadInt(self.D, 0, self.d)
            if not num:
                self._frac = (num, QuadInt(1, 0, self.d))
            else:
                g = quad_gcd(num, den)
                q_num, r1 = divmod_nearest(num, g)
                q_den, r2 = divmod_nearest(den, g)
                assert not r1 and not r2
                u = _normalizing_unit(q_den)
                self._frac = (q_num * u, q_den * u)
        return self._frac

    @property
    def num(self) -> QuadInt:
        return self.as_fraction()[0]

    @property
    def den(self) -> QuadInt:
        return self.as_fraction()[1]

    def height_sq(self) -> int:
        """Squared height max(|num|, |den|)^2 of the reduced fraction."""
        num, den = self.as_fraction()
        return max(qnorm(num), qnorm(den))

    def __repr__(self):
        return f"QuadRat({_format_pair(self.x, self.y, self.d)}/{self.D}, d={self.d})"

    def __str__(self):
        s = _format_pair(self.x, self.y, self.d)
        if self.D == 1:
            return s
        return f"({s})/{self.D}"


def _closed_xyD(cfg: FieldConfig, p: int, q: int, D: int) -> bool:
    """Closed-cell test for (p + q w)/D with D > 0, integer arithmetic only."""
    if not cfg.hexagonal:
        return 2 * abs(p) <= D and 2 * abs(q) <= D
    s = 2 * p + q
    if abs(s) > D:
        return False
    lim = (cfg.d + 1) * D
    dq = cfg.d * q
    return 2 * abs(dq + s) <= lim and 2 * abs(dq - s) <= lim


def _strict_xyD(cfg: FieldConfig, p: int, q: int, D: int) -> bool:
    if not _closed_xyD(cfg, p, q, D):
        return False
    for t in cfg.excluded_translates:
        if _closed_xyD(cfg, p - t.a * D, q - t.b * D, D):
            return False
    return True


def _as_rat(z, cfg: FieldConfig) -> QuadRat:
    if isinstance(z, QuadRat):
        return z
    if isinstance(z, QuadInt):
        return QuadRat.from_int(z)
    if isinstance(z, (int, Fraction)):
        z = Fraction(z)
        return QuadRat(z.numerator, 0, z.denominator, cfg.d)
    raise TypeError(f"cannot interpret {z!r} as an element of K_{cfg.d}")


def closed_domain_contains(z, cfg: FieldConfig) -> bool:
    """Membership in the closed cell I_d."""
    z = _as_rat(z, cfg)
    return _closed_xyD(cfg, z.x, z.y, z.D)


def strict_domain_contains(z, cfg: FieldConfig) -> bool:
    """Membership in the strict fundamental domain I'_d.

    ``z`` must satisfy the closed inequalities of I_d, and for each excluded
    translate ``t`` the point ``z - t`` must fail at least one of them.
    """
    z = _as_rat(z, cfg)
    return _strict_xyD(cfg, z.x, z.y, z.D)


def round_nearest(z, cfg: FieldConfig) -> QuadInt:
    """The unique beta in O_d with z - beta in I'_d."""
    z = _as_rat(z, cfg)
    x, y, D = z.x, z.y, z.D
    # floor((2x + D) / 2D) is the nearest integer to x/D
    a0 = (2 * x + D) // (2 * D)
    b0 = (2 * y + D) // (2 * D)
    found = []
    for da in (-1, 0, 1):
        for db in (-1, 0, 1):
            a, b = a0 + da, b0 + db
            if _strict_xyD(cfg, x - a * D, y - b * D, D):
                found.append((a, b))
    if len(found) != 1:
        raise UniquenessViolation(f"{len(found)} candidates for [z] with z={z!r}", candidates=found)
    a, b = found[0]
    return QuadInt(a, b, cfg.d)


def divmod_nearest(a: QuadInt, b: QuadInt) -> tuple:
    """Division with remainder ``a = q*b + r`` where r/b lies in I'_d."""
    if not b:
        raise DivisionByZero("division by zero")
    cfg = field_config(a.d)
    n = a * b.conj()
    q = round_nearest(QuadRat(n.a, n.b, qnorm(b), a.d), cfg)
    return q, a - q * b


def _normalizing_unit(alpha: QuadInt) -> QuadInt:
    units = _units(alpha.d)
    for u in units:
        v = alpha * u
        if v.a > 0 and v.b >= 0:
            return u
    for u in units:
        v = alpha * u
        if v.a > 0 or (v.a == 0 and v.b > 0):
            return u
    raise ValueError("zero has no canonical associate")


def canonical_associate(alpha: QuadInt) -> QuadInt:
    """The associate with a > 0, b >= 0 when one exists, else the one with (a, b) > (0, 0)."""
    return alpha * _normalizing_unit(alpha)


def is_unit(alpha: QuadInt) -> bool:
    return qnorm(alpha) == 1


def quad_gcd(a: QuadInt, b: QuadInt) -> QuadInt:
    """Greatest common divisor by the nearest-integer Euclidean algorithm."""
    if not a and not b:
        raise BothZero("gcd(0, 0) is undefined")
    while b:
        _, r = divmod_nearest(a, b)
        a, b = b, r
    return canonical_associate(a)


def gcd_steps(a: QuadInt, b: QuadInt) -> int:
    """Number of division steps quad_gcd performs."""
    n = 0
    while b:
        _, r = divmod_nearest(a, b)
        a, b = b, r
        n += 1
    return n


_TERM = re.compile(r"([+-]?)\s*(\d+(?:/\d+)?)?\s*\*?\s*([iws]?)")


def parse_element(text: str, d: int) -> QuadRat:
    """Parse literals such as ``2/5-1/5i``, ``1/2+1/2w`` or ``3``.

    ``i`` is the imaginary unit (only meaningful for d = 1), ``w`` the basis
    element and ``s`` stands for sqrt(-d).
    """
    s = text.replace(" ", "")
    if not s:
        raise ValueError("empty literal")
    cfg = field_config(d)
    pos = 0
    total = QuadRat(0, 0, 1, d)
    while pos < len(s):
        m = _TERM.match(s, pos)
        if not m or m.end() == pos:
            raise ValueError(f"cannot parse {text!r} at offset {pos}")
        sign, num, sym = m.groups()
        if num is None and not sym:
            raise ValueError(f"cannot parse {text!r} at offset {pos}")
        coeff = Fraction(num) if num is not None else Fraction(1)
        if sign == "-":
            coeff = -coeff
        if sym == "":
            base = QuadRat(1, 0, 1, d)
        elif sym == "w":
            base = QuadRat(0, 1, 1, d)
        elif sym == "s":
            base = QuadRat.from_uv(0, 1, d)
        else:
            if d != 1:
                raise ValueError("'i' is only an element of K_1; use 'w' or 's'")
            base = QuadRat(0, 1, 1, d)
        total = total + base * QuadRat(coeff.numerator, 0, coeff.denominator, d)
        pos = m.end()
    return total
