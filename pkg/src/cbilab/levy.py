"""Parametric jump measures on (0, inf) for the immigration and branching parts.

Every measure answers the same family of integrals,

    I(u; k, n) = int z**k * (exp(u z) - sum_{j<n} (u z)**j / j!) m(dz),

which covers ``int z**k e^{uz} dm`` (n = 0) and the compensated kernels
``e^{uz} - 1`` (immigration, n = 1) and ``e^{uz} - 1 - uz`` (branching,
n = 2) together with their u-derivatives.  Closed forms are used for atoms and
tempered power laws; everything else goes through adaptive quadrature.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import ClassVar

import mpmath
import numpy as np
from scipy import integrate, special

from .errors import InadmissibleMeasure, InvalidOrder, QuadratureFailure

INF = math.inf

QUAD_RTOL = 1e-10
QUAD_LIMIT = 10_000
# QUADPACK error estimates are pessimistic; fail only well above the request.
QUAD_ACCEPT = 1e-8

MAX_ORDER = 4

# number of Taylor terms removed from exp(uz) for each role, before differentiation
_ROLE_TERMS = {None: 0, "nu": 1, "mu": 2}

_LOG_MAX = 709.0


def _exp(x: float) -> float:
    return INF if x > _LOG_MAX else math.exp(x)


def _taylor_head(x: float, n: int) -> float:
    """sum_{j<n} x**j / j!"""
    s, term = 0.0, 1.0
    for j in range(n):
        s += term
        term *= x / (j + 1)
    return s


def exp_remainder(x: float, n: int) -> float:
    """exp(x) minus its Taylor polynomial of degree n - 1, without cancellation."""
    if n <= 0:
        return _exp(x)
    if n == 1:
        return INF if x > _LOG_MAX else math.expm1(x)
    if abs(x) >= 1.0:
        return _exp(x) - _taylor_head(x, n)
    term = x**n / math.factorial(n)
    s = term
    j = n
    while abs(term) > 1e-17 * abs(s):
        j += 1
        term *= x / j
        s += term
    return s


def _kernel(z: float, u: float, k: int, n: int, log_density: float) -> float:
    """z**k * exp_remainder(u z, n) * exp(log_density), evaluated in log space."""
    if z <= 0.0:
        return 0.0
    ld = log_density + (k * math.log(z) if k else 0.0)
    x = u * z
    if n == 0 or x > 30.0:
        v = _exp(ld + x)
        if n:
            v -= _exp(ld) * _taylor_head(x, n)
        return v
    return exp_remainder(x, n) * _exp(ld)


def _quad_half_line(f, lo: float, peak: float = 0.0, rate: float = 1.0) -> float:
    """int_lo^inf f(z) dz.

    Past the split point z1 the tail is mapped onto s in (0, 1) by
    z = z1 - log(1 - s) / rate for exponential decay at ``rate``, or by
    z = z1 / (1 - s) when ``rate`` is 0 (power-law tail).
    """
    z1 = max(lo + 1.0, peak)

    if rate > 0.0:
        def g(s):
            if s >= 1.0:
                return 0.0
            return f(z1 - math.log1p(-s) / rate) / ((1.0 - s) * rate)
    else:
        def g(s):
            if s >= 1.0:
                return 0.0
            w = 1.0 - s
            return f(z1 / w) * z1 / (w * w)

    total, err_total = 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for fn, a, b in ((f, lo, z1), (g, 0.0, 1.0)):
            val, err = integrate.quad(fn, a, b, epsabs=0.0, epsrel=QUAD_RTOL, limit=QUAD_LIMIT)
            total += val
            err_total += err
    if not math.isfinite(total) or err_total > max(QUAD_ACCEPT * abs(total), 1e-13):
        raise QuadratureFailure(f"quadrature did not converge: value={total!r}, error={err_total!r}")
    return total


def upper_gamma(q: float, x: float) -> float:
    """Upper incomplete gamma Gamma(q, x) for x > 0 and any real q."""
    if q > 0.0:
        return float(special.gammaincc(q, x) * special.gamma(q))
    if q == 0.0:
        return float(special.exp1(x))
    if x <= 1.0:
        # downward recurrence Gamma(a, x) = (Gamma(a+1, x) - x**a e^-x) / a; stable for small x
        steps = math.ceil(-q)
        a = q + steps
        val = upper_gamma(a, x)
        for _ in range(steps):
            a -= 1.0
            val = (val - x**a * math.exp(-x)) / a
        return val
    with mpmath.workdps(25):
        return float(mpmath.gammainc(q, x))


def power_exp_tail(q: float, s: float, x: float) -> float:
    """int_x^inf z**(q-1) exp(-s z) dz for s >= 0, x >= 0 (may be +inf)."""
    if s > 0.0:
        if x > 0.0:
            return s ** (-q) * upper_gamma(q, s * x)
        return math.gamma(q) * s ** (-q) if q > 0.0 else INF
    if x > 0.0 and q < 0.0:
        return x**q / (-q)
    return INF


def _is_nonpos_int(v: float) -> bool:
    return v <= 0.0 and float(v).is_integer()


class LevyMeasure:
    """Base class; concrete variants are frozen dataclasses."""

    type_tag: ClassVar[str] = ""

    # ---- queries every variant implements --------------------------------
    def exp_threshold(self) -> float:
        raise NotImplementedError

    def _integral(self, u: float, k: int, n: int) -> float:
        raise NotImplementedError

    def moment(self, k: int, lo: float = 0.0, hi: float = INF) -> float:
        """int_{lo <= z < hi} z**k m(dz)."""
        raise NotImplementedError

    def atoms(self) -> list[tuple[float, float]]:
        return []

    def continuous_parts(self) -> list["LevyMeasure"]:
        return []

    def check_role(self, role: str) -> None:
        pass

    def to_dict(self) -> dict:
        raise NotImplementedError

    # ---- shared ----------------------------------------------------------
    @property
    def is_zero(self) -> bool:
        return False

    def integral(self, u: float, k: int = 0, compensated: str | None = None) -> float:
        """Extended-real value of int z**k e^{uz} dm, or of the k-th u-derivative of
        the role's compensated kernel when ``compensated`` is ``"nu"`` or ``"mu"``.

        Returns +inf for u above the exponential-moment threshold; at the threshold
        itself the value is decided by the tail exponent.
        """
        if not (isinstance(k, (int, np.integer)) and 0 <= k <= MAX_ORDER):
            raise InvalidOrder(f"order k must be an integer in [0, {MAX_ORDER}], got {k!r}")
        if compensated not in _ROLE_TERMS:
            raise ValueError(f"compensated must be None, 'nu' or 'mu', got {compensated!r}")
        n = max(0, _ROLE_TERMS[compensated] - int(k))
        return self._integral(float(u), int(k), n)

    def total_mass(self) -> float:
        return self.moment(0)


@dataclass(frozen=True)
class Zero(LevyMeasure):
    type_tag: ClassVar[str] = "zero"

    @property
    def is_zero(self) -> bool:
        return True

    def exp_threshold(self) -> float:
        return INF

    def _integral(self, u, k, n):
        return 0.0

    def moment(self, k, lo=0.0, hi=INF):
        return 0.0

    def to_dict(self):
        return {"type": self.type_tag}


@dataclass(frozen=True)
class PointMass(LevyMeasure):
    """Mass ``mass`` placed at ``location``."""

    mass: float
    location: float
    type_tag: ClassVar[str] = "point_mass"

    def __post_init__(self):
        if not (self.mass > 0 and self.location > 0):
            raise InadmissibleMeasure("PointMass needs mass > 0 and location > 0")

    def exp_threshold(self):
        return INF

    def _integral(self, u, k, n):
        a = self.location
        return self.mass * a**k * exp_remainder(u * a, n)

    def moment(self, k, lo=0.0, hi=INF):
        return self.mass * self.location**k if lo <= self.location < hi else 0.0

    def atoms(self):
        return [(self.location, self.mass)]

    def to_dict(self):
        return {"type": self.type_tag, "mass": self.mass, "location": self.location}


@dataclass(frozen=True)
class TemperedPowerLaw(LevyMeasure):
    """Density amplitude * exp(-tempering z) * z**(-exponent) on (cutoff, inf)."""

    amplitude: float
    tempering: float
    exponent: float
    cutoff: float = 0.0
    type_tag: ClassVar[str] = "tempered_power_law"

    def __post_init__(self):
        if not self.amplitude > 0:
            raise InadmissibleMeasure("amplitude must be positive")
        if not (self.tempering >= 0 and self.cutoff >= 0):
            raise InadmissibleMeasure("tempering and cutoff must be nonnegative")
        if self.tempering == 0 and self.exponent <= 1:
            raise InadmissibleMeasure("untempered power law needs exponent > 1 for finite mass on [1, inf)")

    def check_role(self, role):
        eta = self.exponent
        near_zero_limit = {"nu": 2.0, "mu": 3.0}[role]
        tail_limit = {"nu": 1.0, "mu": 2.0}[role]
        if self.cutoff == 0 and eta >= near_zero_limit:
            raise InadmissibleMeasure(
                f"{role}-role power law with cutoff 0 needs exponent < {near_zero_limit}, got {eta}"
            )
        if self.tempering == 0 and eta <= tail_limit:
            raise InadmissibleMeasure(
                f"untempered {role}-role power law needs exponent > {tail_limit}, got {eta}"
            )

    def exp_threshold(self):
        return float(self.tempering)

    def log_density(self, z: float) -> float:
        return math.log(self.amplitude) - self.tempering * z - self.exponent * math.log(z)

    def continuous_parts(self):
        return [self]

    def support_start(self) -> float:
        return self.cutoff

    def _quad(self, u, k, n):
        rate = self.tempering - u
        return _quad_half_line(lambda z: _kernel(z, u, k, n, self.log_density(z)), self.cutoff, rate=rate)

    def _integral(self, u, k, n):
        A, th, x0 = self.amplitude, self.tempering, self.cutoff
        p = k - self.exponent + 1.0
        if u > th:
            return INF
        if n > 0 and u == 0.0:
            return 0.0
        if x0 == 0.0 and p + n <= 0.0:
            # non-integrable at the origin; the kernel behaves like (uz)**n / n!
            return INF if (n == 0 or u > 0 or n % 2 == 0) else -INF
        if u == th and p >= 0.0:
            # tail ~ z**(p-1) is not integrable
            return INF
        if x0 > 0.0:
            val = power_exp_tail(p, th - u, x0)
            for j in range(n):
                val -= u**j / math.factorial(j) * power_exp_tail(p + j, th, x0)
            if math.isfinite(val):
                return A * val
            return self._quad(u, k, n)
        if th > 0.0 and abs(u) <= 0.5 * th:
            return A * self._series(u, p, n)
        if th > 0.0 and not any(_is_nonpos_int(p + j) for j in range(n + 1)):
            s = th - u
            val = math.gamma(p) * s ** (-p) if s > 0 else 0.0
            for j in range(n):
                val -= u**j / math.factorial(j) * math.gamma(p + j) * th ** (-(p + j))
            return A * val
        return self._quad(u, k, n)

    def _series(self, u, p, n):
        # sum_{j>=n} u^j/j! Gamma(p+j) th^-(p+j); converges for |u| < th
        th = self.tempering
        term = u**n / math.factorial(n) * math.gamma(p + n) * th ** (-(p + n))
        s = term
        j = n
        while abs(term) > 1e-17 * abs(s) and j < n + 400:
            term *= u / (j + 1) * (p + j) / th
            s += term
            j += 1
        return s

    def moment(self, k, lo=0.0, hi=INF):
        lo = max(lo, self.cutoff)
        if hi <= lo:
            return 0.0
        p = k - self.exponent + 1.0
        upper = power_exp_tail(p, self.tempering, lo)
        if hi < INF:
            upper -= power_exp_tail(p, self.tempering, hi)
        return self.amplitude * upper

    def to_dict(self):
        return {
            "type": self.type_tag,
            "amplitude": self.amplitude,
            "tempering": self.tempering,
            "exponent": self.exponent,
            "cutoff": self.cutoff,
        }


@dataclass(frozen=True)
class StretchedExp(LevyMeasure):
    """Density exp(-z**exponent) on (0, inf), exponent > 1."""

    exponent: float
    type_tag: ClassVar[str] = "stretched_exp"

    def __post_init__(self):
        if not self.exponent > 1:
            raise InadmissibleMeasure("StretchedExp needs exponent > 1")

    def exp_threshold(self):
        return INF

    def log_density(self, z: float) -> float:
        return -(z**self.exponent)

    def continuous_parts(self):
        return [self]

    def support_start(self) -> float:
        return 0.0

    def _integral(self, u, k, n):
        r = self.exponent
        if u == 0.0:
            return 0.0 if n > 0 else math.gamma((k + 1) / r) / r
        if abs(u) <= 1.0:
            return self._series(u, k, n)
        if u < 0.0:
            # z = s / |u| puts e^{uz} on a unit scale; the Taylor head comes from exact moments
            a = -u
            head = _quad_half_line(lambda s: math.exp(k * math.log(s) - s - (s / a) ** r) if s > 0 else 0.0, 0.0)
            head = math.exp(math.log(head) - (k + 1) * math.log(a)) if head > 0 else 0.0
            return head - math.fsum(u**j / math.factorial(j) * self.moment(k + j) for j in range(n))
        # mass of z**k e^{uz - z^r} concentrates near the stationary point
        peak = (u / r) ** (1.0 / (r - 1.0)) if u > 0 else 0.0
        return _quad_half_line(lambda z: _kernel(z, u, k, n, -(z**r)), 0.0, peak)

    def _series(self, u, k, n):
        # sum_{j >= n} u^j / j! * Gamma((k + j + 1) / r) / r, in log space for the coefficients
        r = self.exponent
        total = 0.0
        j = n
        while True:
            term = math.exp(j * math.log(abs(u)) - math.lgamma(j + 1) + math.lgamma((k + j + 1) / r)) / r
            term = -term if (u < 0 and j % 2) else term
            total += term
            if j > n + 3 and abs(term) <= 1e-17 * abs(total):
                return total
            j += 1

    def moment(self, k, lo=0.0, hi=INF):
        if hi <= lo:
            return 0.0
        r = self.exponent
        a = (k + 1) / r
        scale = math.gamma(a) / r
        upper = special.gammaincc(a, lo**r) if lo > 0 else 1.0
        if hi < INF:
            upper -= special.gammaincc(a, hi**r)
        return float(scale * upper)

    def to_dict(self):
        return {"type": self.type_tag, "exponent": self.exponent}


@dataclass(frozen=True)
class FiniteMixture(LevyMeasure):
    parts: tuple[LevyMeasure, ...]
    type_tag: ClassVar[str] = "mixture"

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(p for p in self.parts if not p.is_zero))
        if any(isinstance(p, FiniteMixture) for p in self.parts):
            flat = []
            for p in self.parts:
                flat.extend(p.parts if isinstance(p, FiniteMixture) else [p])
            object.__setattr__(self, "parts", tuple(flat))

    @property
    def is_zero(self):
        return not self.parts

    def check_role(self, role):
        for p in self.parts:
            p.check_role(role)

    def exp_threshold(self):
        return min((p.exp_threshold() for p in self.parts), default=INF)

    def _integral(self, u, k, n):
        return math.fsum(p._integral(u, k, n) for p in self.parts) if self.parts else 0.0

    def moment(self, k, lo=0.0, hi=INF):
        return sum(p.moment(k, lo, hi) for p in self.parts)

    def atoms(self):
        out = []
        for p in self.parts:
            out.extend(p.atoms())
        return out

    def continuous_parts(self):
        out = []
        for p in self.parts:
            out.extend(p.continuous_parts())
        return out

    def to_dict(self):
        return {"type": self.type_tag, "parts": [p.to_dict() for p in self.parts]}


_VARIANTS = {cls.type_tag: cls for cls in (Zero, PointMass, TemperedPowerLaw, StretchedExp, FiniteMixture)}


def measure_from_dict(d: dict | None) -> LevyMeasure:
    """Inverse of ``LevyMeasure.to_dict``; ``None`` and ``{}`` mean the zero measure."""
    if not d:
        return Zero()
    d = dict(d)
    tag = d.pop("type", None)
    if tag not in _VARIANTS:
        raise InadmissibleMeasure(f"unknown measure type {tag!r}; expected one of {sorted(_VARIANTS)}")
    if tag == "mixture":
        return FiniteMixture(tuple(measure_from_dict(p) for p in d.get("parts", [])))
    try:
        return _VARIANTS[tag](**d)
    except TypeError as exc:
        raise InadmissibleMeasure(f"bad parameters for {tag}: {exc}") from None


def exp_threshold(measure: LevyMeasure) -> float:
    """sup{g >= 0 : int_1^inf e^{g z} m(dz) < inf}."""
    return measure.exp_threshold()


def exp_poly_integral(measure: LevyMeasure, u: float, k: int = 0, compensated: str | None = None) -> float:
    return measure.integral(u, k, compensated)
