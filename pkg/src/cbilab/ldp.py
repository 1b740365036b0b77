"""Rate function Lambda*, the slope bound alpha and the LDP regime."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import optimize

from .riccati import RiccatiProfile, limit_mgf, make_profile, resolvent_root

INF = math.inf


class Regime(str, Enum):
    FULL = "FullLDP"
    BOUNDED_LOWER = "BoundedLowerLDP"
    DEGENERATE_F0 = "DegenerateF0"


@dataclass(frozen=True)
class RatePoint:
    x: float
    y_star: float
    lambda_star: float
    rate: float
    at_boundary: bool
    upper_bound_only: bool = False


def _root(f, lo, hi):
    return optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


@dataclass
class RateFunction:
    """Lambda*(x) = sup_{y <= y_c} -R(y) x - F(y), with alpha and steepness."""

    profile: RiccatiProfile
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_mechanisms(cls, mech) -> "RateFunction":
        return cls(make_profile(mech))

    @property
    def mech(self):
        return self.profile.mech

    # ---- psi_x and its derivative -------------------------------------------
    def _xR(self, x: float, y: float) -> float:
        """x R(y), grouped as (x y) y so tiny x and huge |y| do not overflow."""
        if x == 0.0:
            return 0.0
        mech = self.mech
        xy = x * y
        jump = mech.mu.integral(y, 0, "mu") if not mech.mu.is_zero else 0.0
        return mech.beta * xy + 0.5 * mech.sigma**2 * xy * y + (x * jump if jump else 0.0)

    def psi(self, x: float, y: float) -> float:
        f = self.mech.F(y)
        if math.isinf(f):
            return -INF
        return -self._xR(x, y) - f

    def dpsi(self, x: float, y: float) -> float:
        r1, f1 = self.mech.R(y, 1), self.mech.F(y, 1)
        if math.isinf(f1):
            return -INF
        return -r1 * x - f1

    # ---- regime ----------------------------------------------------------------
    @property
    def regime(self) -> Regime:
        if self.mech.F_is_zero:
            return Regime.DEGENERATE_F0
        return Regime.FULL if self.steep else Regime.BOUNDED_LOWER

    @property
    def alpha(self) -> float:
        """Boundary value of -F'(y)/R'(y) at y = y_c (alpha >= m)."""
        if "alpha" not in self._cache:
            self._cache["alpha"] = self._alpha()
        return self._cache["alpha"]

    def _alpha(self) -> float:
        p, mech = self.profile, self.mech
        if mech.F_is_zero:
            return 0.0
        y = p.y_c
        if math.isinf(y):
            # linear R and gamma_F = inf: slope F'(y) / |beta| grows without bound unless nu = 0
            return mech.b / -mech.beta if mech.nu.is_zero else INF
        f1 = mech.F(y, 1)
        if p.case == "interior" and y == p.u_c:
            return INF
        r1 = mech.R(y, 1)
        if r1 >= 0:
            return INF
        return f1 / -r1

    def alpha_diagnostics(self, ks=range(2, 11)) -> list[tuple[float, float]]:
        """g(lambda) = -F'(y)/R'(y) at lambda_c - 10^-k; a finite-lambda_c diagnostic."""
        lam_c = self.profile.lambda_c
        if not math.isfinite(lam_c) or self.mech.F_is_zero:
            return []
        out = []
        for k in ks:
            lam = lam_c - 10.0**-k
            y = resolvent_root(self.profile, lam)
            out.append((lam, self.mech.F(y, 1) / -self.mech.R(y, 1)))
        return out

    @property
    def steep(self) -> bool:
        """Divergence of the slope at lambda_c (vacuous when lambda_c = inf)."""
        if self.mech.F_is_zero:
            return False
        return math.isinf(self.profile.lambda_c) or math.isinf(self.alpha)

    # ---- evaluation --------------------------------------------------------------
    def evaluate(self, x: float) -> RatePoint:
        x = float(x)
        if x < 0:
            raise ValueError("rate function is defined for x >= 0")
        p = self.profile
        alpha = self.alpha
        if self.mech.F_is_zero:
            lam_c = p.lambda_c
            rate = 0.0 if x == 0 else lam_c * x
            return RatePoint(x, p.y_c, lam_c, rate, True, x > 0)
        y_star, at_boundary, rate = self._maximise(x)
        lam_star = -self.mech.R(y_star) if math.isfinite(y_star) else (INF if y_star > 0 else -INF)
        return RatePoint(x, y_star, lam_star, rate, at_boundary, x >= alpha)

    def __call__(self, x):
        if np.ndim(x):
            return np.array([self.evaluate(v).rate for v in np.ravel(x)]).reshape(np.shape(x))
        return self.evaluate(x).rate

    def _upper_end(self, x: float):
        """(hi, dpsi(hi)) with dpsi(hi) finite, or None when the sup sits at y_c."""
        y_c = self.profile.y_c
        if math.isinf(y_c):
            hi = 1.0
            while self.dpsi(x, hi) > 0:
                hi *= 2.0
                if hi > 1e12:
                    return hi, self.dpsi(x, hi)
            return hi, self.dpsi(x, hi)
        d = self.dpsi(x, y_c)
        if math.isfinite(d):
            return y_c, d
        for k in range(1, 16):
            h = 10.0**-k * max(1.0, abs(y_c))
            d = self.dpsi(x, y_c - h)
            if math.isfinite(d) and d < 0:
                return y_c - h, d
        return None

    def _lower_limit(self, x: float) -> float:
        """lim_{y -> -inf} psi_x(y) when psi_x' stays negative."""
        mech = self.mech
        if mech.sigma > 0 and x > 0:
            # psi' -> +inf, so the maximiser lies past the bracket and psi there is astronomically large
            return INF
        kappa = -mech.beta + mech.mu.integral(0.0, 1)
        s = kappa * x - mech.b if x > 0 else -mech.b
        if s < 0:
            return INF
        return x * mech.mu.total_mass() + mech.nu.total_mass()

    def _maximise(self, x: float) -> tuple[float, bool, float]:
        up = self._upper_end(x)
        y_c = self.profile.y_c
        if up is None:
            return y_c, True, self.psi(x, y_c - 1e-15 * max(1.0, abs(y_c)))
        hi, d_hi = up
        if d_hi >= 0:
            if math.isinf(y_c):
                return INF, True, (INF if d_hi > 1e-12 else self.psi(x, hi))
            return y_c, True, self.psi(x, y_c)
        if self.dpsi(x, 0.0) == 0.0:
            return 0.0, False, 0.0
        lo = min(0.0, hi - 1.0)
        L = 1.0
        while self.dpsi(x, lo) <= 0:
            L *= 2.0
            lo = -L
            if L > 2.0**1000:
                return -INF, True, self._lower_limit(x)
        y = _root(lambda v: self.dpsi(x, v), lo, hi)
        return y, False, self.psi(x, y)

    # ---- bounds and tables -------------------------------------------------------
    def ldp_bounds(self, a1: float, a2: float = INF) -> tuple[float, float]:
        """(lower, upper) exponents for P(Y_t in [a1, a2])."""
        if not a1 < a2:
            raise ValueError("need a1 < a2")
        m = self.mech.stationary_mean()
        if a1 <= m <= a2:
            upper = 0.0
        else:
            upper = -(self(a1) if a1 > m else self(a2))
        lo, hi = max(a1, 0.0), min(a2, self.alpha)
        if not lo < hi:
            return -INF, upper
        if lo < m < hi:
            return 0.0, upper
        return -(self(lo) if lo >= m else self(hi)), upper

    def default_grid(self, n: int = 101) -> np.ndarray:
        """Points on [0, max(4m, m + 10 rho)] refined geometrically near m."""
        m = self.mech.stationary_mean()
        try:
            rho = math.sqrt(self.mech.clt_variance())
        except Exception:
            rho = max(m, 1.0)
        top = max(4 * m, m + 10 * rho, 1e-3)
        half = n // 2
        offsets = np.geomspace(1e-4, 1.0, half)
        left = m - offsets * m
        right = m + offsets * (top - m)
        xs = np.concatenate([[0.0], left, [m], right, [top]])
        return np.unique(np.clip(xs, 0.0, top))

    def table(self, xs=None) -> list[RatePoint]:
        xs = self.default_grid() if xs is None else xs
        return [self.evaluate(x) for x in xs]

    def write_table(self, path, xs=None) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x", "y_star", "lambda_star", "rate", "upper_bound_only"])
            for pt in self.table(xs):
                wr.writerow([repr(pt.x), repr(pt.y_star), repr(pt.lambda_star), repr(pt.rate), int(pt.upper_bound_only)])

    def summary(self) -> dict:
        return {
            "m": self.mech.stationary_mean(),
            "alpha": self.alpha,
            "lambda_c": self.profile.lambda_c,
            "steep": self.steep,
            "regime": self.regime.value,
        }


def legendre_residual(rf: RateFunction, x: float) -> float:
    """|Lambda*(x) + Lambda(lambda*) - lambda* x| with Lambda from the resolvent root."""
    pt = rf.evaluate(x)
    return abs(pt.rate + limit_mgf(rf.profile, pt.lambda_star) - pt.lambda_star * x)
