"""Critical constants, resolvent roots and Riccati flows A' = R(A) + lambda."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .errors import DegenerateR, InadmissibleModel, OutOfDomain, QuadratureFailure, StepSizeUnderflow, UnboundedMinimum
from .mechanisms import Mechanisms

INF = math.inf

RTOL = 1e-10
ATOL = 1e-12
CEILINGS = (1e6, 1e7, 1e8)
NEAR_CRITICAL = 1e-8
# lambda_R carries rounding from the minimiser; values this close above it are accepted
DOMAIN_SLACK = 1e-12
# t >= T(lambda) - EXPLOSION_TOL * max(1, T) counts as past the explosion
EXPLOSION_TOL = 1e-9


def _brent(f, lo, hi):
    return optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


@dataclass(frozen=True)
class RiccatiProfile:
    mech: Mechanisms
    u_c: float
    lambda_R: float
    lambda_F: float
    lambda_c: float
    y_c: float
    case: str  # "interior", "boundary" or "degenerate"

    def summary(self) -> dict:
        return {
            "u_c": self.u_c,
            "lambda_R": self.lambda_R,
            "lambda_F": self.lambda_F,
            "lambda_c": self.lambda_c,
            "y_c": self.y_c,
            "gamma_F": self.mech.gamma_F,
            "gamma_R": self.mech.gamma_R,
            "case": self.case,
        }


def find_u_c(mech: Mechanisms) -> tuple[float, float, str]:
    """Minimiser u_c of R on [0, gamma_R] and lambda_R = -R(u_c).

    Returns (u_c, lambda_R, case) with case "interior" when R'(u_c) = 0 and
    "boundary" when R is still decreasing at gamma_R.
    """
    if not mech.nondegenerate:
        raise DegenerateR("R is linear; use the pure-OU branch")
    g = mech.gamma_R
    if g <= 0:
        raise InadmissibleModel("gamma_R must be positive")
    dR = lambda u: mech.R(u, 1)
    if math.isinf(g):
        hi = 1.0
        while dR(hi) <= 0:
            hi *= 2.0
            if hi > 1e300:
                raise UnboundedMinimum("R' stays negative on [0, inf)")
    else:
        edge = dR(g)
        if edge <= 0:
            return g, -mech.R(g), "boundary"
        hi = g
        j = 1
        # R' may be +inf exactly at gamma_R; back off until it is finite
        while not math.isfinite(dR(hi)):
            hi = g * (1.0 - 2.0**-j)
            j += 1
            if dR(hi) <= 0:
                lo = hi
                hi = g * (1.0 - 2.0 ** -(j + 40))
                u = _brent(dR, lo, hi)
                return u, -mech.R(u), "interior"
    u = _brent(dR, 0.0, hi)
    return u, -mech.R(u), "interior"


def critical_lambda(mech: Mechanisms, u_c: float, lambda_R: float) -> tuple[float, float]:
    """(lambda_F, lambda_c). lambda_F is finite iff gamma_F <= u_c."""
    gF = mech.gamma_F
    if not mech.nondegenerate:
        lam_F = -mech.beta * gF
    elif gF <= u_c:
        lam_F = -mech.R(gF)
    else:
        lam_F = INF
    return lam_F, min(lam_F, lambda_R)


def make_profile(mech: Mechanisms) -> RiccatiProfile:
    if mech.nondegenerate:
        u_c, lam_R, case = find_u_c(mech)
    else:
        u_c, lam_R, case = INF, INF, "degenerate"
    lam_F, lam_c = critical_lambda(mech, u_c, lam_R)
    return RiccatiProfile(mech, u_c, lam_R, lam_F, lam_c, min(u_c, mech.gamma_F), case)


def _above_R(profile: RiccatiProfile, lam: float) -> bool:
    """lambda > lambda_R beyond rounding slack."""
    return lam > profile.lambda_R + DOMAIN_SLACK * max(1.0, abs(profile.lambda_R))


def resolvent_root(profile: RiccatiProfile, lam: float) -> float:
    """Smallest root y(lambda) of R(y) + lambda = 0."""
    lam = float(lam)
    if _above_R(profile, lam):
        raise OutOfDomain(f"lambda={lam} exceeds lambda_R={profile.lambda_R}")
    if lam == 0.0:
        return 0.0
    mech = profile.mech
    if profile.case == "degenerate":
        return lam / -mech.beta
    if profile.lambda_R - lam < NEAR_CRITICAL:
        return profile.u_c
    g = lambda y: mech.R(y) + lam
    if lam > 0:
        return _brent(g, 0.0, profile.u_c)
    L = 1.0
    while g(-L) <= 0:
        L *= 2.0
    return _brent(g, -L, 0.0)


def resolvent_slope(profile: RiccatiProfile, lam: float) -> float:
    """y'(lambda) = -1 / R'(y(lambda))."""
    y = resolvent_root(profile, lam)
    return -1.0 / profile.mech.R(y, 1)


def relaxation_time(profile: RiccatiProfile, lam: float, tol: float = 1e-7) -> float:
    """Time after which |A(t, lambda) - y(lambda)| is expected below tol.

    Exponential rate |R'(y)| away from lambda_R, algebraic 2 / (R''(u_c) t) at it.
    """
    y = resolvent_root(profile, lam)
    rate = -profile.mech.R(y, 1)
    gap = max(abs(y), 1e-300)
    if rate > 1e-6:
        return 1.0 + 1.5 * math.log(max(gap / tol, 2.0)) / rate
    return 4.0 / (profile.mech.R(y, 2) * tol)


@dataclass(frozen=True)
class RiccatiSolution:
    lam: float
    t: np.ndarray
    A: np.ndarray
    w: np.ndarray  # int_0^t F(A(s)) ds, +inf once A passes gamma_F
    status: str  # "global" or "exploding"
    limit: float | None = None
    T: float | None = None
    crossings: tuple = ()
    nfev: int = 0
    interp: Callable | None = field(default=None, repr=False, compare=False)

    def at(self, s):
        """Dense-output value of A at time(s) s."""
        s = np.asarray(s, dtype=float)
        if self.interp is None:
            return np.interp(s, self.t, self.A)
        return self.interp(s)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "A", "int_F_A"])
            for row in zip(self.t, self.A, self.w):
                wr.writerow([repr(float(v)) for v in row])


def _clip_level(mech: Mechanisms) -> tuple[float, tuple[float, ...]]:
    """Upper clip for the ODE state and the blow-up ceilings.

    Polynomially growing R uses the three ceilings for extrapolation. Faster
    growth would underflow the step size first, so a single ceiling is taken
    where R is still moderate; the time left beyond it is ~1/R(c).
    """
    g = mech.gamma_R
    if math.isfinite(g):
        return g, (g,)
    c = CEILINGS[-1]
    if mech.R(4 * c) <= 1e20 * c * c:
        return 4 * c, CEILINGS
    while mech.R(1.5 * c) > 1e12:
        c /= 1.25
    return 1.5 * c, (c,)


def _extrapolate(times: list[float]) -> float:
    if len(times) < 3:
        return times[-1]
    t1, t2, t3 = times[-3:]
    d1, d2 = t2 - t1, t3 - t2
    den = d2 - d1
    if den == 0.0 or d1 == 0.0 or not (0.0 < d2 / d1 < 1.0):
        return t3
    return t3 - d2 * d2 / den


def _integrate(rhs, y0, t_end, events, n_state):
    sol = integrate.solve_ivp(
        rhs, (0.0, t_end), y0, method="DOP853", rtol=RTOL, atol=ATOL, dense_output=True, events=events or None
    )
    if sol.status == -1:
        state = sol.y[:, -1] if sol.y.size else np.asarray(y0)
        raise StepSizeUnderflow(sol.message, t_last=float(sol.t[-1]), state_last=state[:n_state].copy())
    return sol


def _flow(mech, drive, start, t_end, *, lam_sign, clip, ceilings=(), gamma_F=INF):
    """Integrate a' = drive(a), w' = F(a) from a(0) = start.

    Returns (t, a, w, crossing_times, interp, nfev). Integration of w stops once
    ``a`` passes gamma_F; after that w is +inf.
    """
    ceil_events = []
    for c in ceilings:
        ev = lambda t, y, c=c: y[0] - c
        ev.direction = 1.0
        ev.terminal = c == ceilings[-1]
        ceil_events.append(ev)

    f_clip = INF
    if math.isfinite(gamma_F):
        # RK stages may step past gamma_F; the terminal event records the crossing
        f_clip = gamma_F if math.isfinite(mech.F(gamma_F)) else gamma_F * (1 - 1e-12)

    def rhs2(t, y):
        a = min(y[0], clip)
        return [drive(a), mech.F(min(a, f_clip))]

    gF_event = None
    if lam_sign > 0 and math.isfinite(gamma_F) and gamma_F < clip:

        def gF_event(t, y):
            return y[0] - gamma_F

        gF_event.direction = 1.0
        gF_event.terminal = True

    events = ceil_events + ([gF_event] if gF_event else [])
    sol = _integrate(rhs2, [start, 0.0], t_end, events, 1)
    nfev = sol.nfev
    t, a, w = sol.t, sol.y[0], sol.y[1]
    t_events = sol.t_events or []
    crossings = [float(te[0]) for te in t_events[: len(ceil_events)] if len(te)]
    interps = [(0.0, sol.t[-1], lambda s, d=sol.sol: d(s)[0])]
    hit_F = gF_event is not None and len(t_events[-1]) > 0
    if hit_F:
        t0 = float(sol.t_events[-1][0])
        a0 = float(sol.y_events[-1][0][0])
        w = w.copy()
        w[t >= t0] = INF
        if t0 < t_end:
            rhs1 = lambda s, y: [drive(min(y[0], clip))]
            sol2 = integrate.solve_ivp(
                lambda s, y: rhs1(s + t0, y),
                (0.0, t_end - t0),
                [a0],
                method="DOP853",
                rtol=RTOL,
                atol=ATOL,
                dense_output=True,
                events=ceil_events or None,
            )
            if sol2.status == -1:
                raise StepSizeUnderflow(sol2.message, t_last=t0 + float(sol2.t[-1]), state_last=sol2.y[:, -1])
            nfev += sol2.nfev
            t = np.concatenate([t, t0 + sol2.t[1:]])
            a = np.concatenate([a, sol2.y[0][1:]])
            w = np.concatenate([w, np.full(len(sol2.t) - 1, INF)])
            if ceil_events:
                crossings += [t0 + float(te[0]) for te in (sol2.t_events or []) if len(te)]
            interps.append((t0, t0 + sol2.t[-1], lambda s, d=sol2.sol, t0=t0: d(s - t0)[0]))

    def interp(s):
        s = np.asarray(s, dtype=float)
        out = np.empty_like(s)
        for lo, hi, f in interps:
            m = (s >= lo) & (s <= hi)
            if m.any():
                out[m] = f(s[m])
        return out

    return t, a, w, crossings, interp, nfev


def solve_A(profile: RiccatiProfile, lam: float, t_end: float) -> RiccatiSolution:
    """Solve A' = R(A) + lambda, A(0) = 0, on [0, t_end] or up to blow-up."""
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    lam = float(lam)
    mech = profile.mech
    if lam == 0.0:
        t = np.array([0.0, t_end])
        return RiccatiSolution(lam, t, np.zeros(2), np.zeros(2), "global", limit=0.0, interp=lambda s: np.zeros_like(np.asarray(s, float)))
    exploding = _above_R(profile, lam)
    clip, ceilings = _clip_level(mech) if exploding else (profile.u_c if lam > 0 else 0.0, ())
    if not exploding and lam > 0 and profile.case == "degenerate":
        clip = INF
    drive = lambda a: mech.R(a) + lam
    t, A, w, crossings, interp, nfev = _flow(
        mech, drive, 0.0, t_end, lam_sign=np.sign(lam), clip=clip, ceilings=ceilings, gamma_F=mech.gamma_F
    )
    if exploding:
        T = None
        if len(crossings) == len(ceilings):
            T = crossings[0] if len(ceilings) == 1 else _extrapolate(crossings)
        return RiccatiSolution(lam, t, A, w, "exploding", T=T, crossings=tuple(crossings), nfev=nfev, interp=interp)
    return RiccatiSolution(lam, t, A, w, "global", limit=resolvent_root(profile, lam), nfev=nfev, interp=interp)


def explosion_time(profile: RiccatiProfile, lam: float) -> float:
    """T(lambda) = int_0^{gamma_R} du / (R(u) + lambda) for lambda > lambda_R."""
    lam = float(lam)
    if not _above_R(profile, lam):
        raise OutOfDomain(f"explosion needs lambda > lambda_R={profile.lambda_R}")
    mech = profile.mech
    g = mech.gamma_R
    f = lambda u: 1.0 / (mech.R(u) + lam)
    opts = dict(epsabs=0.0, epsrel=1e-12, limit=1000)
    u_c = profile.u_c
    with np.errstate(all="ignore"):
        head, e1 = integrate.quad(f, 0.0, u_c, **opts)
        if math.isfinite(g):
            tail, e2 = integrate.quad(f, u_c, g, **opts) if g > u_c else (0.0, 0.0)
        else:
            # u = u_c + s / (1 - s) maps [0, 1) onto [u_c, inf)
            tail, e2 = integrate.quad(lambda s: f(u_c + s / (1 - s)) / (1 - s) ** 2 if s < 1 else 0.0, 0.0, 1.0, **opts)
    T = head + tail
    if not math.isfinite(T):
        return INF
    if e1 + e2 > 1e-9 * abs(T):
        raise QuadratureFailure(f"explosion time quadrature error {e1 + e2:.3g}")
    bound = g / (lam - profile.lambda_R)
    if T > bound * (1 + 1e-10):
        raise QuadratureFailure(f"T={T} violates the bound gamma_R/(lambda - lambda_R)={bound}")
    return T


def integrated_log_mgf(profile: RiccatiProfile, x0: float, t: float, lam: float) -> float:
    """log E exp(lambda int_0^t X ds) = x0 A(t) + int_0^t F(A(s)) ds (extended real)."""
    lam = float(lam)
    if lam == 0.0:
        return 0.0
    if _above_R(profile, lam):
        T = explosion_time(profile, lam)
        if t >= T - EXPLOSION_TOL * max(1.0, T):
            return INF
    sol = solve_A(profile, lam, t)
    if sol.t[-1] < t * (1 - 1e-12):
        return INF
    A_t, w_t = float(sol.A[-1]), float(sol.w[-1])
    if not math.isfinite(w_t):
        return INF
    return x0 * A_t + w_t


def limit_mgf(profile: RiccatiProfile, lam: float) -> float:
    """Lambda(lambda) = F(y(lambda)) for lambda <= lambda_c, else +inf."""
    lam = float(lam)
    if lam > profile.lambda_c:
        return INF
    if lam == profile.lambda_c:
        return float(profile.mech.F(profile.y_c))
    return float(profile.mech.F(resolvent_root(profile, lam)))


def transition_log_laplace(profile: RiccatiProfile, x0: float, t: float, lam: float) -> float:
    """log E exp(lambda X_t) = x0 v(t) + int_0^t F(v(s)) ds with v' = R(v), v(0) = lambda <= 0."""
    lam = float(lam)
    if lam > 0:
        raise OutOfDomain("transition Laplace transform needs lambda <= 0")
    if lam == 0.0:
        return 0.0
    mech = profile.mech
    _, v, w, _, _, _ = _flow(mech, mech.R, lam, t, lam_sign=-1, clip=0.0)
    return x0 * float(v[-1]) + float(w[-1])


def sign_table_violations(profile: RiccatiProfile, sol: RiccatiSolution, tol: float = 1e-10) -> list[str]:
    """Check the sign and monotonicity pattern of a Riccati solution."""
    out = []
    A, lam = sol.A, sol.lam
    dA = np.diff(A)
    if sol.status == "global":
        y = sol.limit
        slack = tol * (1 + abs(y))
        if lam < 0:
            if np.any(A > slack) or np.any(A < y - slack):
                out.append("expected y(lambda) < A <= 0")
            if np.any(dA > slack):
                out.append("expected A nonincreasing")
        elif lam == 0:
            if np.any(A != 0):
                out.append("expected A == 0")
        else:
            if np.any(A < -slack) or np.any(A > y + slack):
                out.append("expected 0 <= A < y(lambda)")
            if np.any(dA < -slack):
                out.append("expected A nondecreasing")
    else:
        g = profile.mech.gamma_R
        if np.any(A < -tol):
            out.append("expected A >= 0 before explosion")
        if math.isfinite(g) and np.any(A[:-1] >= g * (1 + tol)):
            out.append("expected A < gamma_R before explosion")
        if np.any(dA < -tol * (1 + np.abs(A[1:]))):
            out.append("expected A nondecreasing")
    return out
