"""Immigration mechanism F and branching mechanism R of a subcritical CBI process."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InadmissibleModel, SecondMomentInfinite
from .levy import LevyMeasure, Zero, measure_from_dict

INF = math.inf


def _vectorize(method):
    def wrapper(self, u, order=0):
        if np.ndim(u):
            return np.array([method(self, float(v), order) for v in np.ravel(u)]).reshape(np.shape(u))
        return method(self, float(u), order)

    wrapper.__name__ = method.__name__
    wrapper.__doc__ = method.__doc__
    return wrapper


@dataclass(frozen=True)
class Mechanisms:
    """Parameters (b, beta, sigma, nu, mu) of a subcritical CBI process.

    F(u) = b u + int (e^{uz} - 1) nu(dz)
    R(u) = beta u + sigma^2 u^2 / 2 + int (e^{uz} - 1 - uz) mu(dz)
    """

    b: float
    beta: float
    sigma: float = 0.0
    nu: LevyMeasure = field(default_factory=Zero)
    mu: LevyMeasure = field(default_factory=Zero)

    def __post_init__(self):
        if not self.beta < 0:
            raise InadmissibleModel(f"beta must be negative (subcritical), got {self.beta}")
        if not (self.b >= 0 and self.sigma >= 0):
            raise InadmissibleModel("b and sigma must be nonnegative")
        self.nu.check_role("nu")
        self.mu.check_role("mu")

    @cached_property
    def gamma_F(self) -> float:
        return self.nu.exp_threshold()

    @cached_property
    def gamma_R(self) -> float:
        return self.mu.exp_threshold()

    @cached_property
    def nondegenerate(self) -> bool:
        """True iff R is strictly convex: sigma^2 + int z^2 dmu > 0."""
        return self.sigma > 0 or not self.mu.is_zero

    @property
    def F_is_zero(self) -> bool:
        return self.b == 0 and self.nu.is_zero

    @_vectorize
    def F(self, u: float, order: int = 0) -> float:
        """F and its first two derivatives; +inf beyond gamma_F."""
        if order == 0:
            return self.b * u + self.nu.integral(u, 0, "nu")
        if order == 1:
            return self.b + self.nu.integral(u, 1, "nu")
        if order == 2:
            return self.nu.integral(u, 2, "nu")
        raise ValueError(f"order must be 0, 1 or 2, got {order}")

    @_vectorize
    def R(self, u: float, order: int = 0) -> float:
        """R and its first two derivatives; +inf beyond gamma_R."""
        s2 = self.sigma**2
        if order == 0:
            return self.beta * u + 0.5 * s2 * u * u + self.mu.integral(u, 0, "mu")
        if order == 1:
            return self.beta + s2 * u + self.mu.integral(u, 1, "mu")
        if order == 2:
            return s2 + self.mu.integral(u, 2, "mu")
        raise ValueError(f"order must be 0, 1 or 2, got {order}")

    def stationary_mean(self) -> float:
        """m = (b + int z nu(dz)) / |beta| = -F'(0) / R'(0)."""
        first = self.nu.integral(0.0, 1)
        if not math.isfinite(first):
            raise InadmissibleModel("int z nu(dz) is infinite; the stationary mean does not exist")
        return (self.b + first) / (-self.beta)

    def clt_variance(self) -> float:
        """rho^2 = (R''(0) m + F''(0)) / beta^2."""
        r2, f2 = self.R(0.0, 2), self.F(0.0, 2)
        if not (math.isfinite(r2) and math.isfinite(f2)):
            raise SecondMomentInfinite("CLT variance needs finite second moments of nu and mu")
        return (r2 * self.stationary_mean() + f2) / self.beta**2

    def describe(self) -> str:
        s2 = self.sigma**2
        r_terms = [f"{self.beta:g}*u"]
        if s2:
            r_terms.append(f"{0.5 * s2:g}*u^2")
        if not self.mu.is_zero:
            r_terms.append(f"int(e^(uz)-1-uz) mu(dz), mu={self.mu.to_dict()}")
        f_terms = [f"{self.b:g}*u"] if self.b else []
        if not self.nu.is_zero:
            f_terms.append(f"int(e^(uz)-1) nu(dz), nu={self.nu.to_dict()}")
        return f"F(u) = {' + '.join(f_terms) or '0'}\nR(u) = {' + '.join(r_terms)}"

    def to_dict(self) -> dict:
        return {
            "b": self.b,
            "beta": self.beta,
            "sigma": self.sigma,
            "nu": self.nu.to_dict(),
            "mu": self.mu.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mechanisms":
        try:
            return cls(
                b=float(d.get("b", 0.0)),
                beta=float(d["beta"]),
                sigma=float(d.get("sigma", 0.0)),
                nu=measure_from_dict(d.get("nu")),
                mu=measure_from_dict(d.get("mu")),
            )
        except KeyError as exc:
            raise InadmissibleModel(f"model block is missing {exc}") from None
