"""Path simulation of CBI processes: Euler scheme with truncated small jumps."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .errors import IncompatibleScheme, StepTooCoarse, TiltUnavailable
from .levy import LevyMeasure, PointMass, Zero
from .mechanisms import Mechanisms

DEFAULT_EPS = 1e-3
# cap on the jump rate of continuous parts above eps (per unit time, per unit state for mu)
ACTIVITY_CAP = 50.0
TABLE_KNOTS = 4000
TAIL_CUT = 1e-12


@dataclass(frozen=True)
class PathConfig:
    x0: float
    t_end: float
    dt: float
    eps: float | None = None
    seed: int = 0
    scheme: str = "euler"  # or "exact_cir"
    checkpoints: tuple[float, ...] | None = None
    block_size: int = 4096
    chunk_steps: int = 256

    def __post_init__(self):
        if not (self.x0 >= 0 and self.t_end > 0 and self.dt > 0):
            raise ValueError("need x0 >= 0, t_end > 0 and dt > 0")
        if self.dt > self.t_end:
            raise ValueError("dt must not exceed t_end")
        if self.scheme not in ("euler", "exact_cir"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.checkpoints is not None:
            cps = tuple(float(c) for c in self.checkpoints)
            if any(c <= 0 or c > self.t_end * (1 + 1e-12) for c in cps) or list(cps) != sorted(set(cps)):
                raise ValueError("checkpoints must be increasing and inside (0, t_end]")
            object.__setattr__(self, "checkpoints", cps)

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))

    def checkpoint_steps(self) -> np.ndarray:
        cps = self.checkpoints or (self.t_end,)
        return np.array([max(1, int(round(c / self.dt))) for c in cps], dtype=np.int64)


# ---- jump size tables --------------------------------------------------------


@dataclass(frozen=True)
class JumpTable:
    """Jumps of size >= eps as a compound Poisson law plus small-jump moments."""

    rate: float  # mass of [eps, inf)
    cdf: np.ndarray
    z: np.ndarray
    tail_first: float  # int_eps^inf z dm
    small_first: float  # int_0^eps z dm
    small_second: float  # int_0^eps z^2 dm

    @property
    def empty(self) -> bool:
        return self.rate == 0.0


def _continuous_cum(part: LevyMeasure, lo: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Geometric z grid on [lo, z_max] and cumulative mass of ``part`` from lo."""
    total = part.moment(0, lo)
    hi = max(2 * lo, 1.0)
    while part.moment(0, hi) > TAIL_CUT * total and hi < 1e30:
        hi *= 2.0
    if lo > 0:
        z = np.geomspace(lo, hi, n)
        dens = np.exp([part.log_density(v) for v in z])
    else:
        z = np.concatenate([[0.0], np.geomspace(1e-9 * hi, hi, n - 1)])
        dens = np.exp([part.log_density(v) for v in z[1:]])
        dens = np.concatenate([dens[:1], dens])
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(z))])
    if cum[-1] > 0:
        cum *= (total - part.moment(0, hi)) / cum[-1]
    return z, cum


def jump_table(measure: LevyMeasure, eps: float, n_knots: int = TABLE_KNOTS) -> JumpTable:
    rate = measure.moment(0, eps)
    small1 = measure.moment(1, 0.0, eps)
    small2 = measure.moment(2, 0.0, eps)
    if rate == 0.0:
        return JumpTable(0.0, np.zeros(1), np.zeros(1), 0.0, small1, small2)
    atoms = sorted((a, w) for a, w in measure.atoms() if a >= eps)
    grids = []
    for part in measure.continuous_parts():
        lo = max(eps, part.support_start())
        if part.moment(0, lo) > 0:
            grids.append(_continuous_cum(part, lo, n_knots))
    pts = np.unique(np.concatenate([g[0] for g in grids] + [np.array([a for a, _ in atoms])]))

    def cont_mass(zv):
        return sum(np.interp(zv, gz, gc, left=0.0, right=gc[-1]) for gz, gc in grids) if grids else 0.0

    knots_c, knots_z = [], []
    atom_mass = 0.0
    atom_iter = iter(atoms)
    nxt = next(atom_iter, None)
    for zv in pts:
        base = cont_mass(zv)
        if nxt is not None and zv == nxt[0]:
            knots_c.append(base + atom_mass)
            knots_z.append(zv)
            atom_mass += nxt[1]
            nxt = next(atom_iter, None)
        knots_c.append(base + atom_mass)
        knots_z.append(zv)
    cdf = np.array(knots_c) / knots_c[-1]
    return JumpTable(rate, cdf, np.array(knots_z), measure.moment(1, eps), small1, small2)


def default_eps(mech: Mechanisms) -> float:
    """DEFAULT_EPS, raised for infinite-activity densities until their rate is at most ACTIVITY_CAP.

    Never above half the smallest atom, so atoms always jump exactly.
    """
    locs = [a for a, _ in mech.nu.atoms() + mech.mu.atoms()]
    cap = min([0.5] + [0.5 * a for a in locs])
    eps = min(DEFAULT_EPS, cap)
    parts = mech.nu.continuous_parts() + mech.mu.continuous_parts()
    activity = lambda e: sum(p.moment(0, e) for p in parts)
    if not parts or activity(eps) <= ACTIVITY_CAP:
        return eps
    if activity(cap) > ACTIVITY_CAP:
        return cap
    lo, hi = math.log(eps), math.log(cap)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if activity(math.exp(mid)) > ACTIVITY_CAP else (lo, mid)
    return math.exp(hi)


# ---- tilting -------------------------------------------------------------------


def _single_atom(m: LevyMeasure):
    if isinstance(m, Zero):
        return None
    if isinstance(m, PointMass):
        return m
    raise TiltUnavailable("exponential tilting supports only zero or single point-mass jump measures")


@dataclass(frozen=True)
class Tilt:
    """Change of measure exp(lam * int_0^t X ds - log_mgf) for a fixed horizon t."""

    lam: float
    log_mgf: float
    A_mid: np.ndarray = field(repr=False)


def make_tilt(profile, cfg: PathConfig, lam: float) -> Tilt:
    from .riccati import integrated_log_mgf, solve_A

    mech = profile.mech
    _single_atom(mech.mu)
    _single_atom(mech.nu)
    if cfg.checkpoints not in (None, (cfg.t_end,)):
        raise TiltUnavailable("a tilt is tied to one horizon; use checkpoints=None")
    n, dt = cfg.n_steps, cfg.t_end / cfg.n_steps
    log_mgf = integrated_log_mgf(profile, cfg.x0, cfg.t_end, lam)
    if not math.isfinite(log_mgf):
        raise TiltUnavailable(f"log-MGF is infinite at lambda={lam}, t={cfg.t_end}")
    sol = solve_A(profile, lam, cfg.t_end)
    # A evaluated at the remaining horizon of each step midpoint
    remaining = cfg.t_end - (np.arange(n) + 0.5) * dt
    return Tilt(float(lam), float(log_mgf), np.asarray(sol.at(remaining), dtype=float))


# ---- batches -------------------------------------------------------------------


@dataclass
class PathBatch:
    times: np.ndarray
    X: np.ndarray  # (n_checkpoints, n_paths)
    integral: np.ndarray  # int_0^t X ds, trapezoidal
    qv_diffusion: np.ndarray
    qv_mu: np.ndarray
    qv_nu: np.ndarray
    martingale: np.ndarray
    truncated_fraction: float
    config: PathConfig
    log_weight: np.ndarray | None = None
    tilt_lambda: float | None = None

    @property
    def n_paths(self) -> int:
        return self.X.shape[1]

    @property
    def Y(self) -> np.ndarray:
        return self.integral / self.times[:, None]

    def write_checkpoints(self, path, header: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header is not None:
                fh.write("# " + json.dumps(header, sort_keys=True, default=str) + "\n")
            wr = csv.writer(fh)
            wr.writerow(["t", "mean_X", "mean_Y", "var_Y", "qv_diffusion", "qv_mu", "qv_nu"])
            Y = self.Y
            for i, t in enumerate(self.times):
                wr.writerow(
                    [
                        repr(float(t)),
                        repr(float(self.X[i].mean())),
                        repr(float(Y[i].mean())),
                        repr(float(Y[i].var(ddof=1))) if self.n_paths > 1 else "nan",
                        repr(float(self.qv_diffusion[i].mean())),
                        repr(float(self.qv_mu[i].mean())),
                        repr(float(self.qv_nu[i].mean())),
                    ]
                )


def _block_streams(seed: int, block: int):
    ss = np.random.SeedSequence(seed, spawn_key=(block,))
    key = np.random.SeedSequence(seed, spawn_key=(block, 1)).generate_state(1, np.uint64)[0]
    return np.random.Generator(np.random.Philox(ss)), np.uint64(key)


def _nu_noise(rng, nb, k, rate_per_step, table: JumpTable):
    """Per-step sums of immigration jump sizes and of their squares."""
    counts = rng.poisson(np.broadcast_to(rate_per_step, (nb, k)))
    total = int(counts.sum())
    if total == 0:
        return np.zeros((nb, k)), np.zeros((nb, k))
    z = _kernels.quantile_vec(rng.random(total), table.cdf, table.z)
    idx = np.repeat(np.arange(nb * k), counts.ravel())
    s1 = np.bincount(idx, weights=z, minlength=nb * k).reshape(nb, k)
    s2 = np.bincount(idx, weights=z * z, minlength=nb * k).reshape(nb, k)
    return s1, s2


def _kernel_for(backend):
    if backend is None:
        return _kernels.euler_chunk
    if backend == "numpy":
        return _kernels.euler_chunk_numpy
    if backend == "numba":
        if _kernels.euler_chunk_numba is None:
            raise RuntimeError("numba backend is unavailable or disabled")
        return _kernels.euler_chunk_numba
    raise ValueError(f"unknown backend {backend!r}")


def simulate_batch(
    mech: Mechanisms,
    cfg: PathConfig,
    n_paths: int,
    *,
    tilt: Tilt | None = None,
    backend: str | None = None,
) -> PathBatch:
    """Simulate ``n_paths`` independent paths and record checkpoint statistics."""
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    if cfg.dt * abs(mech.beta) > 0.5:
        raise StepTooCoarse(f"dt*|beta| = {cfg.dt * abs(mech.beta):.3g} > 0.5")
    if cfg.scheme == "exact_cir":
        if tilt is not None:
            raise IncompatibleScheme("tilting runs on the Euler scheme")
        return _simulate_exact_cir(mech, cfg, n_paths)

    eps = cfg.eps if cfg.eps is not None else default_eps(mech)
    locs = [a for a, _ in mech.nu.atoms() + mech.mu.atoms()]
    if locs and eps >= min(locs):
        raise ValueError("eps must lie below the smallest atom location")
    n_steps = cfg.n_steps
    dt = cfg.t_end / n_steps
    cp_steps = cfg.checkpoint_steps()
    nu_tab = jump_table(mech.nu, eps)
    mu_tab = jump_table(mech.mu, eps)
    has_mu = not mech.mu.is_zero
    has_nu = not nu_tab.empty
    b_eff = mech.b + nu_tab.small_first

    beta_t = np.full(n_steps, float(mech.beta))
    mu_rate_t = np.full(n_steps, mu_tab.rate)
    nu_rate_t = np.full(n_steps, nu_tab.rate)
    if tilt is not None:
        if len(tilt.A_mid) != n_steps:
            raise TiltUnavailable("tilt was built for a different step grid")
        A = tilt.A_mid
        beta_t = beta_t + mech.sigma**2 * A
        mu_atom = _single_atom(mech.mu)
        nu_atom = _single_atom(mech.nu)
        if mu_atom is not None:
            mu_rate_t = mu_rate_t * np.exp(A * mu_atom.location)
        if nu_atom is not None:
            nu_rate_t = nu_rate_t * np.exp(A * nu_atom.location)

    kernel = _kernel_for(backend)
    n_cp = len(cp_steps)
    out = {k: np.empty((n_cp, n_paths)) for k in ("X", "I", "QD", "QM", "QN")}
    trunc_total = 0
    empty = np.empty((0, 0))
    bs = cfg.block_size
    for block in range(-(-n_paths // bs)):
        p0 = block * bs
        nb = min(bs, n_paths - p0)
        rng, key = _block_streams(cfg.seed, block)
        x = np.full(nb, float(cfg.x0))
        integ, qd, qm, qn = (np.zeros(nb) for _ in range(4))
        ntr = np.zeros(nb, dtype=np.int64)
        step = 0
        for ci, target in enumerate(cp_steps):
            while step < target:
                k = min(cfg.chunk_steps, target - step)
                sl = slice(step, step + k)
                ZB = rng.standard_normal((nb, k)) if mech.sigma > 0 else np.zeros((nb, k))
                ZS = rng.standard_normal((nb, k)) if has_mu and mu_tab.small_second > 0 else empty
                UM = rng.random((nb, k)) if has_mu else empty
                if has_nu:
                    NU1, NU2 = _nu_noise(rng, nb, k, nu_rate_t[sl] * dt, nu_tab)
                else:
                    NU1 = NU2 = empty
                kernel(
                    x, integ, qd, qm, qn, ntr,
                    dt, b_eff, beta_t[sl], float(mech.sigma), mu_rate_t[sl], mu_tab.tail_first,
                    mu_tab.small_second, nu_tab.small_second,
                    ZB, ZS, UM, NU1, NU2, mu_tab.cdf, mu_tab.z, key, p0, step, has_mu, has_nu,
                )  # fmt: skip
                step += k
            for name, arr in (("X", x), ("I", integ), ("QD", qd), ("QM", qm), ("QN", qn)):
                out[name][ci, p0 : p0 + nb] = arr
        trunc_total += int(ntr.sum())

    times = cp_steps * dt
    log_w = None
    if tilt is not None:
        log_w = -tilt.lam * out["I"][-1] + tilt.log_mgf
    return PathBatch(
        times=times,
        X=out["X"],
        integral=out["I"],
        qv_diffusion=out["QD"],
        qv_mu=out["QM"],
        qv_nu=out["QN"],
        martingale=_martingale(mech, cfg.x0, times, out["X"], out["I"]),
        truncated_fraction=trunc_total / (n_paths * n_steps),
        config=cfg,
        log_weight=log_w,
        tilt_lambda=None if tilt is None else tilt.lam,
    )


def _martingale(mech, x0, times, X, integral):
    drift0 = mech.b + mech.nu.integral(0.0, 1)
    return X - x0 - drift0 * times[:, None] - mech.beta * integral


def _simulate_exact_cir(mech: Mechanisms, cfg: PathConfig, n_paths: int) -> PathBatch:
    """Exact square-root transitions; immigration jumps are added at step ends."""
    if not mech.mu.is_zero or mech.sigma <= 0:
        raise IncompatibleScheme("exact_cir needs mu = 0 and sigma > 0")
    if not math.isfinite(mech.nu.total_mass()):
        raise IncompatibleScheme("exact_cir needs compound-Poisson immigration jumps")
    n_steps = cfg.n_steps
    dt = cfg.t_end / n_steps
    cp_steps = cfg.checkpoint_steps()
    s2, beta = mech.sigma**2, mech.beta
    decay = math.exp(beta * dt)
    c = s2 * (1 - decay) / (4 * -beta)
    dof = 4 * mech.b / s2
    nu_tab = jump_table(mech.nu, 0.0) if not mech.nu.is_zero else None
    n_cp = len(cp_steps)
    out = {k: np.zeros((n_cp, n_paths)) for k in ("X", "I", "QD", "QN")}
    bs = cfg.block_size
    for block in range(-(-n_paths // bs)):
        p0 = block * bs
        nb = min(bs, n_paths - p0)
        rng, _ = _block_streams(cfg.seed, block)
        x = np.full(nb, float(cfg.x0))
        integ, qd, qn = np.zeros(nb), np.zeros(nb), np.zeros(nb)
        step = 0
        for ci, target in enumerate(cp_steps):
            while step < target:
                pois = rng.poisson(x * decay / (2 * c))
                xn = c * rng.gamma(dof / 2 + pois, 2.0)
                if nu_tab is not None:
                    j1, j2 = _nu_noise(rng, nb, 1, nu_tab.rate * dt, nu_tab)
                    xn = xn + j1[:, 0]
                    qn += j2[:, 0]
                qd += s2 * x * dt
                integ += 0.5 * (x + xn) * dt
                x = xn
                step += 1
            out["X"][ci, p0 : p0 + nb] = x
            out["I"][ci, p0 : p0 + nb] = integ
            out["QD"][ci, p0 : p0 + nb] = qd
            out["QN"][ci, p0 : p0 + nb] = qn
    times = cp_steps * dt
    return PathBatch(
        times=times,
        X=out["X"],
        integral=out["I"],
        qv_diffusion=out["QD"],
        qv_mu=np.zeros((n_cp, n_paths)),
        qv_nu=out["QN"],
        martingale=_martingale(mech, cfg.x0, times, out["X"], out["I"]),
        truncated_fraction=0.0,
        config=cfg,
    )


# ---- diagnostics ---------------------------------------------------------------


def qv_diagnostics(batch: PathBatch, mech: Mechanisms) -> list[dict]:
    """Per-checkpoint means of [M]_t / t by component against their long-run targets."""
    m = mech.stationary_mean()
    targets = {
        "diffusion": mech.sigma**2 * m,
        "mu": m * mech.mu.integral(0.0, 2),
        "nu": mech.nu.integral(0.0, 2),
    }
    rho2 = mech.clt_variance()
    rows = []
    n = batch.n_paths
    for i, t in enumerate(batch.times):
        row = {"t": float(t)}
        total = np.zeros(n)
        for name, arr in (("diffusion", batch.qv_diffusion), ("mu", batch.qv_mu), ("nu", batch.qv_nu)):
            v = arr[i] / t
            total += v
            mean = float(v.mean())
            se = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
            row[f"{name}_mean"] = mean
            row[f"{name}_se"] = se
            row[f"{name}_target"] = targets[name]
            row[f"{name}_z"] = (mean - targets[name]) / se if se > 0 else (0.0 if mean == targets[name] else math.inf)
        row["total_over_beta2"] = float(total.mean() / mech.beta**2)
        row["rho2"] = rho2
        rows.append(row)
    return rows


def config_record(cfg: PathConfig) -> dict:
    return asdict(cfg)
