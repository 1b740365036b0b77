"""Desk-scale experiments: LLN, CLT, MGF cross-checks, Riccati diagnostics, rate curves, LDP tails."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .errors import CBIError, ConfigError, TiltUnavailable
from .ldp import Regime, RateFunction, legendre_residual
from .mechanisms import Mechanisms
from .riccati import (
    explosion_time,
    integrated_log_mgf,
    make_profile,
    relaxation_time,
    resolvent_root,
    sign_table_violations,
    solve_A,
)
from .simulate import PathConfig, make_tilt, qv_diagnostics, simulate_batch

EXPERIMENTS = ("lln", "clt", "mgf-check", "riccati-diag", "rate-curve", "ldp-tail", "moment-check")


@dataclass
class Check:
    name: str
    value: float
    target: float
    tolerance: float
    passed: bool


@dataclass
class Report:
    experiment: str
    checks: list[Check] = field(default_factory=list)
    tables: dict[str, list[dict]] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name, value, target, tolerance, passed) -> None:
        self.checks.append(Check(name, float(value), float(target), float(tolerance), bool(passed)))


# ---- config ----------------------------------------------------------------------

DEFAULTS = {
    "lln": {"x0": None, "dt": 0.01, "scheme": "euler", "n_paths": 10_000, "times": [50.0, 100.0, 200.0], "mean_tol": 0.01, "ratio_tol": 0.3},
    "clt": {"x0": None, "dt": 0.01, "scheme": "euler", "n_paths": 10_000, "times": [50.0, 100.0, 200.0], "var_rel_tol": 0.10,
            "ad_max": 10.0, "qv_z": 3.0, "deterministic_tol": 1e-10},
    "mgf-check": {"x0": 1.0, "dt": 1e-3, "scheme": "euler", "n_paths": 100_000, "times": [1.0, 2.0], "lambdas": None, "z_tol": 3.0,
                  "margin": 1e-3},
    "riccati-diag": {"lambdas": None, "limit_tol": 1e-6, "t_rel_tol_finite": 1e-4, "t_rel_tol_infinite": 1e-3},
    "rate-curve": {"xs": None, "zero_tol": 1e-8, "eps": [0.01, 0.1]},
    "ldp-tail": {"x0": None, "delta": 0.25, "threshold": 0.5, "times": [50.0, 100.0], "dt": 0.01, "n_paths": 100_000,
                 "rel_tol": 0.2, "margin": 1e-3, "lambda": None},
    "moment-check": {"x0": None, "dt": 1e-3, "scheme": "euler", "n_paths": 20_000, "times": [0.5, 1.0, 2.0, 5.0], "s": 1.0, "t": 2.0,
                     "z_tol": 3.0},
}  # fmt: skip


def load_config(path) -> dict:
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            return tomllib.loads(text)
        return json.loads(text)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


def resolve_params(experiment: str, config: dict) -> dict:
    if experiment not in DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    user = dict(config.get("params") or config.get(experiment) or {})
    unknown = set(user) - set(DEFAULTS[experiment])
    if unknown:
        raise ConfigError(f"unknown parameters for {experiment}: {sorted(unknown)}")
    params = {**DEFAULTS[experiment], **user}
    for key in ("times", "lambdas", "xs"):
        grid = params.get(key)
        if grid is not None:
            if not grid or list(grid) != sorted(grid):
                raise ConfigError(f"{key} must be a nonempty sorted list")
    return params


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


def _mech(config: dict) -> Mechanisms:
    if "model" not in config:
        raise ConfigError("config needs a [model] block")
    try:
        return Mechanisms.from_dict(config["model"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad model block: {exc}") from None


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, (np.floating, np.integer)):
        return _jsonable(v.item())
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_report(report: Report, out_dir, config: dict, seed: int) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in report.tables.items():
        if not rows:
            continue
        with open(out / f"{name}.csv", "w", newline="") as fh:
            fields = list(dict.fromkeys(k for row in rows for k in row))
            wr = csv.DictWriter(fh, fieldnames=fields, restval="")
            wr.writeheader()
            wr.writerows(rows)
    doc = {
        "experiment": report.experiment,
        "passed": report.passed,
        "checks": [asdict(c) for c in report.checks],
        "summary": report.summary,
        "config_hash": config_hash(config),
        "seed": seed,
        "version": __version__,
    }
    path = out / "summary.json"
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    return path


# ---- helpers ---------------------------------------------------------------------


def _x0(params, mech):
    return mech.stationary_mean() if params.get("x0") is None else float(params["x0"])


def _log_mean_exp(v: np.ndarray) -> tuple[float, float]:
    """log of the sample mean of exp(v) and its delta-method standard error."""
    n = len(v)
    finite = np.isfinite(v)
    if not finite.any():
        return -math.inf, math.inf
    top = v[finite].max()
    w = np.where(finite, np.exp(v - top), 0.0)
    mean = w.mean()
    return top + math.log(mean), float(w.std(ddof=1) / mean / math.sqrt(n))


# ---- experiments -------------------------------------------------------------------


def run_lln(mech: Mechanisms, params: dict, seed: int = 0) -> Report:
    rep = Report("lln")
    m = mech.stationary_mean()
    times = [float(t) for t in params["times"]]
    cfg = PathConfig(_x0(params, mech), times[-1], params["dt"], seed=seed, scheme=params["scheme"], checkpoints=tuple(times))
    batch = simulate_batch(mech, cfg, int(params["n_paths"]))
    Y = batch.Y
    rows = []
    for i, t in enumerate(batch.times):
        err = Y[i] - m
        rows.append({"t": t, "mean_Y": Y[i].mean(), "se_mean_Y": Y[i].std(ddof=1) / math.sqrt(batch.n_paths),
                     "mse": float(np.mean(err**2)), "t_times_mse": t * float(np.mean(err**2))})  # fmt: skip
    rep.tables["lln"] = rows
    last = rows[-1]
    rep.check("abs_mean_error", abs(last["mean_Y"] - m), 0.0, params["mean_tol"], abs(last["mean_Y"] - m) < params["mean_tol"])
    rho2 = mech.clt_variance()
    if rho2 > 0 and len(rows) > 1:
        prev = rows[-2]
        ratio = last["mse"] / (prev["mse"] * prev["t"] / last["t"])
        rep.check("mse_ratio_1_over_t", ratio, 1.0, params["ratio_tol"], abs(ratio - 1) <= params["ratio_tol"])
    rep.summary = {"m": m, "rho2": rho2, "truncated_fraction": batch.truncated_fraction}
    return rep


def run_clt(mech: Mechanisms, params: dict, seed: int = 0) -> Report:
    rep = Report("clt")
    m, rho2 = mech.stationary_mean(), mech.clt_variance()
    times = [float(t) for t in params["times"]]
    cfg = PathConfig(_x0(params, mech), times[-1], params["dt"], seed=seed, scheme=params["scheme"], checkpoints=tuple(times))
    batch = simulate_batch(mech, cfg, int(params["n_paths"]))
    rows = []
    for i, t in enumerate(batch.times):
        S = math.sqrt(t) * (batch.Y[i] - m)
        var = float(S.var(ddof=1))
        ad = float(stats.anderson(S, "norm").statistic) if var > 0 else 0.0
        rows.append({"n": t, "var_S": var, "rho2": rho2, "anderson_darling": ad})
    rep.tables["clt"] = rows
    last = rows[-1]
    if rho2 > 0:
        rel = last["var_S"] / rho2 - 1
        rep.check("var_S_vs_rho2", last["var_S"], rho2, params["var_rel_tol"], abs(rel) <= params["var_rel_tol"])
        rep.check("anderson_darling", last["anderson_darling"], 0.0, params["ad_max"], last["anderson_darling"] <= params["ad_max"])
    else:
        rep.check("var_S_degenerate", last["var_S"], 0.0, params["deterministic_tol"], last["var_S"] <= params["deterministic_tol"])
    qv = qv_diagnostics(batch, mech)
    rep.tables["qv"] = qv
    for comp in ("diffusion", "mu", "nu"):
        z = qv[-1][f"{comp}_z"]
        rep.check(f"qv_{comp}_z", z, 0.0, params["qv_z"], abs(z) <= params["qv_z"])
    rep.summary = {"m": m, "rho2": rho2, "truncated_fraction": batch.truncated_fraction}
    return rep


def run_mgf_check(mech: Mechanisms, params: dict, seed: int = 0) -> Report:
    rep = Report("mgf-check")
    profile = make_profile(mech)
    lam_c = profile.lambda_c
    lams = params["lambdas"]
    if lams is None:
        top = lam_c if math.isfinite(lam_c) else 1.0
        lams = [-1.0, 0.4 * top, 0.8 * top]
    bound = lam_c - params["margin"]
    if any(lam >= bound for lam in lams):
        raise ConfigError(f"lambdas must stay below lambda_c - margin = {bound}")
    times = [float(t) for t in params["times"]]
    x0 = float(params["x0"])
    cfg = PathConfig(x0, times[-1], params["dt"], seed=seed, scheme=params["scheme"], checkpoints=tuple(times))
    batch = simulate_batch(mech, cfg, int(params["n_paths"]))
    rows = []
    for i, t in enumerate(batch.times):
        for lam in lams:
            est, se = _log_mean_exp(lam * batch.integral[i])
            exact = integrated_log_mgf(profile, x0, t, lam)
            z = (est - exact) / se
            rows.append({"t": t, "lambda": lam, "mc_log_mgf": est, "se": se, "riccati_log_mgf": exact, "z": z})
            rep.check(f"z[t={t:g},lambda={lam:g}]", z, 0.0, params["z_tol"], abs(z) <= params["z_tol"])
    rep.tables["mgf"] = rows
    rep.summary = {"lambda_c": lam_c, "truncated_fraction": batch.truncated_fraction}
    return rep


def run_riccati_diag(mech: Mechanisms, params: dict, seed: int = 0) -> Report:
    rep = Report("riccati-diag")
    profile = make_profile(mech)
    lam_R = profile.lambda_R
    lams = params["lambdas"]
    if lams is None:
        top = lam_R if math.isfinite(lam_R) else 1.0
        lams = sorted({-2.0, -1.0, -0.5, 0.0, 0.25 * top, 0.5 * top, 0.9 * top, top, 1.5 * top, 2.0 * top})
    finite_R = math.isfinite(mech.gamma_R)
    rows = []
    for lam in lams:
        row = {"lambda": lam}
        if lam <= lam_R:
            y = resolvent_root(profile, lam)
            t_end = relaxation_time(profile, lam, tol=params["limit_tol"] / 10)
            sol = solve_A(profile, lam, t_end)
            gap = abs(sol.A[-1] - y)
            bad = sign_table_violations(profile, sol)
            row.update(status="global", y=y, t_end=t_end, A_end=float(sol.A[-1]), gap=gap, violations=";".join(bad))
            rep.check(f"limit[lambda={lam:g}]", gap, 0.0, params["limit_tol"], gap < params["limit_tol"])
            rep.check(f"signs[lambda={lam:g}]", len(bad), 0, 0, not bad)
        else:
            T_quad = explosion_time(profile, lam)
            bound = mech.gamma_R / (lam - lam_R)
            t_cap = bound * 2 if finite_R else 10 * T_quad + 10
            sol = solve_A(profile, lam, t_cap)
            tol = params["t_rel_tol_finite"] if finite_R else params["t_rel_tol_infinite"]
            rel = abs(sol.T - T_quad) / T_quad if sol.T is not None else math.inf
            row.update(status="exploding", T_quad=T_quad, T_ode=sol.T, rel_err=rel, bound=bound)
            rep.check(f"explosion[lambda={lam:g}]", rel, 0.0, tol, rel < tol)
            rep.check(f"bound[lambda={lam:g}]", T_quad, bound, 0.0, T_quad <= bound)
            bad = sign_table_violations(profile, sol)
            rep.check(f"signs[lambda={lam:g}]", len(bad), 0, 0, not bad)
        rows.append(row)
    rep.tables["riccati"] = rows
    rep.summary = profile.summary()
    return rep


def run_rate_curve(mech: Mechanisms, params: dict, seed: int = 0) -> Report:
    rep = Report("rate-curve")
    rf = RateFunction.from_mechanisms(mech)
    xs = params["xs"]
    pts = rf.table(None if xs is None else np.asarray(xs, float))
    rep.tables["rate_curve"] = [
        {"x": p.x, "y_star": p.y_star, "lambda_star": p.lambda_star, "rate": p.rate, "upper_bound_only": int(p.upper_bound_only)}
        for p in pts
    ]
    m = mech.stationary_mean()
    at_m = rf(m)
    rep.check("rate_at_m", at_m, 0.0, params["zero_tol"], at_m < params["zero_tol"])
    for eps in params["eps"]:
        for x in (m - eps, m + eps):
            if x >= 0:
                v = rf(x)
                rep.check(f"positive[x={x:g}]", v, 0.0, 0.0, v > 0)
    if rf.regime is not Regime.DEGENERATE_F0:
        steep_pts = [p for p in pts if not p.at_boundary and math.isfinite(p.rate) and p.x > 0]
        worst = max((legendre_residual(rf, p.x) for p in steep_pts), default=0.0)
        rep.check("legendre_residual", worst, 0.0, 1e-8, worst < 1e-8)
    rep.summary = rf.summary()
    rep.summary["curvature_times_rho2"] = _curvature_times_rho2(rf, mech, m)
    return rep


def _curvature_times_rho2(rf, mech, m):
    """Lambda*''(m) * rho^2 by a central difference; close to 1 for regular models, reported only."""
    try:
        rho2 = mech.clt_variance()
    except CBIError:
        return math.nan
    if rho2 <= 0 or m <= 0:
        return math.nan
    h = 1e-3 * m
    second = (rf(m + h) - 2 * rf(m) + rf(m - h)) / (h * h)
    return second * rho2


def _tail_estimate(mech, profile, x0, t, dt, lam, level, n_paths, seed):
    cfg = PathConfig(x0, t, dt, seed=seed)
    tilt = make_tilt(profile, cfg, lam)
    batch = simulate_batch(mech, cfg, n_paths, tilt=tilt)
    Y = batch.Y[-1]
    log_p, se = _log_mean_exp(np.where(Y >= level, batch.log_weight, -np.inf))
    return log_p, se, float((Y >= level).mean())


def run_ldp_tail(mech: Mechanisms, params: dict, seed: int = 0) -> Report:
    rep = Report("ldp-tail")
    rf = RateFunction.from_mechanisms(mech)
    profile = rf.profile
    times = [float(t) for t in params["times"]]
    x0 = _x0(params, mech)
    degenerate = rf.regime is Regime.DEGENERATE_F0
    if degenerate:
        level = float(params["threshold"])
        lam = profile.lambda_c * (1 - params["margin"]) if params["lambda"] is None else float(params["lambda"])
        target = -profile.lambda_c * level
    else:
        level = mech.stationary_mean() + float(params["delta"])
        pt = rf.evaluate(level)
        lam = pt.lambda_star if params["lambda"] is None else float(params["lambda"])
        if lam >= profile.lambda_c - params["margin"]:
            raise TiltUnavailable(f"tilt lambda {lam} is within the margin of lambda_c={profile.lambda_c}")
        target = -pt.rate
    rows = []
    for i, t in enumerate(times):
        log_p, se, hit = _tail_estimate(mech, profile, x0, t, params["dt"], lam, level, int(params["n_paths"]), seed + i)
        rows.append({"t": t, "log_p": log_p, "se_log_p": se, "exponent": log_p / t, "tilted_hit_rate": hit})
    slope = (rows[-1]["log_p"] - rows[-2]["log_p"]) / (rows[-1]["t"] - rows[-2]["t"]) if len(rows) > 1 else rows[-1]["exponent"]
    rep.tables["ldp_tail"] = rows
    tol = params["rel_tol"]
    if degenerate:
        worst = rows[-1]["exponent"]
        rep.check("upper_bound", worst, target, tol, worst <= target * (1 - tol))
    elif target == 0.0:
        rep.check("exponent_at_m", slope, 0.0, tol, abs(slope) <= tol * 0.1)
    else:
        rep.check("slope_vs_rate", slope, target, tol, abs(slope / target - 1) <= tol)
    lower, upper = rf.ldp_bounds(level)
    rep.summary = {"level": level, "lambda_tilt": lam, "target_exponent": target, "slope": slope,
                   "bound_lower": lower, "bound_upper": upper, "regime": rf.regime.value}  # fmt: skip
    return rep


def run_moment_check(mech: Mechanisms, params: dict, seed: int = 0) -> Report:
    rep = Report("moment-check")
    m, beta = mech.stationary_mean(), mech.beta
    x0 = _x0(params, mech)
    s, t = float(params["s"]), float(params["t"])
    times = sorted(set(float(v) for v in params["times"]) | {s, t})
    cfg = PathConfig(x0, times[-1], params["dt"], seed=seed, scheme=params["scheme"], checkpoints=tuple(times))
    batch = simulate_batch(mech, cfg, int(params["n_paths"]))
    n = batch.n_paths
    z_tol = params["z_tol"]
    rows = []
    for i, tt in enumerate(batch.times):
        mean = float(batch.X[i].mean())
        se = float(batch.X[i].std(ddof=1) / math.sqrt(n))
        exact = x0 * math.exp(beta * tt) + m * (1 - math.exp(beta * tt))
        rows.append({"t": tt, "mean_X": mean, "se": se, "exact_mean": exact})
        if se > 0:
            rep.check(f"mean[t={tt:g}]", (mean - exact) / se, 0.0, z_tol, abs(mean - exact) <= z_tol * se)
    rep.tables["moments"] = rows
    top = max(r["mean_X"] - z_tol * r["se"] for r in rows)
    rep.check("sup_mean_bound", top, max(x0, m), 0.0, top <= max(x0, m) * (1 + 1e-12))
    i_s, i_t = times.index(s), times.index(t)
    xs_, xt_ = batch.X[i_s], batch.X[i_t]
    if xs_.std() > 0:
        fit = stats.linregress(xs_, xt_)
        decay = math.exp(beta * (t - s))
        rep.check("regression_slope", fit.slope, decay, z_tol * fit.stderr, abs(fit.slope - decay) <= z_tol * fit.stderr)
        rep.check("regression_intercept", fit.intercept, m * (1 - decay), z_tol * fit.intercept_stderr,
                  abs(fit.intercept - m * (1 - decay)) <= z_tol * fit.intercept_stderr)  # fmt: skip
    rep.summary = {"m": m, "x0": x0, "sup_bound": max(x0, m)}
    return rep


RUNNERS = {
    "lln": run_lln,
    "clt": run_clt,
    "mgf-check": run_mgf_check,
    "riccati-diag": run_riccati_diag,
    "rate-curve": run_rate_curve,
    "ldp-tail": run_ldp_tail,
    "moment-check": run_moment_check,
}


def run_experiment(experiment: str, config: dict, seed: int | None = None) -> tuple[Report, dict]:
    """Resolve config and seed, run the experiment and return (report, resolved config)."""
    seed = int(config.get("seed", 0) if seed is None else seed)
    params = resolve_params(experiment, config)
    mech = _mech(config)
    resolved = {"experiment": experiment, "seed": seed, "model": mech.to_dict(), "params": params}
    return RUNNERS[experiment](mech, params, seed), resolved
