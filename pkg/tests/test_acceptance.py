"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line to the terminal."""
import math
import time

import numpy as np
import pytest

from cbilab import Mechanisms, PointMass, RateFunction, Regime, TemperedPowerLaw
from cbilab.experiments import resolve_params, run_clt, run_ldp_tail, run_lln, run_mgf_check
from cbilab.ldp import legendre_residual
from cbilab.riccati import (
    explosion_time,
    make_profile,
    relaxation_time,
    resolvent_root,
    sign_table_violations,
    solve_A,
)
from cbilab.simulate import PathConfig, qv_diagnostics, simulate_batch
from tests.conftest import MODEL_ZOO, cir, tempered_ou


@pytest.fixture
def verdict(capsys):
    def emit(n, passed, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if passed else 'FAIL'} criterion {n}: {detail}")
        assert passed, detail

    return emit


def _params(exp, **kw):
    return resolve_params(exp, {"params": kw})


# ---- 1 ------------------------------------------------------------------------------


def test_criterion_1_cir_closed_forms(verdict):
    t0 = time.perf_counter()
    p = make_profile(cir())
    err_const = max(abs(p.u_c - 0.5), abs(p.lambda_R - 0.25))
    lams = np.linspace(-5.0, 0.25, 50)
    # printed form: |beta|/s2 - sqrt(beta^2/s2^2 - 2 lam/s2) with beta=-1, s2=2
    closed = 0.5 - np.sqrt(0.25 - lams)
    err_y = max(abs(resolvent_root(p, lam) - c) for lam, c in zip(lams, closed))
    q = make_profile(MODEL_ZOO["cir_gamma_F_quarter"])
    err_c = abs(q.lambda_c - 0.1875)
    elapsed = time.perf_counter() - t0
    ok = err_const < 1e-10 and err_y < 1e-8 and err_c < 1e-10 and elapsed < 1.0
    verdict(1, ok, f"|u_c,lambda_R err|={err_const:.2e} max|y err|={err_y:.2e} |lambda_c err|={err_c:.2e} time={elapsed:.2f}s")


# ---- 2 ------------------------------------------------------------------------------


def _riccati_pairs():
    pairs = []
    for name in ("cir", "cir_steep", "stable_mu", "atom_mu", "jump_diffusion"):
        p = make_profile(MODEL_ZOO[name])
        lr = p.lambda_R
        lams = (-3.0, lr, 0.5 * lr, 0.9 * lr) if name == "cir" else (-3.0, -0.5, 0.5 * lr, 0.9 * lr)
        pairs.extend((name, p, lam) for lam in lams)
    return pairs


def test_criterion_2_riccati_asymptotics(verdict):
    t0 = time.perf_counter()
    worst, bad = 0.0, []
    pairs = _riccati_pairs()
    for name, p, lam in pairs:
        sol = solve_A(p, lam, relaxation_time(p, lam))
        gap = abs(sol.A[-1] - resolvent_root(p, lam))
        worst = max(worst, gap)
        bad += [f"{name}@{lam:g}: {v}" for v in sign_table_violations(p, sol)]
    elapsed = time.perf_counter() - t0
    ok = len(pairs) == 20 and worst < 1e-6 and not bad and elapsed < 10.0
    verdict(2, ok, f"{len(pairs)} pairs, max|A-y|={worst:.2e}, sign violations={bad or 0}, time={elapsed:.2f}s")


# ---- 3 ------------------------------------------------------------------------------


def test_criterion_3_explosion_consistency(verdict):
    worst_fin, worst_inf, bound_bad = 0.0, 0.0, []
    for name in ("stable_mu", "cir", "cir_steep", "atom_mu", "jump_diffusion"):
        p = make_profile(MODEL_ZOO[name])
        g = p.mech.gamma_R
        for mult in (1.2, 2.0, 4.0, 10.0):
            lam = mult * p.lambda_R
            T = explosion_time(p, lam)
            bound = g / (lam - p.lambda_R)
            if T > bound:
                bound_bad.append((name, lam))
            cap = 2 * bound if math.isfinite(g) else 10 * T + 10
            sol = solve_A(p, lam, cap)
            rel = abs(sol.T - T) / T
            if math.isfinite(g):
                worst_fin = max(worst_fin, rel)
            else:
                worst_inf = max(worst_inf, rel)
    ok = worst_fin < 1e-4 and worst_inf < 1e-3 and not bound_bad
    verdict(3, ok, f"finite gamma_R rel={worst_fin:.2e}, infinite gamma_R rel={worst_inf:.2e}, bound violations={bound_bad or 0}")


# ---- 4 ------------------------------------------------------------------------------

MGF_MODELS = [
    ("cir", cir(), [-1.0, 0.1, 0.2]),
    ("cir+nu atom", cir(nu=PointMass(1.0, 0.5)), [-1.0, 0.1, 0.2]),
    ("branching atom", Mechanisms(b=1.0, beta=-1.0, mu=PointMass(1.0, 1.0)), [-1.0, 0.1, 0.3]),
]


@pytest.mark.slow
def test_criterion_4_mgf_cross_validation(verdict):
    t0 = time.perf_counter()
    zs, cells = [], 0
    for i, (_, mech, lams) in enumerate(MGF_MODELS):
        rep = run_mgf_check(mech, _params("mgf-check", lambdas=lams), seed=100 + i)
        zs += [abs(r["z"]) for r in rep.tables["mgf"]]
        cells += len(rep.tables["mgf"])
    elapsed = time.perf_counter() - t0
    ok = cells == 18 and max(zs) <= 3.0 and elapsed < 600
    verdict(4, ok, f"{cells} cells, max|z|={max(zs):.2f} (1e5 paths, dt=1e-3), time={elapsed:.0f}s")


# ---- 5 ------------------------------------------------------------------------------

ACCEPTANCE_MODELS = {
    "cir": cir(),
    "cir_b1_beta-2": cir(beta=-2.0),
    "tempered_ou_1.5": tempered_ou(1.5),
    "tempered_ou_2.0": tempered_ou(2.0),
    "tempered_ou_2.5": tempered_ou(2.5),
    "stable_mu": MODEL_ZOO["stable_mu"],
    "atom_mu": MODEL_ZOO["atom_mu"],
    "jump_diffusion": MODEL_ZOO["jump_diffusion"],
    "F0": Mechanisms(b=0.0, beta=-1.0, sigma=math.sqrt(2.0)),
}


def _grid_max(psi, lo, hi):
    """Brute force: coarse grid, then a 1e-6 grid around the coarse winner."""
    y = np.linspace(lo, hi, 40_001)
    v = psi(y)
    j = int(np.nanargmax(v))
    a, b = max(lo, y[max(j - 1, 0)]), min(hi, y[min(j + 1, len(y) - 1)])
    fine = np.arange(a, b + 1e-6, 1e-6)
    fine = fine[fine <= hi]
    return float(np.nanmax(psi(fine)))


def test_criterion_5_rate_function(verdict):
    zero_bad, pos_bad = [], []
    for name, mech in ACCEPTANCE_MODELS.items():
        rf = RateFunction.from_mechanisms(mech)
        m = mech.stationary_mean()
        if rf(m) >= 1e-8:
            zero_bad.append(name)
        for eps in (0.01, 0.1):
            for x in (m - eps, m + eps):
                if x >= 0 and not rf(x) > 0:
                    pos_bad.append((name, x))
    # grid oracle on 30 x-values: closed-form psi for CIR and for the atom jump-diffusion
    worst = 0.0
    jd = ACCEPTANCE_MODELS["jump_diffusion"]
    models = [
        (ACCEPTANCE_MODELS["cir"], lambda x: (lambda y: -(-y + y * y) * x - y), np.linspace(0.05, 3.0, 15)),
        (jd, lambda x: (lambda y: -(-y + 0.25 * y * y + np.expm1(0.5 * y) - 0.5 * y) * x - (y + np.expm1(0.5 * y))),
         np.linspace(0.2, 5.0, 15)),
    ]  # fmt: skip
    resid = 0.0
    for mech, make_psi, xs in models:
        rf = RateFunction.from_mechanisms(mech)
        for x in xs:
            oracle = _grid_max(make_psi(x), -20.0, rf.profile.y_c)
            worst = max(worst, abs(rf(x) - oracle))
            resid = max(resid, legendre_residual(rf, x))
    ok = not zero_bad and not pos_bad and worst < 1e-8 and resid < 1e-8
    verdict(5, ok, f"Lambda*(m) failures={zero_bad or 0}, positivity failures={pos_bad or 0}, "
                   f"30-point grid-oracle max err={worst:.2e}, Legendre residual={resid:.2e}")  # fmt: skip


# ---- 6 ------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_6_lln(verdict):
    t0 = time.perf_counter()
    rep = run_lln(cir(beta=-2.0), _params("lln"), seed=1)
    elapsed = time.perf_counter() - t0
    checks = {c.name: c for c in rep.checks}
    err, ratio = checks["abs_mean_error"], checks["mse_ratio_1_over_t"]
    ok = err.passed and ratio.passed and elapsed < 300
    verdict(6, ok, f"|mean Y_200 - m|={err.value:.4f} (<0.01), MSE ratio={ratio.value:.3f} (1 +/- 0.3), time={elapsed:.0f}s")


# ---- 7 ------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_7_clt(verdict):
    t0 = time.perf_counter()
    mech = cir(beta=-2.0)
    rep = run_clt(mech, _params("clt", scheme="exact_cir"), seed=1)
    var = rep.tables["clt"][-1]["var_S"]
    qv_cir = rep.tables["qv"][-1]
    # jump components need a model that has them
    jd = MODEL_ZOO["jump_diffusion"]
    batch = simulate_batch(jd, PathConfig(jd.stationary_mean(), 200.0, 0.01, seed=2), 10_000)
    qv_jd = qv_diagnostics(batch, jd)[-1]
    zs = {f"cir.{c}": qv_cir[f"{c}_z"] for c in ("diffusion", "mu", "nu")}
    zs.update({f"jd.{c}": qv_jd[f"{c}_z"] for c in ("diffusion", "mu", "nu")})
    elapsed = time.perf_counter() - t0
    ok = abs(var / 0.25 - 1) <= 0.10 and all(abs(z) <= 3 for z in zs.values()) and elapsed < 600
    zs_txt = ", ".join(f"{k}={v:+.2f}" for k, v in zs.items())
    verdict(7, ok, f"Var(S_200)={var:.4f} vs 0.25, QV z-scores: {zs_txt}, time={elapsed:.0f}s")


# ---- 8 ------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_8_ldp_tail(verdict):
    t0 = time.perf_counter()
    rep = run_ldp_tail(cir(beta=-2.0), _params("ldp-tail"), seed=1)
    slope, target = rep.summary["slope"], rep.summary["target_exponent"]
    f0 = run_ldp_tail(Mechanisms(b=0.0, beta=-1.0, sigma=math.sqrt(2.0)),
                      _params("ldp-tail", x0=1.0, times=[100.0], n_paths=20_000), seed=2)  # fmt: skip
    f0_exp, f0_target = f0.tables["ldp_tail"][-1]["exponent"], f0.summary["target_exponent"]
    elapsed = time.perf_counter() - t0
    ok = rep.passed and f0.passed and elapsed < 1200
    verdict(8, ok, f"slope={slope:.4f} vs -Lambda*(m+0.25)={target:.4f} ({abs(slope / target - 1):.1%}), "
                   f"F0 exponent={f0_exp:.4f} <= {f0_target:.4f}(1-0.2), time={elapsed:.0f}s")  # fmt: skip


# ---- 9 ------------------------------------------------------------------------------


def test_criterion_9_regimes(verdict):
    got = {eta: RateFunction.from_mechanisms(tempered_ou(eta)).regime for eta in (1.5, 2.0, 2.5)}
    ok = got == {1.5: Regime.FULL, 2.0: Regime.FULL, 2.5: Regime.BOUNDED_LOWER}
    verdict(9, ok, ", ".join(f"eta={k}: {v.value}" for k, v in got.items()))
