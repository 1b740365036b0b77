import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbilab import Mechanisms, PointMass, TemperedPowerLaw
from cbilab.errors import DegenerateR, OutOfDomain
from cbilab.riccati import (
    explosion_time,
    find_u_c,
    integrated_log_mgf,
    limit_mgf,
    make_profile,
    relaxation_time,
    resolvent_root,
    resolvent_slope,
    sign_table_violations,
    solve_A,
    transition_log_laplace,
)
from tests.conftest import MODEL_ZOO, cir
from tests.oracles import FROZEN

CIR = make_profile(cir())
STABLE = make_profile(MODEL_ZOO["stable_mu"])


def test_cir_constants():
    assert CIR.u_c == pytest.approx(0.5, abs=1e-12)
    assert CIR.lambda_R == pytest.approx(0.25, abs=1e-12)
    p = make_profile(cir(beta=-2.0))
    assert (p.u_c, p.lambda_R) == pytest.approx((1.0, 1.0), abs=1e-12)


def test_stable_mu_constants_against_scan_oracle():
    assert STABLE.u_c == pytest.approx(FROZEN["ts_u_c"], abs=1e-8)
    assert STABLE.lambda_R == pytest.approx(FROZEN["ts_lambda_R"], abs=1e-8)
    assert STABLE.case == "interior"


def test_boundary_case_atom_free():
    # R'(1) = beta + 2 sqrt(pi) < 0: the minimum sits at the threshold
    mech = Mechanisms(b=1.0, beta=-4.0, mu=TemperedPowerLaw(1.0, 1.0, 2.5))
    u_c, lam_R, case = find_u_c(mech)
    assert case == "boundary" and u_c == 1.0
    assert lam_R == pytest.approx(-mech.R(1.0))


def test_degenerate_R():
    with pytest.raises(DegenerateR):
        find_u_c(Mechanisms(b=1.0, beta=-1.0))


def test_resolvent_values():
    assert resolvent_root(CIR, 0.0) == 0.0
    assert resolvent_root(CIR, 0.25) == pytest.approx(0.5, abs=1e-8)
    assert resolvent_root(CIR, -4.0) == pytest.approx(FROZEN["cir_y_-4"], abs=1e-12)
    with pytest.raises(OutOfDomain):
        resolvent_root(CIR, 0.3)


def test_critical_lambda_examples():
    assert CIR.lambda_F == math.inf and CIR.lambda_c == pytest.approx(0.25, abs=1e-12)
    quarter = make_profile(MODEL_ZOO["cir_gamma_F_quarter"])
    assert quarter.lambda_c == pytest.approx(0.1875, abs=1e-10)
    assert quarter.y_c == 0.25
    ou = make_profile(Mechanisms(b=1.0, beta=-2.0, nu=TemperedPowerLaw(1.0, 1.0, 1.5, cutoff=1.0)))
    assert ou.lambda_c == pytest.approx(2.0, abs=1e-14)


def test_solve_A_zero_lambda():
    sol = solve_A(CIR, 0.0, 10.0)
    assert np.all(sol.A == 0) and sol.status == "global"


def test_solve_A_converges():
    sol = solve_A(CIR, 0.2, 50.0)
    assert abs(sol.A[-1] - FROZEN["cir_y_0.2"]) < 1e-6
    assert sign_table_violations(CIR, sol) == []


def test_solve_A_explodes_at_T():
    sol = solve_A(CIR, 0.5, 100.0)
    assert sol.status == "exploding"
    assert sol.T == pytest.approx(explosion_time(CIR, 0.5), rel=1e-4)
    assert sign_table_violations(CIR, sol) == []


def test_explosion_time_oracles():
    assert explosion_time(CIR, 0.5) == pytest.approx(FROZEN["cir_T_0.5"], rel=1e-8)
    assert explosion_time(CIR, 1.0) == pytest.approx(FROZEN["cir_T_1"], rel=1e-8)
    assert explosion_time(STABLE, 0.5) == pytest.approx(FROZEN["ts_T_0.5"], rel=1e-8)
    assert explosion_time(STABLE, 2.0) == pytest.approx(FROZEN["ts_T_2"], rel=1e-8)
    with pytest.raises(OutOfDomain):
        explosion_time(CIR, 0.25)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.2501, 5.0), b=st.floats(0.2501, 5.0))
def test_explosion_time_monotone(a, b):
    lo, hi = sorted((a, b))
    t_lo, t_hi = explosion_time(CIR, lo), explosion_time(CIR, hi)
    assert t_lo >= t_hi * (1 - 1e-12)
    assert t_lo <= 0.0 + math.inf and t_lo <= CIR.mech.gamma_R


def test_integrated_log_mgf_basic():
    assert integrated_log_mgf(CIR, 1.0, 2.0, 0.0) == 0.0
    for lam in (-3.0, -0.5):
        v = integrated_log_mgf(CIR, 1.0, 2.0, lam)
        assert math.isfinite(v) and v <= 0.0
    T = explosion_time(CIR, 0.5)
    assert integrated_log_mgf(CIR, 1.0, T + 0.1, 0.5) == math.inf
    assert math.isfinite(integrated_log_mgf(CIR, 1.0, 0.5 * T, 0.5))


def test_integrated_log_mgf_beyond_gamma_F():
    p = make_profile(MODEL_ZOO["tempered_ou"])
    # A crosses gamma_F = 1 in finite time for lambda > lambda_c = 1
    assert integrated_log_mgf(p, 1.0, 20.0, 1.1) == math.inf
    assert math.isfinite(integrated_log_mgf(p, 1.0, 20.0, 0.9))


def test_limit_mgf():
    assert limit_mgf(CIR, 0.0) == 0.0
    ou = make_profile(Mechanisms(b=0.3, beta=-2.0, nu=PointMass(1.0, 0.5)))
    for lam in (-2.0, 0.5, 3.0):
        assert limit_mgf(ou, lam) == pytest.approx(ou.mech.F(lam / 2.0), rel=1e-14)
    assert limit_mgf(CIR, 0.3) == math.inf


@pytest.mark.parametrize("eta,finite", [(1.5, True), (1.0, False)])
def test_limit_mgf_at_lambda_c(eta, finite):
    mech = Mechanisms(b=0.5, beta=-1.0, sigma=math.sqrt(2), nu=TemperedPowerLaw(1.0, 0.25, eta, cutoff=1.0))
    p = make_profile(mech)
    assert math.isfinite(limit_mgf(p, p.lambda_c)) == finite


def _cir_laplace_oracle(x0, t, lam, b=1.0):
    # v' = v^2 - v, v(0) = lam; logistic closed form
    lam = mp.mpf(lam)
    v = lambda s: 1 / (1 - (lam - 1) / lam * mp.e**s)
    return float(x0 * v(t) + b * mp.quad(v, [0, t]))


@pytest.mark.parametrize("lam,t", [(-1.0, 1.0), (-0.3, 4.0), (-5.0, 0.5)])
def test_transition_laplace_closed_form(lam, t):
    assert transition_log_laplace(CIR, 1.0, t, lam) == pytest.approx(_cir_laplace_oracle(1.0, t, lam), rel=1e-8)


def test_transition_laplace_limits():
    assert transition_log_laplace(CIR, 2.0, 1.0, 0.0) == 0.0
    assert transition_log_laplace(CIR, 2.0, 1e-9, -0.7) == pytest.approx(2.0 * -0.7, rel=1e-6)
    with pytest.raises(OutOfDomain):
        transition_log_laplace(CIR, 1.0, 1.0, 0.1)


NONDEGENERATE = [k for k, m in MODEL_ZOO.items() if m.nondegenerate]


@pytest.mark.parametrize("name", NONDEGENERATE)
@settings(max_examples=10, deadline=None)
@given(frac=st.floats(-4.0, 0.97))
def test_resolvent_slope_identity(name, frac):
    p = make_profile(MODEL_ZOO[name])
    lam = frac * p.lambda_R
    h = 1e-6 * max(1.0, abs(lam))
    fd = (resolvent_root(p, lam + h) - resolvent_root(p, lam - h)) / (2 * h)
    assert fd == pytest.approx(resolvent_slope(p, lam), rel=1e-5)
    assert p.mech.R(resolvent_root(p, lam)) + lam == pytest.approx(0.0, abs=1e-12 * (1 + abs(lam)))


@pytest.mark.parametrize("name", ["cir", "stable_mu", "atom_mu"])
@settings(max_examples=8, deadline=None)
@given(frac=st.floats(-2.0, 0.9).filter(lambda f: abs(f) > 1e-3), t=st.floats(0.05, 3.0))
def test_separation_of_variables(name, frac, t):
    # t = int_0^{A(t)} du / (R(u) + lambda)
    p = make_profile(MODEL_ZOO[name])
    lam = frac * p.lambda_R
    mech = p.mech
    a = float(solve_A(p, lam, t).A[-1])
    back = float(mp.quad(lambda u: 1 / (mech.R(float(u)) + lam), [0, a]))
    assert back == pytest.approx(t, rel=1e-6)


def test_relaxation_time_is_enough():
    for lam in (-3.0, 0.1, 0.2):
        t_end = relaxation_time(CIR, lam)
        sol = solve_A(CIR, lam, t_end)
        assert abs(sol.A[-1] - sol.limit) < 1e-6


def test_csv_export(tmp_path):
    sol = solve_A(CIR, 0.1, 5.0)
    path = tmp_path / "a.csv"
    sol.to_csv(path)
    assert path.read_text().splitlines()[0] == "t,A,int_F_A"
    assert float(sol.at(5.0)) == pytest.approx(sol.A[-1], rel=1e-9)
