import math

import pytest

from cbilab import Mechanisms, PointMass, StretchedExp, TemperedPowerLaw, Zero

SQRT2 = math.sqrt(2.0)


def cir(b=1.0, beta=-1.0, s2=2.0, nu=None):
    return Mechanisms(b=b, beta=beta, sigma=math.sqrt(s2), nu=nu or Zero())


def tempered_ou(eta, b=0.5, beta=-1.0):
    return Mechanisms(b=b, beta=beta, nu=TemperedPowerLaw(1.0, 1.0, eta, cutoff=1.0))


# a spread of shapes used by property tests and the Riccati tables
MODEL_ZOO = {
    "cir": cir(),
    "cir_steep": cir(beta=-2.0),
    "cir_stretched_nu": cir(nu=StretchedExp(1.5)),
    "cir_gamma_F_quarter": cir(nu=TemperedPowerLaw(1.0, 0.25, 1.5, cutoff=1.0)),
    "stable_mu": Mechanisms(b=1.0, beta=-1.0, mu=TemperedPowerLaw(1.0, 1.0, 2.5)),
    "atom_mu": Mechanisms(b=1.0, beta=-1.0, mu=PointMass(1.0, 1.0)),
    "jump_diffusion": Mechanisms(b=1.0, beta=-1.0, sigma=math.sqrt(0.5), nu=PointMass(1.0, 0.5), mu=PointMass(1.0, 0.5)),
    "tempered_ou": tempered_ou(2.5),
}


@pytest.fixture(params=sorted(MODEL_ZOO))
def zoo_model(request):
    return MODEL_ZOO[request.param]
