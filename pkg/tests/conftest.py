import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import binom

from meanfield import custom_model, sis_model, wlan_model


@pytest.fixture
def sis():
    return sis_model(2.0, 1.0)


@pytest.fixture
def wlan3():
    return wlan_model([1.0, 0.5, 0.25])


@pytest.fixture
def wlan5():
    return wlan_model([1.0 / 2**i for i in range(5)])


def rps_model(offset=0.0):
    """Cyclic imitation: R copies P, P copies S, S copies R.

    With ``offset = 0`` the product of the three fractions is conserved, so
    interior orbits are closed. A positive offset makes them spiral into the
    barycenter.
    """
    edges = [
        {"from": a, "to": b, "kind": "linear", "coef": 2.0, "of": b, "offset": offset}
        for a, b in (("R", "P"), ("P", "S"), ("S", "R"))
    ]
    return custom_model(["R", "P", "S"], edges, name="rps")


@pytest.fixture
def rps():
    return rps_model()


def sis_logistic(tau, rho, i0, t):
    """Closed-form infected fraction of the SIS mean-field ODE di/dt = tau i (1-i) - rho i."""
    t = np.asarray(t, dtype=float)
    r = tau - rho
    if r == 0:
        return i0 / (1 + tau * i0 * t)
    k = r / tau
    return k / (1 + (k / i0 - 1) * np.exp(-r * t))


def sis_pair_law_exact(tau, rho, N, i0, T):
    """Joint law at T of two tagged SIS particles, from the (untagged count, a, b) chain."""
    M = N - 2
    idx = lambda k, a, b: (k * 2 + a) * 2 + b  # noqa: E731
    size = (M + 1) * 4
    G = np.zeros((size, size))
    for k in range(M + 1):
        for a in (0, 1):
            for b in (0, 1):
                s = idx(k, a, b)
                infected = k + a + b
                if k < M:
                    G[s, idx(k + 1, a, b)] += (M - k) * tau * infected / N
                if k > 0:
                    G[s, idx(k - 1, a, b)] += k * rho
                G[s, idx(k, 1 - a, b)] += tau * infected / N if a == 0 else rho
                G[s, idx(k, a, 1 - b)] += tau * infected / N if b == 0 else rho
    G[np.diag_indices_from(G)] -= G.sum(axis=1)
    p0 = np.zeros(size)
    pk = binom.pmf(np.arange(M + 1), M, i0)
    for a in (0, 1):
        for b in (0, 1):
            pa = i0 if a else 1 - i0
            pb = i0 if b else 1 - i0
            p0[[idx(k, a, b) for k in range(M + 1)]] = pk * pa * pb
    pT = (p0 @ expm(G * T)).reshape(M + 1, 2, 2)
    return pT.sum(axis=0)
