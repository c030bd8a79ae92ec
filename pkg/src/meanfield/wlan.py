"""Collision-probability fixed point of the back-off WLAN model.

``beta(gamma)`` is the system attempt rate implied by a per-attempt collision
probability ``gamma`` (renewal-reward over one back-off cycle), and
``G(gamma) = 1 - exp(-beta(gamma))`` is the collision probability that
attempt rate induces. The fixed point ``gamma* = G(gamma*)`` is compared
against the equilibrium distribution of the full state-level model.
"""

from __future__ import annotations

import math
import logging
from dataclasses import dataclass

import numpy as np

from .equilibria import find_fixed_points
from .errors import InconsistencyError, ValidationError
from .model import wlan_model

log = logging.getLogger(__name__)

BRACKET_EPS = 1e-12
MAX_BISECTIONS = 200


@dataclass(frozen=True)
class BackoffParameters:
    c: tuple[float, ...]

    def __post_init__(self):
        c = tuple(float(x) for x in np.asarray(self.c, dtype=float).reshape(-1))
        if len(c) < 2:
            raise ValidationError("need K >= 1, i.e. at least two attempt rates")
        if not all(np.isfinite(x) and x > 0 for x in c):
            raise ValidationError(f"attempt rates must be positive, got {c}")
        object.__setattr__(self, "c", c)

    @property
    def K(self) -> int:
        return len(self.c) - 1

    @property
    def strictly_decreasing(self) -> bool:
        return all(a > b for a, b in zip(self.c, self.c[1:]))

    @classmethod
    def exponential_backoff(cls, c0: float, K: int) -> "BackoffParameters":
        """Standard doubling back-off: ``c_i = c_{i-1} / 2``."""
        return cls(tuple(c0 / 2**i for i in range(K + 1)))


@dataclass(frozen=True)
class Level1Report:
    gamma_star: float
    beta_at_gamma_star: float
    iterations: int
    bracket_width_final: float
    uniqueness_guaranteed: bool = True
    extra_sign_changes: tuple[float, ...] = ()


def _params(params) -> BackoffParameters:
    return params if isinstance(params, BackoffParameters) else BackoffParameters(tuple(params))


def beta(gamma: float, params) -> float:
    """System attempt rate induced by collision probability ``gamma`` in ``[0, 1)``."""
    c = _params(params).c
    if not (0.0 <= gamma < 1.0):
        raise ValidationError(f"gamma must lie in [0, 1), got {gamma!r}")
    return _beta(float(gamma), c)


def _beta(gamma: float, c: tuple[float, ...]) -> float:
    # numerator 1 + gamma + gamma^2 + ... = 1/(1 - gamma); multiply through by (1 - gamma)
    # plain floats: K is small and this sits in the bisection loop
    total, power = 0.0, 1.0
    for ck in c:
        total += power / ck
        power *= gamma
    return 1.0 / ((1.0 - gamma) * total + power / c[-1])


def _excess_on_grid(p: BackoffParameters, grid: np.ndarray) -> np.ndarray:
    """Vectorized ``gamma - G(gamma)`` for ``gamma`` in [0, 1)."""
    c = p.c
    poly = np.full_like(grid, 1.0 / c[-1])
    for ck in reversed(c[:-1]):  # Horner for sum_k gamma^k / c_k
        poly = poly * grid + 1.0 / ck
    denom = (1.0 - grid) * poly + grid ** len(c) / c[-1]
    return grid + np.expm1(-1.0 / denom)


def collision_response(gamma: float, params) -> float:
    return float(-np.expm1(-beta(gamma, params)))


def solve_gamma_star(params, tol: float = 1e-10) -> Level1Report:
    """Bisection for the root of ``gamma - G(gamma)`` on ``[eps, 1 - eps]``.

    The bracket is structural: ``G > 0`` at the left end and ``G < 1`` at the
    right end. For attempt rates that are not strictly decreasing the root may
    not be unique; the report then lists extra sign changes found on a
    10^4-point grid.
    """
    p = _params(params)
    if not tol > 0:
        raise ValidationError("tol must be positive")

    c = p.c

    def f(g):
        return g + math.expm1(-_beta(g, c))

    lo, hi = BRACKET_EPS, 1.0 - BRACKET_EPS
    f_lo = f(lo)
    it = 0
    while hi - lo >= tol and it < MAX_BISECTIONS:
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if f_mid == 0.0:
            lo = hi = mid
            break
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
        it += 1
    g_star = 0.5 * (lo + hi)

    extra: tuple[float, ...] = ()
    if not p.strictly_decreasing:
        grid = np.linspace(BRACKET_EPS, 1 - BRACKET_EPS, 10_000)
        vals = _excess_on_grid(p, grid)
        idx = np.flatnonzero(np.signbit(vals[:-1]) != np.signbit(vals[1:]))
        crossings = [float(0.5 * (grid[i] + grid[i + 1])) for i in idx]
        extra = tuple(g for g in crossings if abs(g - g_star) > 2 * (grid[1] - grid[0]))
        log.info("attempt rates not strictly decreasing; uniqueness not guaranteed")
    return Level1Report(
        gamma_star=g_star,
        beta_at_gamma_star=beta(g_star, p),
        iterations=it,
        bracket_width_final=hi - lo,
        uniqueness_guaranteed=p.strictly_decreasing,
        extra_sign_changes=extra,
    )


def sign_changes(params, n_grid: int = 10_000) -> int:
    """Number of sign changes of ``gamma - G(gamma)`` on a uniform grid of (0, 1)."""
    p = _params(params)
    grid = np.linspace(0.0, 1.0, n_grid + 2)[1:-1]
    vals = _excess_on_grid(p, grid)
    return int(np.count_nonzero(np.signbit(vals[:-1]) != np.signbit(vals[1:])))


@dataclass(frozen=True)
class CrossLevelReport:
    gamma_star: float
    beta_at_gamma_star: float
    xi_star: np.ndarray
    attempt_rate: float
    attempt_residual: float
    collision_residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.attempt_residual < self.tol and self.collision_residual < self.tol


def cross_level_check(params, tol: float = 1e-6, n_starts: int = 8, seed: int = 0) -> CrossLevelReport:
    """Compare the scalar fixed point with the state-distribution fixed point.

    The system attempt rate ``<c, xi*>`` of the equilibrium distribution must
    equal ``beta(gamma*)``, and ``gamma*`` must equal ``1 - exp(-<c, xi*>)``.
    The equilibrium search uses ``n_starts`` interior starts only: every
    attempt rate is positive, so boundary points are never fixed points.
    """
    p = _params(params)
    model = wlan_model(p.c)
    reports = find_fixed_points(model, n_starts=n_starts, seed=seed, face_starts=False)
    interior = [r for r in reports if np.all(r.point > 0)]
    if len(interior) != 1:
        if p.strictly_decreasing:
            raise InconsistencyError(
                f"expected one interior equilibrium for decreasing attempt rates, found {len(interior)}"
            )
        if not interior:
            raise InconsistencyError("no interior equilibrium found")
        log.warning("%d interior equilibria; using the first", len(interior))
    xi_star = interior[0].point
    lvl1 = solve_gamma_star(p, tol=min(1e-12, tol))
    attempt = float(np.dot(p.c, xi_star))
    return CrossLevelReport(
        gamma_star=lvl1.gamma_star,
        beta_at_gamma_star=lvl1.beta_at_gamma_star,
        xi_star=xi_star,
        attempt_rate=attempt,
        attempt_residual=abs(attempt - lvl1.beta_at_gamma_star),
        collision_residual=abs(lvl1.gamma_star + np.expm1(-attempt)),
        tol=tol,
    )
