"""McKean-Vlasov flows and the dynamic response map.

The integrator is the explicit Runge-Kutta-Fehlberg 4(5) pair. Steps are
accepted on the embedded 4th-order error estimate and the state is advanced
with the 5th-order solution (local extrapolation), so global errors sit well
below the requested tolerance.
After every accepted step the state is projected back onto the simplex;
steps that leave it by more than rounding noise are rejected and retried with
a smaller step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import HorizonError, IntegrationError, ValidationError
from .model import MeanFieldModel, build_rate_matrix, drift, simplex_point

ATOL = 1e-10
RTOL = 1e-8
NEG_TOL = 1e-12
CYCLE_REL_TOL = 1e-3  # recurrence tolerance relative to the tail diameter

# Fehlberg 4(5) tableau.
_C = np.array([0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2])
_A = [
    [],
    [1 / 4],
    [3 / 32, 9 / 32],
    [1932 / 2197, -7200 / 2197, 7296 / 2197],
    [439 / 216, -8.0, 3680 / 513, -845 / 4104],
    [-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40],
]
_A = [np.array(row) for row in _A]
# Fourth-order value at the step midpoint from the six stages and f(y_new).
_BMID = np.array([119 / 864, 0.0, 1016 / 2565, -2197 / 16416, 11 / 160, 0.0, 1 / 32])
_B4 = np.array([25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0])
_B5 = np.array([16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55])
_E = _B5 - _B4


@dataclass(frozen=True, eq=False)
class Flow:
    """A probability-vector trajectory sampled on an increasing time grid.

    Between grid points the flow is interpolated linearly, or by cubic
    Hermite polynomials when ``slopes`` (time derivatives at the grid points)
    are available. With ``midpoints`` (values at the centre of each grid
    interval) as well, the interpolant is the quartic through all five
    conditions. Flows produced by :func:`integrate` carry both.
    """

    times: np.ndarray
    points: np.ndarray
    slopes: np.ndarray | None = None
    labels: tuple[str, ...] | None = None
    info: dict = field(default_factory=dict)
    midpoints: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        points = np.asarray(self.points, dtype=float)
        if times.ndim != 1 or points.ndim != 2 or points.shape[0] != times.size:
            raise ValidationError("flow needs times (n,) and points (n, n_states)")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValidationError("flow times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "points", points)
        if self.slopes is not None:
            object.__setattr__(self, "slopes", np.asarray(self.slopes, dtype=float))
        if self.midpoints is not None:
            mid = np.asarray(self.midpoints, dtype=float)
            if self.slopes is None or mid.shape != (times.size - 1, points.shape[1]):
                raise ValidationError("midpoints need slopes and one row per grid interval")
            object.__setattr__(self, "midpoints", mid)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def final(self) -> np.ndarray:
        return self.points[-1]

    def __len__(self):
        return self.times.size

    def at(self, t) -> np.ndarray:
        """Interpolated value(s); result rows are valid probability vectors."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if np.any(t < self.times[0] - 1e-12) or np.any(t > self.times[-1] + 1e-12):
            raise HorizonError(
                f"flow defined on [{self.times[0]}, {self.times[-1]}], asked for {t.min()}..{t.max()}"
            )
        if self.times.size == 1:
            out = np.repeat(self.points[:1], t.size, axis=0)
            return out[0] if scalar else out
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2)
        t0, t1 = self.times[k], self.times[k + 1]
        h = (t1 - t0)[:, None]
        s = np.clip((t - t0) / (t1 - t0), 0.0, 1.0)[:, None]
        y0, y1 = self.points[k], self.points[k + 1]
        if self.slopes is None:
            out = (1 - s) * y0 + s * y1
        else:
            m0, m1 = self.slopes[k], self.slopes[k + 1]
            out = (
                (2 * s**3 - 3 * s**2 + 1) * y0
                + (s**3 - 2 * s**2 + s) * h * m0
                + (-2 * s**3 + 3 * s**2) * y1
                + (s**3 - s**2) * h * m1
            )
            if self.midpoints is not None:
                out += _bubble(self, k, y0, y1, h) * (s * (1 - s)) ** 2
        out = np.clip(out, 0.0, None)
        out /= out.sum(axis=1, keepdims=True)
        return out[0] if scalar else out

    def window(self, t0: float, t1: float) -> "Flow":
        """Sub-flow on ``[t0, t1]`` with times shifted to start at 0."""
        inner = (self.times > t0) & (self.times < t1)
        ts = np.concatenate([[t0], self.times[inner], [t1]])
        pts = self.at(ts)
        slopes = None
        if self.slopes is not None:
            slopes = np.vstack([_hermite_slope(self, t0), self.slopes[inner], _hermite_slope(self, t1)])
        return Flow(ts - t0, pts, slopes, self.labels)


def _bubble(flow: Flow, k, y0, y1, h) -> np.ndarray:
    """Coefficient of ``s^2 (1-s)^2`` that moves the cubic through the midpoint."""
    cubic_mid = 0.5 * (y0 + y1) + h * (flow.slopes[k] - flow.slopes[k + 1]) / 8
    return 16 * (flow.midpoints[k] - cubic_mid)


def _hermite_slope(flow: Flow, t: float) -> np.ndarray:
    k = int(np.clip(np.searchsorted(flow.times, t, side="right") - 1, 0, flow.times.size - 2))
    t0, t1 = flow.times[k], flow.times[k + 1]
    h = t1 - t0
    s = (t - t0) / h
    y0, y1, m0, m1 = flow.points[k], flow.points[k + 1], flow.slopes[k], flow.slopes[k + 1]
    out = (
        (6 * s**2 - 6 * s) / h * y0
        + (3 * s**2 - 4 * s + 1) * m0
        + (-6 * s**2 + 6 * s) / h * y1
        + (3 * s**2 - 2 * s) * m1
    )
    if flow.midpoints is not None:
        out += _bubble(flow, k, y0, y1, h) * 2 * s * (1 - s) * (1 - 2 * s) / h
    return out


def _project(y: np.ndarray) -> np.ndarray:
    y = np.where(y < 0.0, 0.0, y)
    return y / y.sum()


def _rkf_solve(
    f: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t_out: np.ndarray,
    atol: float,
    rtol: float,
    max_step: float,
    fixed_step: float | None,
    record_steps: bool,
):
    """Integrate ``y' = f(t, y)`` through every time in ``t_out``.

    Returns (times, states, slopes, midpoints, stats). With ``record_steps``
    every accepted step is recorded, together with a fourth-order value at
    its midpoint; otherwise only the ``t_out`` times, and midpoints is None.
    """
    t = float(t_out[0])
    y = y0.copy()
    k1 = f(t, y)
    times, states, slopes, mids = [t], [y.copy()], [k1.copy()], []
    stats = {"accepted": 0, "rejected": 0, "min_raw": float(y.min())}
    T = float(t_out[-1])
    if fixed_step is not None:
        h = float(fixed_step)
    else:
        # first step from the ratio of state to slope size
        scale = atol + rtol * np.abs(y)
        d0, d1 = np.max(np.abs(y) / scale), np.max(np.abs(k1) / scale)
        h = min(max_step, 0.01 * d0 / d1 if d1 > 0 else 0.1 * (T - t), T - t) or (T - t)
    k = np.empty((6, y.size))
    for target in t_out[1:]:
        target = float(target)
        while t < target:
            hmin = 1e-12 * max(1.0, abs(t))
            h = min(h, target - t, max_step)
            if target - t - h < hmin:
                h = target - t
            k[0] = k1
            for i in range(1, 6):
                k[i] = f(t + _C[i] * h, y + h * (_A[i] @ k[:i]))
            y_new = y + h * (_B5 @ k)
            if fixed_step is None:
                err_vec = h * (_E @ k)
                scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
                err = float(np.max(np.abs(err_vec) / scale))
            else:
                err = 0.0
            raw_min = float(y_new.min())
            if err > 1.0 or raw_min < -NEG_TOL:
                stats["rejected"] += 1
                if fixed_step is not None:
                    raise IntegrationError(f"fixed step left the simplex at t={t}", time=t)
                factor = 0.5 if raw_min < -NEG_TOL and err <= 1.0 else max(0.1, 0.9 * err**-0.2)
                h *= factor
                if h < hmin:
                    raise IntegrationError(f"step size underflow at t={t:.6g}", time=t)
                continue
            stats["accepted"] += 1
            stats["min_raw"] = min(stats["min_raw"], raw_min)
            y_old = y
            t = target if target - (t + h) < hmin else t + h
            y = _project(y_new)
            k1 = f(t, y)
            if record_steps:
                mids.append(y_old + h * (_BMID[:6] @ k + _BMID[6] * k1))
            if record_steps or t == target:
                times.append(t)
                states.append(y.copy())
                slopes.append(k1.copy())
            if fixed_step is None:
                h *= min(5.0, max(0.2, 0.9 * err**-0.2)) if err > 0 else 5.0
            else:
                h = float(fixed_step)
    mids = np.array(mids).reshape(-1, y0.size) if record_steps else None
    return np.array(times), np.array(states), np.array(slopes), mids, stats


def integrate(
    model: MeanFieldModel,
    nu,
    T: float,
    atol: float = ATOL,
    rtol: float = RTOL,
    max_step: float | None = None,
    fixed_step: float | None = None,
    t_eval: Sequence[float] | None = None,
) -> Flow:
    """Solve the McKean-Vlasov equation ``mu' = Lambda_mu^T mu`` from ``nu`` on ``[0, T]``.

    Parameters
    ----------
    atol, rtol : float
        Local error tolerances of the adaptive controller.
    max_step : float, optional
        Upper bound on the step size; by default only the error controller
        limits it.
    fixed_step : float, optional
        Take uniform steps of (at most) this size with no error control.
    t_eval : sequence of float, optional
        Record the flow only at these times (must start at 0 and end at T).
        By default every accepted step is recorded.
    """
    if not T > 0:
        raise ValidationError(f"horizon must be positive, got {T}")
    nu = simplex_point(nu, model.n_states)
    if t_eval is None:
        t_out = np.array([0.0, float(T)])
    else:
        t_out = np.asarray(t_eval, dtype=float)
        if t_out[0] != 0.0 or not math.isclose(t_out[-1], T) or np.any(np.diff(t_out) <= 0):
            raise ValidationError("t_eval must increase from 0 to T")
    if fixed_step is not None:
        n = max(1, math.ceil(T / fixed_step - 1e-9))
        fixed_step = T / n
    if fixed_step is not None or max_step is None:
        max_step = math.inf

    def f(_t, y):
        # Runge-Kutta stages may step a rounding error outside the simplex
        return drift(model, np.maximum(y, 0.0))

    times, states, slopes, mids, stats = _rkf_solve(
        f, nu, t_out, atol, rtol, max_step, fixed_step, record_steps=t_eval is None
    )
    return Flow(times, states, slopes, model.labels, info=stats, midpoints=mids)


def dynamic_response(model: MeanFieldModel, xi_flow: Flow, m0, T: float | None = None,
                     atol: float = ATOL, rtol: float = RTOL) -> Flow:
    """Law of a tagged particle driven by the prescribed mean-field flow ``xi_flow``.

    Integrates the linear time-inhomogeneous equation
    ``m' = Lambda_{xi(t)}^T m`` from ``m0``, one grid interval of ``xi_flow``
    at a time so that no step straddles a break in its interpolant. The
    response is reported on the grid of ``xi_flow``.
    """
    T = xi_flow.horizon if T is None else float(T)
    if T > xi_flow.horizon + 1e-12:
        raise HorizonError(f"flow ends at {xi_flow.horizon}, response requested to {T}")
    m0 = simplex_point(m0, model.n_states)
    grid = xi_flow.times[xi_flow.times < T - 1e-12]
    grid = np.append(grid, T)

    def f(t, m):
        return build_rate_matrix(model, xi_flow.at(t)).T @ m

    times, states, slopes, _, stats = _rkf_solve(
        f, m0, grid, atol, rtol, math.inf, None, record_steps=False
    )
    return Flow(times, states, slopes, model.labels, info=stats)


def residual_check(model: MeanFieldModel, flow: Flow, atol: float = ATOL, rtol: float = RTOL) -> float:
    """Worst defect of the flow against the vector field, in units of the local tolerance.

    Over every grid interval, the increment ``y1 - y0`` is compared with
    Simpson's rule applied to the drift at the endpoints and at the Hermite
    midpoint. A well-resolved flow gives values below 10.
    """
    worst = 0.0
    for k in range(len(flow) - 1):
        t0, t1 = flow.times[k], flow.times[k + 1]
        y0, y1 = flow.points[k], flow.points[k + 1]
        mid = flow.at(0.5 * (t0 + t1))
        simpson = (drift(model, y0) + 4 * drift(model, mid) + drift(model, y1)) / 6
        defect = np.max(np.abs(y1 - y0 - (t1 - t0) * simpson))
        tol = atol + rtol * max(np.max(np.abs(y0)), np.max(np.abs(y1)))
        worst = max(worst, defect / tol)
    return worst


# --- limit sets -------------------------------------------------------------


@dataclass(frozen=True)
class CycleDescriptor:
    period: float
    representative_loop: Flow
    transient_end: float


@dataclass(frozen=True)
class LimitSetResult:
    """Outcome of :func:`detect_limit_cycle`.

    ``verdict`` is ``"limit-cycle"``, ``"converged-to-point"`` or
    ``"inconclusive"``; ``point`` is set for the second, ``cycle`` for the first.
    """

    verdict: str
    point: np.ndarray | None = None
    cycle: CycleDescriptor | None = None
    tail_diameter: float = math.nan


def detect_limit_cycle(
    model: MeanFieldModel,
    nu,
    T_max: float,
    transient_fraction: float = 0.5,
    point_tol: float = 1e-7,
    cycle_tol: float = 1e-5,
    n_periods: int = 3,
    atol: float = ATOL,
    rtol: float = RTOL,
) -> LimitSetResult:
    """Classify the long-run behaviour of the flow started at ``nu``.

    The first ``transient_fraction`` of ``[0, T_max]`` is discarded. A tail of
    l-infinity diameter below ``point_tol`` means convergence to a point.
    Otherwise the tail is searched for the shortest return time to its final
    point (longer than 10 integrator steps, return distance below
    ``cycle_tol``), and the candidate period is accepted only if the tail is
    periodic with it over ``n_periods`` consecutive periods.

    Both distance tests use ``min(cycle_tol, 1e-3 * diameter)``, where
    ``diameter`` is that of the tail, so that a slowly decaying spiral of
    small amplitude is not mistaken for a cycle.
    """
    if not 0 <= transient_fraction < 1:
        raise ValidationError("transient_fraction must lie in [0, 1)")
    flow = integrate(model, nu, T_max, atol=atol, rtol=rtol)
    t_start = transient_fraction * T_max
    tail_mask = flow.times >= t_start
    tail_t = flow.times[tail_mask]
    tail = flow.points[tail_mask]
    diameter = float(np.max(tail.max(axis=0) - tail.min(axis=0)))
    if diameter < point_tol:
        return LimitSetResult("converged-to-point", point=flow.final.copy(), tail_diameter=diameter)
    # One-dimensional simplex: a non-constant scalar flow is monotone and cannot recur.
    if model.n_states == 2:
        return LimitSetResult("inconclusive", tail_diameter=diameter)

    tol = min(cycle_tol, CYCLE_REL_TOL * diameter)
    t_end = float(flow.times[-1])
    x_end = flow.final
    mean_step = float(np.mean(np.diff(tail_t))) if tail_t.size > 1 else T_max
    min_period = 10 * mean_step
    span = t_end - t_start
    n_grid = int(min(200_000, max(2_000, 40 * tail_t.size)))
    lags = np.linspace(0.0, span, n_grid)
    dist = np.max(np.abs(flow.at(t_end - lags) - x_end), axis=1)
    dlag = lags[1] - lags[0]
    # a true return can sit between grid lags; allow for the distance moved over one lag
    speed = float(np.max(np.abs(np.diff(tail, axis=0)) / np.diff(tail_t)[:, None]))
    screen = 10 * tol + speed * dlag

    def gap(lag):
        return float(np.max(np.abs(flow.at(t_end - lag) - x_end)))

    period = None
    for i in range(1, n_grid - 1):
        if lags[i] < min_period or n_periods * lags[i] > span:
            continue
        if dist[i] <= dist[i - 1] and dist[i] <= dist[i + 1] and dist[i] < screen:
            res = minimize_scalar(
                gap, bounds=(lags[i] - dlag, min(lags[i] + dlag, span)), method="bounded",
                options={"xatol": 1e-10 * max(1.0, lags[i])},
            )
            if res.fun < tol:
                period = float(res.x)
                break
    if period is None:
        return LimitSetResult("inconclusive", tail_diameter=diameter)

    s = np.linspace(0.0, period, 400)
    ref = flow.at(t_end - s)
    for j in range(1, n_periods):
        shifted = flow.at(t_end - s - j * period)
        if np.max(np.abs(shifted - ref)) >= tol:
            return LimitSetResult("inconclusive", tail_diameter=diameter)
    loop = flow.window(t_end - period, t_end)
    cycle = CycleDescriptor(period, loop, t_end - n_periods * period)
    return LimitSetResult("limit-cycle", cycle=cycle, tail_diameter=diameter)
