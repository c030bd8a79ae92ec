"""Equilibrium response map, self-consistent fixed points and their stability."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .errors import NumericalError, ReducibilityError
from .model import MeanFieldModel, build_rate_matrix, drift, simplex_point

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
DEDUP_TOL = 1e-6
INNER_TOL = 1e-7  # damped-iteration stopping residual before the Newton polish
SPECTRAL_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class FixedPointReport:
    point: np.ndarray
    residual: float
    stability: str
    spectrum: np.ndarray
    starts_converged: int

    @property
    def max_real_eigenvalue(self) -> float:
        return float(np.max(self.spectrum.real)) if self.spectrum.size else float("nan")


def fixed_point_residual(model: MeanFieldModel, xi) -> float:
    """l-infinity norm of ``Lambda_xi^T xi``, zero exactly at fixed points."""
    return float(np.max(np.abs(drift(model, xi))))


def _closed_classes(Q: np.ndarray) -> list[np.ndarray]:
    """Closed communicating classes of the chain with generator ``Q``."""
    n = Q.shape[0]
    reach = (Q > 0) | np.eye(n, dtype=bool)
    for _ in range(max(1, int(np.ceil(np.log2(n))))):
        reach = (reach.astype(np.int64) @ reach.astype(np.int64)) > 0
    # i is in a closed class iff everything reachable from i reaches back
    closed = np.all(~reach | reach.T, axis=1)
    classes = {}
    for i in np.flatnonzero(closed):
        classes.setdefault(reach[i].tobytes(), np.flatnonzero(reach[i]))
    return list(classes.values())


def equilibrium_response(model: MeanFieldModel, xi) -> np.ndarray:
    """Stationary law of one particle when the mean field is frozen at ``xi``.

    Solves the balance equations with one of them replaced by the
    normalization. Raises :class:`ReducibilityError` unless the frozen chain
    is irreducible on the positive-rate edges at ``xi``; an absorbing or
    transient part means the response is not the interior balance the
    self-consistency iteration relies on.
    """
    xi = simplex_point(xi, model.n_states)
    return _stationary_law(model, build_rate_matrix(model, xi), xi)


def _stationary_law(model: MeanFieldModel, Q: np.ndarray, xi: np.ndarray) -> np.ndarray:
    src, dst = model.edge_arrays
    # the edge graph is strongly connected, so positive rates on every edge mean irreducible
    if not np.all(Q[src, dst] > 0):
        closed = _closed_classes(Q)
        if len(closed) != 1 or closed[0].size != model.n_states:
            names = [[model.labels[i] for i in c] for c in closed]
            raise ReducibilityError(
                f"frozen chain at xi={xi.tolist()} is reducible; closed classes {names}"
            )
    n = model.n_states
    A = Q.T.copy()
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        m = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular balance system at xi={xi.tolist()}") from exc
    m = np.clip(m, 0.0, None)
    m /= m.sum()
    resid = np.max(np.abs(Q.T @ m))
    scale = max(1.0, np.max(np.abs(Q)))
    if resid > 1e-12 * scale:
        raise NumericalError(f"balance residual {resid:.3g} too large at xi={xi.tolist()}")
    return m


# --- stability --------------------------------------------------------------


def tangent_jacobian(model: MeanFieldModel, xi, h: float | None = None) -> np.ndarray:
    """Jacobian of the drift restricted to the tangent space of the simplex.

    Basis directions are ``e_i - e_r`` for ``i != r``, where ``r`` is the
    state of largest mass, so a forward displacement is always feasible.
    Central differences are used where both displacements stay on the
    simplex, otherwise a second-order one-sided formula.
    """
    xi = np.asarray(xi, dtype=float)
    n = xi.size
    if h is None:
        h = 1e-6 * max(1.0, float(np.max(np.abs(xi))))
    ref = int(np.argmax(xi))
    others = [i for i in range(n) if i != ref]
    J = np.empty((n - 1, n - 1))
    for col, i in enumerate(others):
        v = np.zeros(n)
        v[i], v[ref] = 1.0, -1.0
        if xi[i] >= h:
            d = (drift(model, xi + h * v) - drift(model, xi - h * v)) / (2 * h)
        else:
            log.debug("one-sided difference along state %s at boundary point %s", i, xi)
            d = (-3 * drift(model, xi) + 4 * drift(model, xi + h * v) - drift(model, xi + 2 * h * v)) / (2 * h)
        J[:, col] = d[others]
    return J


def classify_stability(model: MeanFieldModel, xi, h: float | None = None,
                       spectral_tol: float = SPECTRAL_TOL) -> tuple[str, np.ndarray]:
    """Return ``(stability, spectrum)`` of the linearized McKean-Vlasov flow at ``xi``."""
    spectrum = np.linalg.eigvals(tangent_jacobian(model, xi, h))
    top = float(np.max(spectrum.real))
    if top < -spectral_tol:
        kind = "stable"
    elif top > spectral_tol:
        kind = "unstable"
    else:
        kind = "marginal"
    return kind, spectrum


# --- fixed-point search -----------------------------------------------------


def simplex_starts(n_states: int, n_starts: int, seed: int, faces: bool = True) -> list[np.ndarray]:
    """Quasi-uniform interior points, plus vertices and face barycenters if ``faces``."""
    sobol = qmc.Sobol(d=n_states, scramble=True, seed=seed)
    u = sobol.random(n_starts)
    e = -np.log1p(-np.clip(u, 0.0, 1 - 1e-16))
    starts = list(e / e.sum(axis=1, keepdims=True))
    if not faces:
        return starts
    if n_states <= 8:
        dims = range(1, n_states + 1)
    else:
        dims = (1, 2, n_states - 1)
    for k in dims:
        for face in itertools.combinations(range(n_states), k):
            p = np.zeros(n_states)
            p[list(face)] = 1.0 / k
            starts.append(p)
    return starts


def _damped_iteration(model, xi, alpha0, tol, max_iter):
    alpha = alpha0
    increases = 0
    prev_r, prev_step = np.inf, None
    for _ in range(max_iter):
        # one generator per sweep serves both the residual and the response
        Q = build_rate_matrix(model, xi)
        r = float(np.max(np.abs(Q.T @ xi)))
        if r < tol:
            return xi
        step = _stationary_law(model, Q, xi) - xi
        # oscillation: residual grew twice running while the update keeps reversing
        reversing = prev_step is not None and float(step @ prev_step) < 0
        increases = increases + 1 if (r > prev_r and reversing) else 0
        if increases >= 2:
            alpha = max(alpha / 2, 1 / 64)
            increases = 0
        prev_r, prev_step = r, step
        xi = xi + alpha * step
    return None


def _minimize_residual(model, xi0, tol):
    n = model.n_states

    def obj(x):
        x = np.clip(x, 0.0, None)
        return float(np.sum(drift(model, x) ** 2))

    res = minimize(
        obj, xi0, method="SLSQP", bounds=[(0.0, 1.0)] * n,
        constraints=[{"type": "eq", "fun": lambda x: np.sum(x) - 1.0}],
        options={"ftol": 1e-30, "maxiter": 500},
    )
    x = np.clip(res.x, 0.0, None)
    x /= x.sum()
    return x if fixed_point_residual(model, x) < np.sqrt(tol) else None


def polish(model: MeanFieldModel, xi, max_iter: int = 20) -> np.ndarray:
    """Newton iterations on ``Lambda_xi^T xi = 0`` within the simplex tangent space."""
    xi = np.asarray(xi, dtype=float).copy()
    r = fixed_point_residual(model, xi)
    for _ in range(max_iter):
        if r < 1e-15:
            break
        ref = int(np.argmax(xi))
        others = [i for i in range(xi.size) if i != ref]
        J = tangent_jacobian(model, xi)
        a = np.linalg.lstsq(J, -drift(model, xi)[others], rcond=None)[0]
        step = np.zeros_like(xi)
        step[others] = a
        step[ref] = -a.sum()
        cand = xi + step
        if np.any(cand < -1e-14):
            break
        cand = np.clip(cand, 0.0, None)
        cand /= cand.sum()
        r_new = fixed_point_residual(model, cand)
        if not r_new < r:
            break
        xi, r = cand, r_new
    return xi


def find_fixed_points(
    model: MeanFieldModel,
    n_starts: int = 64,
    seed: int = 0,
    tol: float = RESIDUAL_TOL,
    alpha: float = 0.5,
    max_iter: int = 5000,
    dedup_tol: float = DEDUP_TOL,
    spectral_tol: float = SPECTRAL_TOL,
    face_starts: bool = True,
) -> list[FixedPointReport]:
    """Solve ``m(xi) = xi`` from many starting points.

    Each start runs the damped iteration ``xi <- (1 - a) xi + a m(xi)``. When
    ``m`` is undefined along the way (reducible frozen chain) or the
    iteration stalls, the residual ``|Lambda_xi^T xi|^2`` is minimized over
    the simplex from the same start instead. Converged points are merged at
    l-infinity distance ``dedup_tol``, polished by Newton's method and
    classified. Reports are sorted lexicographically by point.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    inner_tol = min(INNER_TOL, tol)  # Newton polish takes it the rest of the way
    found: list[list] = []
    for start in simplex_starts(model.n_states, n_starts, seed, face_starts):
        xi = None
        try:
            xi = _damped_iteration(model, start, alpha, inner_tol, max_iter)
        except (ReducibilityError, NumericalError):
            pass
        if xi is None:
            xi = _minimize_residual(model, start, inner_tol)
        if xi is None:
            continue
        xi = polish(model, xi)
        for entry in found:
            if np.max(np.abs(entry[0] - xi)) < dedup_tol:
                entry[1] += 1
                break
        else:
            found.append([xi, 1])

    reports = []
    for xi, count in found:
        resid = fixed_point_residual(model, xi)
        if resid >= tol:
            log.info("dropping candidate %s with residual %.3g", xi, resid)
            continue
        if any(np.max(np.abs(r.point - xi)) < dedup_tol for r in reports):
            continue
        kind, spectrum = classify_stability(model, xi, spectral_tol=spectral_tol)
        reports.append(FixedPointReport(xi, resid, kind, spectrum, count))
    if not reports:
        log.warning("no start converged to a fixed point of %s", model.name)
    reports.sort(key=lambda r: tuple(r.point))
    return reports
