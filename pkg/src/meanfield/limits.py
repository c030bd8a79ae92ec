"""Monte-Carlo checks of the large-N limit theorems.

Each check samples the particle system (or a single particle driven by a
prescribed flow) over many replicas and measures total-variation distances
to the McKean-Vlasov solution. Replica ``r`` of a check keyed by ``N`` draws
from stream ``(seed, N, r)``, so results do not depend on worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import quad
from scipy.linalg import expm

from .errors import ValidationError
from .flow import Flow, integrate
from .model import MeanFieldModel, edge_rates, simplex_point
from .particles import (
    _initial_states,
    exit_rate_bounds,
    replica_stream,
    run_replicas,
    simulate,
    simulate_inhomogeneous_tagged,
    simulate_tagged,
)

GRID_POINTS = 50
N_BOOT = 500
# spawn-key prefixes keep the bootstrap streams apart from replica streams
_BOOT_KEY = 2**31 - 1
_LEVEL4_KEY = 2**31 - 2


@dataclass
class ConvergenceTable:
    """One row per ``N`` (or per grid time): ``(index, statistic, stderr)``."""

    statistic_name: str
    horizon: float
    replicas: int
    index_name: str = "N"
    rows: list[tuple[float, float, float]] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def index(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows])

    @property
    def statistic(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    @property
    def stderr(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])

    def value(self, index) -> float:
        for i, s, _ in self.rows:
            if i == index:
                return s
        raise KeyError(index)


def _bootstrap_stderr(samples: np.ndarray, stat, seed: int, key: int, n_boot: int = N_BOOT) -> float:
    rng = replica_stream(seed, (_BOOT_KEY, key))
    n = samples.shape[0]
    idx = rng.integers(0, n, size=(n_boot, n))
    return float(np.std([stat(samples[i]) for i in idx], ddof=1))


def uniform_grid(T: float, n_points: int = GRID_POINTS) -> np.ndarray:
    return np.linspace(0.0, T, n_points)


# --- law of large numbers ----------------------------------------------------


def _lln_replica(model, N, nu, T, seed, key, grid, reference):
    traj = simulate(model, N, nu, T, replica_stream(seed, key), grid=grid)
    emp = traj.grid_counts / N
    return float(np.max(0.5 * np.abs(emp - reference).sum(axis=1)))


def lln_test(
    model: MeanFieldModel,
    nu,
    T: float,
    N_list: Sequence[int],
    replicas: int,
    seed: int,
    grid_points: int = GRID_POINTS,
    workers: int = 1,
) -> ConvergenceTable:
    """Median over replicas of the sup-over-grid TV distance to the McKean-Vlasov flow."""
    if replicas < 30:
        raise ValidationError(f"lln_test needs at least 30 replicas, got {replicas}")
    N_list = [int(n) for n in N_list]
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValidationError("N_list must be strictly increasing")
    nu = simplex_point(nu, model.n_states)
    grid = uniform_grid(T, grid_points)
    reference = integrate(model, nu, T).at(grid)
    table = ConvergenceTable("median sup-grid TV(empirical, McKean-Vlasov)", T, replicas)
    for N in N_list:
        args = [(model, N, nu, T, seed, (N, r), grid, reference) for r in range(replicas)]
        dists = np.array(run_replicas(_lln_replica, args, workers))
        stderr = _bootstrap_stderr(dists, np.median, seed, N)
        table.rows.append((N, float(np.median(dists)), stderr))
    return table


# --- propagation of chaos ----------------------------------------------------


def _pair_replica(model, N, nu, T, seed, key):
    rng = replica_stream(seed, key)
    if T == 0:
        _, tag = _initial_states(model, N, nu, [0, 1], rng)
        return int(tag[0]), int(tag[1])
    _, paths = simulate_tagged(model, N, nu, T, rng, [0, 1])
    return int(paths[0].states[-1]), int(paths[1].states[-1])


def pair_samples(model, nu, T, N, replicas, seed, workers=1) -> np.ndarray:
    """Final states of tagged particles 0 and 1, one row per replica."""
    args = [(model, N, nu, T, seed, (N, r)) for r in range(replicas)]
    return np.array(run_replicas(_pair_replica, args, workers), dtype=np.int64).reshape(-1, 2)


def joint_law(pairs: np.ndarray, n_states: int) -> np.ndarray:
    flat = pairs[:, 0] * n_states + pairs[:, 1]
    return np.bincount(flat, minlength=n_states**2).reshape(n_states, n_states) / len(pairs)


def decoupling_test(
    model: MeanFieldModel,
    nu,
    T: float,
    N_list: Sequence[int],
    replicas: int,
    seed: int,
    workers: int = 1,
) -> ConvergenceTable:
    """TV distance between the joint law of two tagged particles at ``T`` and ``mu(T) x mu(T)``."""
    if replicas < 500:
        raise ValidationError(f"decoupling_test needs at least 500 replicas, got {replicas}")
    nu = simplex_point(nu, model.n_states)
    mu_T = nu if T == 0 else integrate(model, nu, T).final
    product = np.outer(mu_T, mu_T)
    n = model.n_states
    table = ConvergenceTable("TV(joint law of tagged pair, product of McKean-Vlasov marginals)", T, replicas)
    for N in [int(x) for x in N_list]:
        if N < 2:
            raise ValidationError("two tagged particles need N >= 2")
        pairs = pair_samples(model, nu, T, N, replicas, seed, workers)
        tv = 0.5 * float(np.abs(joint_law(pairs, n) - product).sum())

        def stat(sample):
            return 0.5 * float(np.abs(joint_law(sample, n) - product).sum())

        table.rows.append((N, tv, _bootstrap_stderr(pairs, stat, seed, N)))
    return table


def pair_chain_law(model: MeanFieldModel, nu, T: float) -> np.ndarray:
    """Exact joint law at ``T`` of the two particles of an ``N = 2`` system.

    Builds the generator of the pair chain on ``Z x Z`` (each particle sees
    the empirical measure of both) and applies its matrix exponential to the
    iid initial law ``nu x nu``.
    """
    nu = simplex_point(nu, model.n_states)
    n = model.n_states
    src, dst = model.edge_arrays
    G = np.zeros((n * n, n * n))
    for a in range(n):
        for b in range(n):
            mu = np.zeros(n)
            mu[a] += 0.5
            mu[b] += 0.5
            lam = edge_rates(model, mu)
            s = a * n + b
            for e in range(len(src)):
                if src[e] == a:
                    G[s, dst[e] * n + b] += lam[e]
                if src[e] == b:
                    G[s, a * n + dst[e]] += lam[e]
    G[np.diag_indices_from(G)] = -G.sum(axis=1)
    p0 = np.outer(nu, nu).reshape(-1)
    return (p0 @ expm(G * T)).reshape(n, n)


def pair_oracle_zscore(model, nu, T, replicas, seed, workers=1) -> tuple[np.ndarray, np.ndarray, float]:
    """Compare the simulated ``N = 2`` joint law with :func:`pair_chain_law`.

    Returns (empirical law, exact law, largest cellwise |difference| in
    Monte-Carlo standard errors).
    """
    exact = pair_chain_law(model, nu, T)
    emp = joint_law(pair_samples(model, nu, T, 2, replicas, seed, workers), model.n_states)
    se = np.sqrt(exact * (1 - exact) / replicas)
    diff = np.abs(emp - exact)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / se, np.where(diff > 0, np.inf, 0.0))
    return emp, exact, float(z.max())


# --- path-law marginals --------------------------------------------------------


def _level4_replica(model, flow, T, nu, seed, r, bounds, grid):
    rng = replica_stream(seed, (_LEVEL4_KEY, r))
    z0 = int(rng.choice(model.n_states, p=nu))
    path = simulate_inhomogeneous_tagged(model, flow, T, rng, z0, bounds)
    return path.state_at(grid), len(path.jump_times) - 1


def expected_jumps(model: MeanFieldModel, flow: Flow, T: float) -> float:
    """Mean number of jumps of a particle whose law follows ``flow`` on ``[0, T]``."""
    src, _ = model.edge_arrays

    def intensity(t):
        xi = flow.at(t)
        return float(np.sum(xi[src] * edge_rates(model, xi)))

    breaks = flow.times[(flow.times > 0) & (flow.times < T)]
    total = 0.0
    for a, b in zip(np.concatenate([[0.0], breaks]), np.concatenate([breaks, [T]])):
        total += quad(intensity, a, b, epsabs=1e-10)[0]
    return total


def level4_marginal_test(
    model: MeanFieldModel,
    nu,
    T: float,
    replicas: int,
    seed: int,
    flow: Flow | None = None,
    grid_points: int = GRID_POINTS,
    workers: int = 1,
) -> ConvergenceTable:
    """TV distance between time-marginals of the driven tagged particle and the flow.

    By default the driving flow is the McKean-Vlasov solution from ``nu``;
    the tagged particle starts from an independent draw of ``nu``. Rows are
    indexed by grid time. ``extras`` holds the mean jump count of the sampled
    paths next to its value under the flow.
    """
    if replicas < 500:
        raise ValidationError(f"level4_marginal_test needs at least 500 replicas, got {replicas}")
    nu = simplex_point(nu, model.n_states)
    if flow is None:
        flow = integrate(model, nu, T)
    grid = uniform_grid(T, grid_points)
    bounds = exit_rate_bounds(model, flow)
    args = [(model, flow, T, nu, seed, r, bounds, grid) for r in range(replicas)]
    results = run_replicas(_level4_replica, args, workers)
    states = np.array([s for s, _ in results])  # replicas x grid
    jumps = np.array([j for _, j in results], dtype=float)
    n = model.n_states
    target = flow.at(grid)
    table = ConvergenceTable(
        "TV(tagged-particle marginal, McKean-Vlasov flow)", T, replicas, index_name="t"
    )

    def tv_at(sample, g):
        return 0.5 * float(np.abs(np.bincount(sample, minlength=n) / sample.size - target[g]).sum())

    for g, t in enumerate(grid):
        col = states[:, g]
        se = _bootstrap_stderr(col, lambda s: tv_at(s, g), seed, g, n_boot=100)
        table.rows.append((float(t), tv_at(col, g), se))
    table.extras["mean_jumps"] = float(jumps.mean())
    table.extras["mean_jumps_stderr"] = float(jumps.std(ddof=1) / math.sqrt(replicas))
    table.extras["expected_jumps"] = expected_jumps(model, flow, T)
    return table
