"""Exact simulation of the N-particle system.

Because rates depend on the configuration only through the empirical
measure, the jump chain is simulated over transition classes: class
``(z, z')`` fires at aggregate rate ``N mu(z) lambda_{z,z'}(mu)``. Tagged
particles are followed by deciding, whenever a class fires from a state they
occupy, which of the occupants moved.

Randomness: every run owns one ``numpy`` generator. It first draws the
initial states (tagged particles, then a multinomial for the rest), then
fills fixed-size blocks of uniforms consumed per jump in the order holding
time, class, mover (the last only when a tagged particle is in the source
state). Replica ``r`` of master seed ``s`` uses ``SeedSequence(s, spawn_key=(r,))``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernel
from .errors import HorizonError, ModelEvaluationError, ThinningBoundError, ValidationError
from .flow import Flow
from .model import AffineExpRates, MeanFieldModel, edge_rates, simplex_point

UNIFORM_BLOCK = 1 << 16
MAX_JUMPS = 10**7
DEFAULT_GRID_POINTS = 1001
THINNING_SAFETY = 1.1


@dataclass(frozen=True, eq=False)
class ParticleConfiguration:
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1 or c.size < 2 or not np.issubdtype(c.dtype, np.integer) and not np.all(c == np.round(c)):
            raise ValidationError(f"counts must be a vector of integers, got {self.counts!r}")
        c = c.astype(np.int64)
        if np.any(c < 0) or c.sum() < 1:
            raise ValidationError(f"counts must be nonnegative with a positive total, got {c.tolist()}")
        object.__setattr__(self, "counts", c)

    @property
    def N(self) -> int:
        return int(self.counts.sum())

    @property
    def measure(self) -> np.ndarray:
        return self.counts / self.N


@dataclass(frozen=True, eq=False)
class TaggedPath:
    """Piecewise-constant path of one particle; ``jump_times[0]`` is 0."""

    particle_index: int
    jump_times: np.ndarray
    states: np.ndarray

    def state_at(self, t):
        k = np.searchsorted(self.jump_times, t, side="right") - 1
        return self.states[k]


@dataclass(frozen=True, eq=False)
class EmpiricalTrajectory:
    """Particle counts after every jump (or on a time grid, see ``complete``).

    ``times[0]`` is 0 and row ``k`` of ``counts`` holds the configuration on
    ``[times[k], times[k+1])``. When the jump cap was exceeded the jump record
    is replaced by samples on the uniform grid and ``complete`` is False.
    """

    times: np.ndarray
    counts: np.ndarray
    final_time: float
    N: int
    labels: tuple[str, ...]
    complete: bool = True
    n_jumps: int = 0
    grid_times: np.ndarray = field(default=None)
    grid_counts: np.ndarray = field(default=None)

    @property
    def jump_times(self) -> np.ndarray:
        return self.times

    @property
    def measures(self) -> np.ndarray:
        return self.counts / self.N

    def at(self, t) -> np.ndarray:
        """Empirical measure(s) at time(s) ``t`` (right-continuous)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.final_time + 1e-12):
            raise HorizonError(f"trajectory defined on [0, {self.final_time}]")
        k = np.searchsorted(self.times, t, side="right") - 1
        return self.counts[k] / self.N

    @property
    def final(self) -> np.ndarray:
        return self.counts[-1] / self.N


def _stream(seed, key=None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if key is None:
        return np.random.default_rng(np.random.SeedSequence(int(seed)))
    key = (key,) if np.isscalar(key) else tuple(key)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def _initial_states(model, N, init, tagged, rng):
    """Return (counts, tagged_states)."""
    n = model.n_states
    k = len(tagged)
    if isinstance(init, ParticleConfiguration) or (
        isinstance(init, np.ndarray) and np.issubdtype(init.dtype, np.integer)
    ):
        cfg = init if isinstance(init, ParticleConfiguration) else ParticleConfiguration(init)
        if cfg.counts.size != n or cfg.N != N:
            raise ValidationError(f"initial counts {cfg.counts.tolist()} do not match N={N}, |Z|={n}")
        # particle i sits in the state whose cumulative count range contains i
        tag_states = np.searchsorted(np.cumsum(cfg.counts), np.asarray(tagged, dtype=np.int64), side="right")
        return cfg.counts.copy(), tag_states.astype(np.int64)
    nu = simplex_point(init, n)
    tag_states = rng.choice(n, size=k, p=nu).astype(np.int64) if k else np.zeros(0, np.int64)
    counts = rng.multinomial(N - k, nu).astype(np.int64)
    np.add.at(counts, tag_states, 1)
    return counts, tag_states


def _validate_tagged(tagged, N):
    tagged = sorted(set(int(i) for i in tagged))
    if any(i < 0 or i >= N for i in tagged):
        raise ValidationError(f"tagged indices must lie in [0, {N})")
    return tagged


def _python_chunk(model, counts, t, T, N, src, dst, tag_state, uniforms, upos,
                  grid, gpos, grid_counts, record, out_times, out_edges, njumps,
                  tag_times, tag_who, tag_to, ntag):
    """Pure-Python twin of :func:`_kernel.run_chunk` for arbitrary rate callables."""
    n_tag = tag_state.size
    while True:
        mu = counts / N
        lam = np.asarray(model.rates(mu), dtype=float)
        bad = ~np.isfinite(lam) | (lam < 0)
        if bad.any():
            return t, upos, gpos, njumps, ntag, _kernel.BAD_RATE, int(np.flatnonzero(bad)[0])
        agg = counts[src] * lam
        total = float(agg.sum())
        if total <= 0.0:
            t_next = math.inf
        else:
            if upos + 3 > uniforms.size:
                return t, upos, gpos, njumps, ntag, _kernel.NEED_UNIFORMS, -1
            t_next = t - math.log1p(-uniforms[upos]) / total
        while gpos < grid.size and grid[gpos] < t_next and grid[gpos] <= T:
            grid_counts[gpos] = counts
            gpos += 1
        if t_next > T:
            return T, upos, gpos, njumps, ntag, _kernel.DONE, -1
        if (record and njumps >= out_times.size) or ntag >= tag_times.size:
            return t, upos, gpos, njumps, ntag, _kernel.BUFFER_FULL, -1
        target = uniforms[upos + 1] * total
        upos += 2
        cum = np.cumsum(agg)
        e = min(int(np.searchsorted(cum, target, side="right")), len(agg) - 1)
        while agg[e] == 0.0:
            e -= 1
        z0 = src[e]
        here = [i for i in range(n_tag) if tag_state[i] == z0]
        if here:
            j = int(uniforms[upos] * counts[z0])
            upos += 1
            if j < len(here):
                mover = here[j]
                tag_state[mover] = dst[e]
                tag_times[ntag] = t_next
                tag_who[ntag] = mover
                tag_to[ntag] = dst[e]
                ntag += 1
        counts[z0] -= 1
        counts[dst[e]] += 1
        t = t_next
        if record:
            out_times[njumps] = t
            out_edges[njumps] = e
        njumps += 1


def simulate_tagged(
    model: MeanFieldModel,
    N: int,
    init,
    T: float,
    seed,
    tagged_indices: Sequence[int] = (),
    max_jumps: int = MAX_JUMPS,
    grid: Sequence[float] | None = None,
    compiled: bool | None = None,
) -> tuple[EmpiricalTrajectory, list[TaggedPath]]:
    """Simulate ``N`` particles on ``[0, T]`` and follow the ``tagged_indices``.

    ``init`` is either a :class:`ParticleConfiguration` (or integer count
    vector) or a probability vector from which the particles are drawn iid.
    Tagging is purely observational: with no tagged particles the random
    stream is consumed exactly as by :func:`simulate`.

    The measures are also sampled on ``grid`` (default: 1001 uniform points);
    those samples replace the jump record when more than ``max_jumps`` jumps
    occur.
    """
    N = int(N)
    if N < 1:
        raise ValidationError("N must be >= 1")
    if not T > 0:
        raise ValidationError(f"horizon must be positive, got {T}")
    tagged = _validate_tagged(tagged_indices, N)
    rng = _stream(seed)
    counts, tag_state = _initial_states(model, N, init, tagged, rng)
    tag_init = tag_state.copy()
    src, dst = model.edge_arrays
    grid = np.linspace(0.0, T, DEFAULT_GRID_POINTS) if grid is None else np.asarray(grid, float)
    grid_counts = np.zeros((grid.size, model.n_states), dtype=np.int64)
    if compiled is None:
        compiled = isinstance(model.rates, AffineExpRates)
    if compiled and not isinstance(model.rates, AffineExpRates):
        raise ValidationError("the compiled simulator needs AffineExpRates")

    counts0 = counts.copy()
    buf = min(max_jumps, 1 << 16)
    out_times = np.empty(buf)
    out_edges = np.empty(buf, dtype=np.int64)
    tag_times = np.empty(max(16, 4 * len(tagged)))
    tag_who = np.empty(tag_times.size, dtype=np.int64)
    tag_to = np.empty(tag_times.size, dtype=np.int64)
    record = True
    t, upos, gpos, njumps, ntag = 0.0, UNIFORM_BLOCK, 0, 0, 0
    uniforms = np.empty(0)
    while True:
        if compiled:
            r = model.rates
            res = _kernel.run_chunk(
                counts, t, float(T), N, src, dst, r.const, r.lin, r.amp, r.expw,
                tag_state, uniforms, upos, grid, gpos, grid_counts,
                record, out_times, out_edges, njumps, tag_times, tag_who, tag_to, ntag,
            )
        else:
            res = _python_chunk(
                model, counts, t, float(T), N, src, dst, tag_state, uniforms, upos,
                grid, gpos, grid_counts, record, out_times, out_edges, njumps,
                tag_times, tag_who, tag_to, ntag,
            )
        t, upos, gpos, njumps, ntag, status, bad_edge = res
        if status == _kernel.DONE:
            break
        if status == _kernel.NEED_UNIFORMS:
            uniforms = rng.random(UNIFORM_BLOCK)
            upos = 0
        elif status == _kernel.BAD_RATE:
            edge_rates(model, counts / N)  # raises with the offending edge
            raise ModelEvaluationError(f"bad rate on edge {model.edges[bad_edge]}")
        elif status == _kernel.BUFFER_FULL:
            if ntag >= tag_times.size:
                tag_times = np.resize(tag_times, 2 * tag_times.size)
                tag_who = np.resize(tag_who, 2 * tag_who.size)
                tag_to = np.resize(tag_to, 2 * tag_to.size)
            if record and njumps >= out_times.size:
                if out_times.size >= max_jumps:
                    record = False
                else:
                    size = min(max_jumps, 2 * out_times.size)
                    out_times = np.resize(out_times, size)
                    out_edges = np.resize(out_edges, size)

    labels = model.labels
    if record:
        delta = np.zeros((len(model.edges), model.n_states), dtype=np.int64)
        delta[np.arange(len(src)), src] -= 1
        delta[np.arange(len(src)), dst] += 1
        steps = delta[out_edges[:njumps]]
        traj_counts = np.vstack([counts0, counts0 + np.cumsum(steps, axis=0)])
        traj = EmpiricalTrajectory(
            np.concatenate([[0.0], out_times[:njumps]]), traj_counts, float(T), N, labels,
            True, njumps, grid, grid_counts,
        )
    else:
        traj = EmpiricalTrajectory(grid, grid_counts, float(T), N, labels, False, njumps, grid, grid_counts)

    paths = []
    for i, idx in enumerate(tagged):
        sel = np.flatnonzero(tag_who[:ntag] == i)
        times = np.concatenate([[0.0], tag_times[sel]])
        states = np.concatenate([[tag_init[i]], tag_to[sel]]).astype(np.int64)
        paths.append(TaggedPath(idx, times, states))
    return traj, paths


def simulate(model: MeanFieldModel, N: int, init, T: float, seed, **kwargs) -> EmpiricalTrajectory:
    """Empirical-measure process of ``N`` particles on ``[0, T]``; see :func:`simulate_tagged`."""
    return simulate_tagged(model, N, init, T, seed, (), **kwargs)[0]


def exit_rate_bounds(model: MeanFieldModel, flow: Flow, safety: float = THINNING_SAFETY) -> np.ndarray:
    """Per-state upper bound on the total exit rate along ``flow``.

    The maximum over the flow's grid points, inflated by ``safety``.
    """
    src, _ = model.edge_arrays
    best = np.zeros(model.n_states)
    for xi in flow.points:
        out = np.bincount(src, edge_rates(model, xi), minlength=model.n_states)
        np.maximum(best, out, out=best)
    return safety * best


def simulate_inhomogeneous_tagged(
    model: MeanFieldModel,
    flow: Flow,
    T: float,
    seed,
    init_state,
    bounds: np.ndarray | None = None,
) -> TaggedPath:
    """One particle whose rates at time ``t`` are ``lambda(xi(t))`` for a prescribed flow.

    Candidate events are proposed at the constant rate ``bounds[z]`` of the
    current state and accepted with probability ``exit(t) / bounds[z]`` (thinning),
    which is exact for the interpolated flow. A candidate whose true exit
    rate exceeds the bound raises :class:`ThinningBoundError`.
    Per candidate the stream yields: holding time, acceptance, then (if
    accepted) the edge.
    """
    if T > flow.horizon + 1e-12:
        raise HorizonError(f"flow ends at {flow.horizon}, simulation requested to {T}")
    rng = _stream(seed)
    z = model.index(init_state)
    if bounds is None:
        bounds = exit_rate_bounds(model, flow)
    src, dst = model.edge_arrays
    out_edges = [np.flatnonzero(src == s) for s in range(model.n_states)]
    times, states = [0.0], [z]
    t = 0.0
    while True:
        b = bounds[z]
        if b <= 0.0:
            break
        t += rng.exponential(1.0 / b)
        if t > T:
            break
        u = rng.random()
        lam = edge_rates(model, flow.at(t))[out_edges[z]]
        total = lam.sum()
        if total > b:
            raise ThinningBoundError(
                f"exit rate {total:.6g} of state {model.labels[z]} at t={t:.6g} exceeds bound {b:.6g}"
            )
        if u * b >= total:
            continue
        k = int(np.searchsorted(np.cumsum(lam), rng.random() * total, side="right"))
        k = min(k, lam.size - 1)
        z = int(dst[out_edges[z][k]])
        times.append(t)
        states.append(z)
    return TaggedPath(0, np.array(times), np.array(states, dtype=np.int64))


def run_replicas(fn: Callable, args_list: Sequence[tuple], workers: int = 1) -> list:
    """Apply ``fn`` to every argument tuple; results come back in input order."""
    if workers <= 1 or len(args_list) <= 1:
        return [fn(*a) for a in args_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*args_list), chunksize=max(1, len(args_list) // (4 * workers))))


def replica_stream(seed: int, key) -> np.random.Generator:
    """Independent generator for replica ``key`` (an int or tuple of ints) of ``seed``."""
    return _stream(seed, key)
