"""Finite-state mean-field models.

A model is a directed, strongly connected transition graph on a finite state
space together with rate functions that depend on the current empirical
measure ``xi``. States are 0-based integers; labels are for presentation only.

Probability vectors are plain ``numpy`` arrays, validated by
:func:`simplex_point`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ModelEvaluationError, ValidationError

SUM_TOL = 1e-9
NEG_TOL = 1e-12


def simplex_point(weights, n_states: int | None = None) -> np.ndarray:
    """Validate ``weights`` as a probability vector and return a normalized copy.

    Components in ``[-1e-12, 0)`` are clipped to zero. A total mass outside
    ``[1 - 1e-9, 1 + 1e-9]`` is rejected rather than silently renormalized.
    """
    xi = np.array(weights, dtype=float).reshape(-1)
    if n_states is not None and xi.size != n_states:
        raise ValidationError(f"expected {n_states} components, got {xi.size}")
    if not np.all(np.isfinite(xi)):
        raise ValidationError(f"non-finite probability vector {xi}")
    if np.any(xi < -NEG_TOL):
        raise ValidationError(f"negative component in probability vector {xi}")
    xi = np.clip(xi, 0.0, None)
    total = xi.sum()
    if abs(total - 1.0) > SUM_TOL:
        raise ValidationError(f"probability vector sums to {total!r}, not 1")
    return xi / total


def tv_distance(p, q) -> float:
    """Total-variation distance: half the l1 distance."""
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())


@dataclass(frozen=True, eq=False)
class AffineExpRates:
    """Edge rates of the form ``const + lin @ xi + amp * exp(-expw @ xi)``.

    One row per edge. This family covers constant rates, rates linear in the
    occupation fractions and the exponential collision/success rates of the
    WLAN model; the particle simulator has a compiled path for it.
    """

    const: np.ndarray
    lin: np.ndarray
    amp: np.ndarray
    expw: np.ndarray

    def __post_init__(self):
        for name in ("const", "lin", "amp", "expw"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n_edges = self.const.shape[0]
        if self.amp.shape != (n_edges,) or self.lin.shape[0] != n_edges:
            raise ValidationError("rate coefficient arrays disagree on edge count")
        if self.expw.shape != self.lin.shape:
            raise ValidationError("lin and expw must have shape (n_edges, n_states)")

    def __call__(self, xi: np.ndarray) -> np.ndarray:
        return self.const + self.lin @ xi + self.amp * np.exp(-(self.expw @ xi))


@dataclass(frozen=True, eq=False)
class MeanFieldModel:
    """States, allowed transitions and mean-field rates.

    ``rates`` maps a probability vector to the array of edge rates, in the
    order of ``edges``. It must be finite and nonnegative on the closed
    simplex.
    """

    name: str
    labels: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    rates: Callable[[np.ndarray], np.ndarray]
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        labels = tuple(str(s) for s in self.labels)
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "edges", edges)
        if len(labels) < 2:
            raise ValidationError("a model needs at least two states")
        if any(not s for s in labels) or len(set(labels)) != len(labels):
            raise ValidationError(f"state labels must be unique and non-empty: {labels}")
        n = len(labels)
        if len(set(edges)) != len(edges):
            raise ValidationError("duplicate edge")
        for a, b in edges:
            if not (0 <= a < n and 0 <= b < n):
                raise ValidationError(f"edge ({a}, {b}) out of range")
            if a == b:
                raise ValidationError(f"self-loop at state {a}")
        if not edges:
            raise ValidationError("model has no edges")
        src, dst = self.edge_arrays
        adj = csr_matrix((np.ones(len(edges)), (src, dst)), shape=(n, n))
        n_comp, _ = connected_components(adj, directed=True, connection="strong")
        if n_comp != 1:
            raise ValidationError("transition graph is not strongly connected")

    @property
    def n_states(self) -> int:
        return len(self.labels)

    @cached_property
    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        e = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        e.setflags(write=False)
        return e[:, 0], e[:, 1]

    def index(self, label) -> int:
        if isinstance(label, (int, np.integer)):
            return int(label)
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise ValidationError(f"unknown state {label!r}") from None

    def point(self, weights) -> np.ndarray:
        """Probability vector from an array or a ``{label: weight}`` mapping."""
        if isinstance(weights, Mapping):
            xi = np.zeros(self.n_states)
            for k, v in weights.items():
                xi[self.index(k)] = v
            weights = xi
        return simplex_point(weights, self.n_states)

    def vertex(self, state) -> np.ndarray:
        xi = np.zeros(self.n_states)
        xi[self.index(state)] = 1.0
        return xi


def edge_rates(model: MeanFieldModel, xi) -> np.ndarray:
    """Evaluate all edge rates at ``xi``; raise on negative or non-finite values."""
    xi = np.asarray(xi, dtype=float)
    lam = np.asarray(model.rates(xi), dtype=float)
    if lam.shape != (len(model.edges),):
        raise ModelEvaluationError(
            f"rate function of {model.name!r} returned shape {lam.shape}, "
            f"expected ({len(model.edges)},)"
        )
    bad = ~np.isfinite(lam) | (lam < 0)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise ModelEvaluationError(
            f"rate on edge {model.edges[k]} of {model.name!r} is {lam[k]!r} at xi={xi.tolist()}"
        )
    return lam


def build_rate_matrix(model: MeanFieldModel, xi) -> np.ndarray:
    """Generator of a single particle when the empirical measure is frozen at ``xi``.

    Off-diagonal ``(z, z')`` holds the edge rate (0 off the graph); the
    diagonal is the negated row sum.
    """
    lam = edge_rates(model, xi)
    src, dst = model.edge_arrays
    Q = np.zeros((model.n_states, model.n_states))
    Q[src, dst] = lam
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def drift(model: MeanFieldModel, xi) -> np.ndarray:
    """McKean-Vlasov vector field: inflow minus outflow of probability at each state."""
    xi = np.asarray(xi, dtype=float)
    lam = edge_rates(model, xi)
    src, dst = model.edge_arrays
    flux = xi[src] * lam
    n = model.n_states
    return np.bincount(dst, flux, minlength=n) - np.bincount(src, flux, minlength=n)


# --- built-in models -------------------------------------------------------


def wlan_model(c: Sequence[float]) -> MeanFieldModel:
    """Continuous-time caricature of the back-off MAC with attempt rates ``c``.

    State ``i < K`` moves to ``i + 1`` on collision at rate
    ``c_i * (1 - exp(-<c, xi>))``; every state ``i >= 1`` returns to 0 on
    success at rate ``c_i * exp(-<c, xi>)``. State K has only the return edge.
    """
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.size < 2:
        raise ValidationError("WLAN model needs K >= 1, i.e. at least two attempt rates")
    if not np.all(np.isfinite(c)) or np.any(c <= 0):
        raise ValidationError(f"attempt rates must be positive, got {c.tolist()}")
    K = c.size - 1
    edges = [(i, i + 1) for i in range(K)] + [(i, 0) for i in range(1, K + 1)]
    n_edges = len(edges)
    const = np.zeros(n_edges)
    amp = np.zeros(n_edges)
    for k, (i, j) in enumerate(edges):
        if j == i + 1:
            const[k], amp[k] = c[i], -c[i]
        else:
            amp[k] = c[i]
    rates = AffineExpRates(
        const=const,
        lin=np.zeros((n_edges, K + 1)),
        amp=amp,
        expw=np.tile(c, (n_edges, 1)),
    )
    labels = tuple(str(i) for i in range(K + 1))
    return MeanFieldModel("wlan", labels, tuple(edges), rates, {"c": c.tolist()})


def sis_model(tau: float, rho: float) -> MeanFieldModel:
    """Susceptible/infected model: S->I at ``tau * xi(I)``, I->S at ``rho``."""
    if not (np.isfinite(tau) and tau > 0 and np.isfinite(rho) and rho > 0):
        raise ValidationError(f"SIS rates must be positive, got tau={tau}, rho={rho}")
    rates = AffineExpRates(
        const=[0.0, rho],
        lin=[[0.0, tau], [0.0, 0.0]],
        amp=[0.0, 0.0],
        expw=np.zeros((2, 2)),
    )
    return MeanFieldModel(
        "sis", ("S", "I"), ((0, 1), (1, 0)), rates, {"tau": float(tau), "rho": float(rho)}
    )


def constant_rate_model(Q, labels=None, name="constant") -> MeanFieldModel:
    """Model whose rates ignore the mean field; edges are the positive off-diagonals of ``Q``."""
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    edges = [(i, j) for i in range(n) for j in range(n) if i != j and Q[i, j] > 0]
    rates = AffineExpRates(
        const=[Q[i, j] for i, j in edges],
        lin=np.zeros((len(edges), n)),
        amp=np.zeros(len(edges)),
        expw=np.zeros((len(edges), n)),
    )
    labels = labels or tuple(str(i) for i in range(n))
    return MeanFieldModel(name, tuple(labels), tuple(edges), rates)


RATE_KINDS = ("constant", "linear", "collision", "success")


def custom_model(labels: Sequence[str], edge_specs: Sequence[Mapping], name="custom") -> MeanFieldModel:
    """Build a model from an edge table.

    Each entry has ``from`` and ``to`` (labels) and a ``kind``:

    ``constant``
        ``value``.
    ``linear``
        ``coef * xi(of) + offset``; ``offset`` defaults to 0.
    ``collision`` / ``success``
        ``attempt * (1 - exp(-<weights, xi>))`` and
        ``attempt * exp(-<weights, xi>)`` respectively.
    """
    labels = tuple(str(s) for s in labels)
    n = len(labels)
    pos = {s: i for i, s in enumerate(labels)}

    def lookup(key, spec):
        v = spec.get(key)
        if v not in pos:
            raise ValidationError(f"edge entry {dict(spec)}: unknown state in {key!r}")
        return pos[v]

    allowed = {
        "constant": {"value"},
        "linear": {"coef", "of", "offset"},
        "collision": {"attempt", "weights"},
        "success": {"attempt", "weights"},
    }
    edges, const, lin, amp, expw = [], [], [], [], []
    for spec in edge_specs:
        kind = spec.get("kind")
        if kind not in allowed:
            raise ValidationError(f"edge kind must be one of {RATE_KINDS}, got {kind!r}")
        extra = set(spec) - allowed[kind] - {"from", "to", "kind"}
        if extra:
            raise ValidationError(f"unknown key(s) {sorted(extra)} for {kind} edge")
        edges.append((lookup("from", spec), lookup("to", spec)))
        row_lin, row_w = np.zeros(n), np.zeros(n)
        a = d = 0.0
        try:
            if kind == "constant":
                a = float(spec["value"])
                if a < 0:
                    raise ValidationError("constant rate must be nonnegative")
            elif kind == "linear":
                a = float(spec.get("offset", 0.0))
                row_lin[lookup("of", spec)] = float(spec["coef"])
                if a < 0 or a + row_lin.min() < 0:
                    raise ValidationError("linear rate must be nonnegative on the simplex")
            else:
                attempt = float(spec["attempt"])
                row_w[:] = np.asarray(spec["weights"], dtype=float)
                if attempt < 0 or row_w.shape != (n,) or np.any(row_w < 0):
                    raise ValidationError(f"bad {kind} edge parameters")
                a, d = (attempt, -attempt) if kind == "collision" else (0.0, attempt)
        except KeyError as exc:
            raise ValidationError(f"{kind} edge missing key {exc.args[0]!r}") from None
        const.append(a)
        amp.append(d)
        lin.append(row_lin)
        expw.append(row_w)
    rates = AffineExpRates(
        const=const, lin=np.reshape(lin, (-1, n)), amp=amp, expw=np.reshape(expw, (-1, n))
    )
    return MeanFieldModel(name, labels, tuple(edges), rates, {"edges": [dict(s) for s in edge_specs]})
