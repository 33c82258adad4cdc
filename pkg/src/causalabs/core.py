"""Finite variables, stochastic channels and causal models over DAGs.

A channel is a column-stochastic matrix: rows index the codomain, columns
the domain. Product objects are flattened mixed-radix with the first factor
most significant, which is also numpy's C order, so ``np.kron`` and
``reshape`` agree with :class:`IndexScheme` throughout.
"""

from __future__ import annotations

import graphlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_TOL = 1e-9
DEFAULT_STATE_CAP = 10**7


class CycleError(ValueError):
    def __init__(self, cycle):
        self.cycle = tuple(cycle)
        super().__init__("graph has a cycle: " + " -> ".join(map(str, self.cycle)))


class ArityMismatch(ValueError):
    pass


class StateSpaceOverflow(ValueError):
    pass


@dataclass(frozen=True)
class VariableSpec:
    name: str
    values: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(str(v) for v in self.values))
        if not self.values:
            raise ValueError(f"variable {self.name!r} needs at least one value")
        if len(set(self.values)) != len(self.values):
            raise ValueError(f"variable {self.name!r} has duplicate value labels")

    @property
    def arity(self) -> int:
        return len(self.values)

    def index(self, label: str) -> int:
        try:
            return self.values.index(label)
        except ValueError:
            raise KeyError(f"{label!r} is not a value of {self.name!r}") from None

    @classmethod
    def with_arity(cls, name: str, arity: int) -> "VariableSpec":
        return cls(name, tuple(str(k) for k in range(arity)))


@dataclass(frozen=True)
class IndexScheme:
    """Mixed-radix flattening of a product of finite sets.

    >>> s = IndexScheme((2, 3))
    >>> s.encode((1, 2))
    5
    >>> s.decode(5)
    (1, 2)
    """

    arities: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "arities", tuple(int(a) for a in self.arities))
        if any(a < 1 for a in self.arities):
            raise ValueError("arities must be positive")

    @property
    def size(self) -> int:
        return math.prod(self.arities)

    def encode(self, digits: Sequence[int]) -> int:
        if len(digits) != len(self.arities):
            raise ArityMismatch("digit count does not match the scheme")
        if not self.arities:
            return 0
        return int(np.ravel_multi_index(tuple(digits), self.arities))

    def decode(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.size:
            raise IndexError(index)
        if not self.arities:
            return ()
        return tuple(int(d) for d in np.unravel_index(index, self.arities))


@dataclass(frozen=True, eq=False)
class StochasticChannel:
    """A morphism of finite sets given by a ``codomain x domain`` matrix.

    Construction only checks the shape; stochasticity is checked by
    :meth:`violations` so that invalid models can still be loaded and
    reported on.
    """

    entries: np.ndarray

    def __post_init__(self):
        arr = np.array(self.entries, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"channel entries must be a non-empty 2-d grid, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def codomain_arity(self) -> int:
        return self.entries.shape[0]

    @property
    def domain_arity(self) -> int:
        return self.entries.shape[1]

    def column(self, j: int) -> np.ndarray:
        return self.entries[:, j]

    def violations(self, tol: float = DEFAULT_TOL) -> list[tuple[str, int, float]]:
        """``(kind, column, value)`` for negative entries and bad column sums."""
        out = []
        cols = self.entries.sum(axis=0)
        for j in range(self.domain_arity):
            low = self.entries[:, j].min()
            if low < -tol:
                out.append(("negative", j, float(low)))
            if abs(cols[j] - 1.0) > tol:
                out.append(("sum", j, float(cols[j])))
        return out

    def is_stochastic(self, tol: float = DEFAULT_TOL) -> bool:
        return not self.violations(tol)

    def is_permutation(self, tol: float = DEFAULT_TOL) -> bool:
        e = self.entries
        if e.shape[0] != e.shape[1]:
            return False
        big = e >= 1.0 - tol
        small = np.abs(e) <= tol
        return bool(
            np.all(big | small)
            and np.all(big.sum(axis=0) == 1)
            and np.all(big.sum(axis=1) == 1)
        )

    def allclose(self, other: "StochasticChannel", tol: float = DEFAULT_TOL) -> bool:
        return self.entries.shape == other.entries.shape and max_deviation(self, other) <= tol

    def __eq__(self, other):
        if not isinstance(other, StochasticChannel):
            return NotImplemented
        return self.entries.shape == other.entries.shape and bool(np.all(self.entries == other.entries))

    __hash__ = None

    def __repr__(self):
        return f"StochasticChannel({self.entries.tolist()!r})"

    @classmethod
    def identity(cls, n: int) -> "StochasticChannel":
        return cls(np.eye(n))

    @classmethod
    def from_function(cls, table: Sequence[int], codomain_arity: int) -> "StochasticChannel":
        """0/1 channel with a one at ``(table[j], j)`` for every column ``j``."""
        m = np.zeros((codomain_arity, len(table)))
        m[np.asarray(table, dtype=int), np.arange(len(table))] = 1.0
        return cls(m)


def max_deviation(a: StochasticChannel, b: StochasticChannel) -> float:
    if a.entries.shape != b.entries.shape:
        raise ArityMismatch(f"cannot compare shapes {a.entries.shape} and {b.entries.shape}")
    return float(np.max(np.abs(a.entries - b.entries)))


@dataclass(frozen=True, eq=False)
class Distribution:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size < 1:
            raise ValueError("distribution must have at least one outcome")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def arity(self) -> int:
        return self.weights.size

    def total(self) -> float:
        return float(self.weights.sum())

    def is_normalized(self, tol: float = DEFAULT_TOL) -> bool:
        return bool(self.weights.min() >= -tol and abs(self.total() - 1.0) <= tol)

    def as_channel(self) -> StochasticChannel:
        return StochasticChannel(self.weights.reshape(-1, 1))

    def __eq__(self, other):
        if not isinstance(other, Distribution):
            return NotImplemented
        return self.weights.shape == other.weights.shape and bool(np.all(self.weights == other.weights))

    __hash__ = None

    def __repr__(self):
        return f"Distribution({self.weights.tolist()!r})"


def point_mass(arity: int, index: int) -> Distribution:
    w = np.zeros(arity)
    w[index] = 1.0
    return Distribution(w)


def uniform(arity: int) -> Distribution:
    return Distribution(np.full(arity, 1.0 / arity))


@dataclass(frozen=True)
class Dag:
    """Vertices in a fixed order, each with an ordered parent tuple.

    Raises :class:`CycleError` on construction if the graph is cyclic.
    """

    vertices: tuple[str, ...]
    parents: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        verts = tuple(self.vertices)
        if len(set(verts)) != len(verts):
            raise ValueError("duplicate vertex names")
        pa = {v: tuple(self.parents.get(v, ())) for v in verts}
        extra = set(self.parents) - set(verts)
        if extra:
            raise ValueError(f"parents given for unknown vertices {sorted(extra)}")
        for v, ps in pa.items():
            if len(set(ps)) != len(ps):
                raise ValueError(f"duplicate parent of {v!r}")
            for p in ps:
                if p not in pa:
                    raise ValueError(f"unknown parent {p!r} of {v!r}")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "parents", _FrozenDict(pa))
        try:
            order = tuple(graphlib.TopologicalSorter(
                {v: pa[v] for v in verts}).static_order())
        except graphlib.CycleError as exc:
            raise CycleError(exc.args[1]) from None
        object.__setattr__(self, "_topo", order)

    @classmethod
    def from_edges(cls, vertices: Iterable[str], edges: Iterable[tuple[str, str]]) -> "Dag":
        verts = tuple(vertices)
        pa: dict[str, list[str]] = {v: [] for v in verts}
        for p, c in edges:
            if c not in pa:
                raise ValueError(f"edge into unknown vertex {c!r}")
            if p not in pa[c]:
                pa[c].append(p)
        return cls(verts, {v: tuple(ps) for v, ps in pa.items()})

    @property
    def edges(self) -> frozenset[tuple[str, str]]:
        return frozenset((p, v) for v in self.vertices for p in self.parents[v])

    def topological_order(self) -> tuple[str, ...]:
        return self._topo

    def children(self, v: str) -> tuple[str, ...]:
        return tuple(c for c in self.vertices if v in self.parents[c])

    def index(self, v: str) -> int:
        return self.vertices.index(v)

    def without_parents(self, cut: Iterable[str]) -> "Dag":
        cut = set(cut)
        return Dag(self.vertices, {v: (() if v in cut else ps) for v, ps in self.parents.items()})

    def __len__(self):
        return len(self.vertices)


class _FrozenDict(dict):
    """Hashable read-only dict so that frozen dataclasses stay hashable."""

    def __hash__(self):
        return hash(tuple(sorted(self.items())))

    def _readonly(self, *a, **kw):
        raise TypeError("read-only mapping")

    __setitem__ = __delitem__ = update = pop = popitem = setdefault = clear = _readonly


@dataclass(frozen=True, eq=False)
class CausalModel:
    dag: Dag
    variables: Mapping[str, VariableSpec]
    mechanisms: Mapping[str, StochasticChannel]
    presets: Mapping[str, Mapping[str, Distribution]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "variables", _FrozenDict(self.variables))
        object.__setattr__(self, "mechanisms", _FrozenDict(self.mechanisms))
        object.__setattr__(self, "presets", _FrozenDict(
            {v: _FrozenDict(p) for v, p in self.presets.items()}))

    @property
    def vertices(self) -> tuple[str, ...]:
        return self.dag.vertices

    def arity(self, v: str) -> int:
        return self.variables[v].arity

    def arities(self, vertices: Iterable[str] | None = None) -> tuple[int, ...]:
        vs = self.vertices if vertices is None else vertices
        return tuple(self.arity(v) for v in vs)

    def parent_arity(self, v: str) -> int:
        return math.prod(self.arity(p) for p in self.dag.parents[v])

    def scheme(self) -> IndexScheme:
        return IndexScheme(self.arities())

    def state_count(self) -> int:
        return math.prod(self.arities())

    def preset(self, v: str, name: str) -> Distribution:
        try:
            return self.presets[v][name]
        except KeyError:
            raise KeyError(f"no preset {name!r} for {v!r}") from None


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    def __bool__(self):
        return self.ok


def validate_model(model: CausalModel, tol: float = DEFAULT_TOL) -> ValidationReport:
    """Collect every violated invariant of ``model``; empty iff valid."""
    issues = []
    if not model.vertices:
        issues.append("model has no variables")
    for v in model.vertices:
        if v not in model.variables:
            issues.append(f"vertex {v} has no variable spec")
            continue
        if model.variables[v].name != v:
            issues.append(f"vertex {v} carries variable spec named {model.variables[v].name}")
        mech = model.mechanisms.get(v)
        if mech is None:
            issues.append(f"vertex {v} has no mechanism")
            continue
        if any(p not in model.variables for p in model.dag.parents[v]):
            continue
        want_dom = model.parent_arity(v)
        if mech.domain_arity != want_dom:
            issues.append(f"mechanism {v}: domain arity {mech.domain_arity} ≠ {want_dom}")
        if mech.codomain_arity != model.arity(v):
            issues.append(f"mechanism {v}: codomain arity {mech.codomain_arity} ≠ {model.arity(v)}")
        for kind, j, val in mech.violations(tol):
            if kind == "sum":
                issues.append(f"column {j} of mechanism {v} sums to {val:.12g}")
            else:
                issues.append(f"column {j} of mechanism {v} has negative entry {val:.12g}")
    for v in set(model.mechanisms) - set(model.vertices):
        issues.append(f"mechanism given for unknown vertex {v}")
    for v, named in model.presets.items():
        if v not in model.variables:
            issues.append(f"preset given for unknown vertex {v}")
            continue
        for name, d in named.items():
            if d.arity != model.arity(v):
                issues.append(f"preset {v}@{name}: arity {d.arity} ≠ {model.arity(v)}")
            elif not d.is_normalized(tol):
                issues.append(f"preset {v}@{name} is not a distribution (total {d.total():.12g})")
    return ValidationReport(tuple(issues))


def compose_channels(g: StochasticChannel, f: StochasticChannel) -> StochasticChannel:
    """``g ∘ f``: first ``f``, then ``g``."""
    if f.codomain_arity != g.domain_arity:
        raise ArityMismatch(
            f"cannot compose: f has codomain {f.codomain_arity}, g has domain {g.domain_arity}")
    return StochasticChannel(g.entries @ f.entries)


def tensor_product(f: StochasticChannel, g: StochasticChannel) -> StochasticChannel:
    return StochasticChannel(np.kron(f.entries, g.entries))


def tensor_all(channels: Iterable[StochasticChannel]) -> StochasticChannel:
    out = StochasticChannel([[1.0]])
    for c in channels:
        out = tensor_product(out, c)
    return out


def push(channel: StochasticChannel, dist: Distribution) -> Distribution:
    if channel.domain_arity != dist.arity:
        raise ArityMismatch(f"channel domain {channel.domain_arity} ≠ distribution arity {dist.arity}")
    return Distribution(channel.entries @ dist.weights)


def _check_cap(n: int, cap: int | None):
    if cap is not None and n > cap:
        raise StateSpaceOverflow(f"{n} joint states exceed the cap of {cap}")


def joint_tensor(model: CausalModel, state_cap: int | None = DEFAULT_STATE_CAP) -> np.ndarray:
    """Joint probabilities as an array with one axis per vertex, in model order."""
    shape = model.arities()
    _check_cap(math.prod(shape), state_cap)
    n = len(shape)
    joint = np.ones(shape)
    pos = {v: k for k, v in enumerate(model.vertices)}
    # fixed multiplication order (topological) keeps results bit-stable
    for v in model.dag.topological_order():
        pars = model.dag.parents[v]
        cpt = model.mechanisms[v].entries.reshape((model.arity(v),) + model.arities(pars))
        axes = [pos[v]] + [pos[p] for p in pars]
        order = np.argsort(axes)
        cpt = cpt.transpose(order)
        bshape = [1] * n
        for a in axes:
            bshape[a] = shape[a]
        joint = joint * cpt.reshape(bshape)
    return joint


def joint_distribution(model: CausalModel, state_cap: int | None = DEFAULT_STATE_CAP) -> Distribution:
    return Distribution(joint_tensor(model, state_cap).reshape(-1))


def marginal(joint: Distribution, scheme: IndexScheme, keep: Iterable[int]) -> Distribution:
    """Sum out every factor not in ``keep``; kept factors stay in scheme order."""
    keep = sorted(set(keep))
    if any(not 0 <= k < len(scheme.arities) for k in keep):
        raise IndexError(f"keep {keep} outside factors of {scheme.arities}")
    if joint.arity != scheme.size:
        raise ArityMismatch(f"joint has {joint.arity} states, scheme has {scheme.size}")
    t = joint.weights.reshape(scheme.arities) if scheme.arities else joint.weights.reshape(())
    drop = tuple(k for k in range(len(scheme.arities)) if k not in keep)
    return Distribution(np.asarray(t.sum(axis=drop)).reshape(-1))


def apply_intervention(model: CausalModel, targets: Mapping[str, Distribution]) -> CausalModel:
    """Replace each targeted mechanism by an input-free intervened state."""
    for v, d in targets.items():
        if v not in model.variables:
            raise KeyError(f"unknown vertex {v!r}")
        if d.arity != model.arity(v):
            raise ArityMismatch(f"intervention on {v}: arity {d.arity} ≠ {model.arity(v)}")
    if not targets:
        return model
    mechs = dict(model.mechanisms)
    for v, d in targets.items():
        mechs[v] = d.as_channel()
    return CausalModel(model.dag.without_parents(targets), model.variables, mechs, model.presets)
